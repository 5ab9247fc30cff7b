// Benchmark driver: solve one system under several preconditioners, sweep a
// list of sources, or merge earlier result tables.
//
//   mmfbench solve  --problem lap2d --m 31 --precond none --precond mmf --out out/
//   mmfbench sweep  --problem lap1d:1023 --problem lap2d:31 --matrix a.mtx --out out/
//   mmfbench tables out1/ out2/ --out merged/
//
// Outputs under --out: results.csv, timings.csv, results.txt and
// residuals_<dataset>_<method>.csv.  MMFP_WORKERS sets the thread count.

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "mmfp/bench.hpp"

namespace {

using namespace mmfp;

struct Options {
    std::vector<std::string> problems;
    std::vector<std::string> matrices;
    Index m = 0;
    std::vector<std::string> precond;
    std::optional<double> tol;
    std::optional<Index> maxit;
    Index restart = 0;
    int taps = 4;
    int levels = 8;
    std::optional<int> wavelet_dims;
    std::optional<Index> block_size;
    Index core = 100;
    Index max_block = 2000;
    double wavelet_fraction = 0.5;
    std::uint64_t pmmf_seed = 1;
    std::uint64_t rhs_seed = 1;
    std::uint64_t trim_seed = 1;
    bool random_rhs = false;
    std::string out = "mmfbench_out";
};

void add_experiment_flags(CLI::App* cmd, Options& o, bool sweep)
{
    if (sweep) {
        cmd->add_option("--problem", o.problems, "Model problem as kind:m (lap1d, lap2d, lap3d, disc2d); repeatable");
        cmd->add_option("--matrix", o.matrices, "Matrix Market file; repeatable");
    } else {
        cmd->add_option("--problem", o.problems, "Model problem: lap1d, lap2d, lap3d or disc2d")->expected(1);
        cmd->add_option("--matrix", o.matrices, "Matrix Market file")->expected(1);
        cmd->add_option("--m", o.m, "Interior mesh points per dimension")->check(CLI::PositiveNumber);
    }
    cmd->add_option("--precond", o.precond, "Preconditioner (none, ctw, hc, mmf); repeatable, default per protocol");
    cmd->add_option("--tol", o.tol, "Relative residual tolerance (protocol default 1e-8 / 1e-4)");
    cmd->add_option("--maxit", o.maxit, "Iteration cap (protocol default 1000 / 500)");
    cmd->add_option("--restart", o.restart, "GMRES restart length, 0 for none");
    cmd->add_option("--taps", o.taps, "Daubechies filter taps")->check(CLI::IsMember({2, 4, 6, 8}));
    cmd->add_option("--levels", o.levels, "Wavelet levels");
    cmd->add_option("--wavelet-dims", o.wavelet_dims, "Wavelet tensor dimension (default: PDE dimension, 1 for files)");
    cmd->add_option("--block-size", o.block_size, "Uniform CTW block size (default: one block per band)");
    cmd->add_option("--core", o.core, "pMMF target core size");
    cmd->add_option("--max-block", o.max_block, "pMMF maximum cluster size");
    cmd->add_option("--wavelet-fraction", o.wavelet_fraction, "Fraction of each cluster retired per stage");
    cmd->add_option("--pmmf-seed", o.pmmf_seed, "pMMF seed");
    cmd->add_option("--rhs-seed", o.rhs_seed, "Seed of the random right-hand side");
    cmd->add_option("--trim-seed", o.trim_seed, "Seed of the p*2^s trimming");
    cmd->add_flag("--random-rhs", o.random_rhs, "Use a random right-hand side for model problems too");
    cmd->add_option("--out", o.out, "Output directory");
}

ExperimentConfig make_config(const Options& o, DataSource src)
{
    const auto protocols = default_protocols();
    const Protocol& p = src.problem ? protocols.model : protocols.ufl;
    ExperimentConfig c = ExperimentConfig::from_protocol(p, std::move(src));
    if (!o.precond.empty()) {
        c.preconditioners.clear();
        for (const auto& s : o.precond) {
            auto k = parse_preconditioner_kind(s);
            if (!k) {
                throw std::invalid_argument("unknown preconditioner '" + s + "'");
            }
            c.preconditioners.push_back(*k);
        }
    }
    if (o.tol) {
        c.tol = *o.tol;
    }
    if (o.maxit) {
        c.maxit = *o.maxit;
    }
    c.restart = o.restart;
    c.taps = o.taps;
    c.levels = o.levels;
    if (o.wavelet_dims) {
        c.wavelet_dims = *o.wavelet_dims;
    }
    c.block_size = o.block_size;
    c.pmmf.target_core = o.core;
    c.pmmf.max_block = o.max_block;
    c.pmmf.wavelet_fraction = o.wavelet_fraction;
    c.pmmf.seed = o.pmmf_seed;
    c.rhs_seed = o.rhs_seed;
    c.trim_seed = o.trim_seed;
    c.random_rhs = o.random_rhs;
    c.out_dir = o.out;
    return c;
}

DataSource parse_problem(const std::string& arg, Index fallback_m)
{
    const auto colon = arg.find(':');
    const std::string name = arg.substr(0, colon);
    auto kind = parse_problem_kind(name);
    if (!kind) {
        throw std::invalid_argument("unknown problem '" + name + "'");
    }
    Index m = fallback_m;
    if (colon != std::string::npos) {
        m = std::stoll(arg.substr(colon + 1));
    }
    if (m < 1) {
        throw std::invalid_argument("problem '" + name + "' needs a mesh size (--m or kind:m)");
    }
    return DataSource::model(*kind, m);
}

void run_and_write(const Options& o, const std::vector<DataSource>& sources)
{
    std::vector<ResultRow> rows;
    for (const auto& src : sources) {
        std::cerr << "running " << src.name() << "\n";
        rows.push_back(run_experiment(make_config(o, src)));
    }
    write_outputs(o.out, rows);
    std::cout << emit_tables(rows).text;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"MMF and wavelet preconditioned GMRES benchmark"};
    app.require_subcommand(1);

    Options solve_opts;
    auto* solve = app.add_subcommand("solve", "Run one experiment");
    add_experiment_flags(solve, solve_opts, false);

    Options sweep_opts;
    auto* sweep = app.add_subcommand("sweep", "Run experiments over several sources");
    add_experiment_flags(sweep, sweep_opts, true);

    std::vector<std::string> table_dirs;
    std::string table_out;
    auto* tables = app.add_subcommand("tables", "Merge results.csv/timings.csv from earlier runs");
    tables->add_option("dirs", table_dirs, "Output directories of earlier runs")->required();
    tables->add_option("--out", table_out, "Directory for the merged tables");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*solve) {
            const auto& o = solve_opts;
            if (o.problems.empty() == o.matrices.empty()) {
                throw std::invalid_argument("give exactly one of --problem or --matrix");
            }
            const DataSource src =
                o.problems.empty() ? DataSource::file(o.matrices.front()) : parse_problem(o.problems.front(), o.m);
            run_and_write(o, {src});
        } else if (*sweep) {
            const auto& o = sweep_opts;
            std::vector<DataSource> sources;
            for (const auto& p : o.problems) {
                sources.push_back(parse_problem(p, 0));
            }
            for (const auto& f : o.matrices) {
                sources.push_back(DataSource::file(f));
            }
            if (sources.empty()) {
                throw std::invalid_argument("sweep needs at least one --problem or --matrix");
            }
            run_and_write(o, sources);
        } else if (*tables) {
            std::vector<ResultRow> rows;
            for (const auto& d : table_dirs) {
                const std::filesystem::path dir(d);
                std::ifstream results(dir / "results.csv");
                if (!results) {
                    throw std::runtime_error("missing " + (dir / "results.csv").string());
                }
                std::ifstream timings(dir / "timings.csv");
                auto part = read_result_tables(results, timings ? &timings : nullptr);
                rows.insert(rows.end(), part.begin(), part.end());
            }
            const Tables t = emit_tables(rows);
            if (!table_out.empty()) {
                std::filesystem::create_directories(table_out);
                std::ofstream(std::filesystem::path(table_out) / "results.csv") << t.results_csv;
                std::ofstream(std::filesystem::path(table_out) / "timings.csv") << t.timings_csv;
                std::ofstream(std::filesystem::path(table_out) / "results.txt") << t.text;
            }
            std::cout << t.text;
        }
    } catch (const std::exception& e) {
        std::cerr << "mmfbench: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
