#ifndef MMFP_BENCH_HPP
#define MMFP_BENCH_HPP

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "mmfp/matrix_market.hpp"
#include "mmfp/precondition.hpp"
#include "mmfp/problems.hpp"

namespace mmfp {

//
// Parameter bundle of one experimental protocol.  Model problems use
// wavelets of the PDE's dimension; off-the-shelf matrices use 1D wavelets.
//
struct Protocol {
    double tol = 1e-8;
    Index maxit = 1000;
    int taps = 4;
    int levels = 8;
    bool pde_dim_wavelets = true;
    std::vector<PreconditionerKind> methods;
    PmmfConfig pmmf;

    int wavelet_dims(ProblemKind k) const { return pde_dim_wavelets ? problem_dims(k) : 1; }
};

struct DefaultProtocols {
    Protocol model;
    Protocol ufl;
};

inline DefaultProtocols default_protocols()
{
    DefaultProtocols p;
    p.model.tol = 1e-8;
    p.model.maxit = 1000;
    p.model.pde_dim_wavelets = true;
    p.model.methods = {PreconditionerKind::none, PreconditionerKind::ctw, PreconditionerKind::hc,
                       PreconditionerKind::mmf};
    p.ufl.tol = 1e-4;
    p.ufl.maxit = 500;
    p.ufl.pde_dim_wavelets = false;
    p.ufl.methods = {PreconditionerKind::none, PreconditionerKind::hc, PreconditionerKind::mmf};
    return p;
}

/// Either a generated model problem or a Matrix Market file.
struct DataSource {
    std::optional<ProblemKind> problem;
    Index mesh_size = 0;
    std::string matrix_path;

    static DataSource model(ProblemKind k, Index m) { return {k, m, {}}; }
    static DataSource file(std::string path) { return {std::nullopt, 0, std::move(path)}; }

    std::string name() const
    {
        if (problem) {
            return std::string(to_string(*problem)) + "_m" + std::to_string(mesh_size);
        }
        std::string stem = std::filesystem::path(matrix_path).stem().string();
        for (char& c : stem) {
            if (c == ',' || c == ' ' || c == '/') {
                c = '_';
            }
        }
        return stem;
    }
};

struct ExperimentConfig {
    DataSource source;
    std::vector<PreconditionerKind> preconditioners;
    double tol = 1e-8;
    Index maxit = 1000;
    Index restart = 0;
    int taps = 4;
    int levels = 8;
    /// Wavelet tensor dimension; unset means the PDE dimension for model problems and 1 otherwise.
    std::optional<int> wavelet_dims;
    std::optional<Index> block_size;
    PmmfConfig pmmf;
    std::uint64_t rhs_seed = 1;
    std::uint64_t trim_seed = 1;
    /// Model problems use their PDE right-hand side unless this is set.
    bool random_rhs = false;
    std::string out_dir;

    void validate() const
    {
        if (!(tol > 0.0)) {
            throw std::invalid_argument("ExperimentConfig: tol must be positive");
        }
        if (maxit < 1) {
            throw std::invalid_argument("ExperimentConfig: maxit must be at least 1");
        }
        if (levels < 0) {
            throw std::invalid_argument("ExperimentConfig: levels must be non-negative");
        }
        if (preconditioners.empty()) {
            throw std::invalid_argument("ExperimentConfig: no preconditioner selected");
        }
        if (!source.problem && source.matrix_path.empty()) {
            throw std::invalid_argument("ExperimentConfig: no problem or matrix given");
        }
        pmmf.validate();
    }

    static ExperimentConfig from_protocol(const Protocol& p, DataSource src)
    {
        ExperimentConfig c;
        c.tol = p.tol;
        c.maxit = p.maxit;
        c.taps = p.taps;
        c.levels = p.levels;
        c.preconditioners = p.methods;
        c.pmmf = p.pmmf;
        if (src.problem) {
            c.wavelet_dims = p.wavelet_dims(*src.problem);
        } else {
            c.wavelet_dims = 1;
        }
        c.source = std::move(src);
        return c;
    }
};

struct MethodResult {
    PreconditionerKind method = PreconditionerKind::none;
    SolveReport report;
    bool best = false;

    double total_seconds() const { return report.setup_seconds + report.solve_seconds; }
};

struct ResultRow {
    std::string dataset;
    Index n = 0;
    Index nnz = 0;
    /// Set when at least one method converged.
    bool shown = false;
    /// Dataset-level notes such as trimming or symmetrization.
    std::vector<std::string> flags;
    std::vector<MethodResult> methods;
};

/// Best method: fewest iterations among converged methods, ties to the smaller total time.
inline void mark_best(ResultRow& row)
{
    MethodResult* best = nullptr;
    for (auto& m : row.methods) {
        m.best = false;
        if (!m.report.converged) {
            continue;
        }
        if (!best || m.report.iterations < best->report.iterations
            || (m.report.iterations == best->report.iterations && m.total_seconds() < best->total_seconds())) {
            best = &m;
        }
    }
    if (best) {
        best->best = true;
    }
}

inline Vector standard_normal_vector(Index n, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, 1.0);
    Vector v(n);
    for (double& x : v) {
        x = dist(rng);
    }
    return v;
}

inline ResultRow run_experiment(const ExperimentConfig& config)
{
    config.validate();
    ResultRow row;
    row.dataset = config.source.name();

    const bool wavelets = std::any_of(config.preconditioners.begin(), config.preconditioners.end(), [](auto k) {
        return k == PreconditionerKind::ctw || k == PreconditionerKind::hc;
    });

    std::optional<SparseSymMatrix> matrix;
    Vector rhs;
    int dims = 1;
    if (config.source.problem) {
        ModelProblem p = build_problem(*config.source.problem, config.source.mesh_size);
        dims = config.wavelet_dims.value_or(p.dims());
        rhs = config.random_rhs ? standard_normal_vector(p.matrix.n(), config.rhs_seed) : std::move(p.rhs);
        matrix.emplace(std::move(p.matrix));
    } else {
        LoadedMatrix loaded = read_matrix_market(config.source.matrix_path);
        if (loaded.symmetrized) {
            row.flags.push_back("symmetrized");
        }
        dims = config.wavelet_dims.value_or(1);
        if (wavelets && pow2_trim_size(loaded.matrix.n()) != loaded.matrix.n()) {
            TrimResult t = trim_to_pow2(loaded.matrix, config.trim_seed);
            matrix.emplace(std::move(t.matrix));
            row.flags.push_back("trimmed");
        } else {
            matrix.emplace(std::move(loaded.matrix));
        }
        rhs = standard_normal_vector(matrix->n(), config.rhs_seed);
    }
    const SparseSymMatrix& a = *matrix;
    row.n = a.n();
    row.nnz = a.nnz();

    SolveOptions opts;
    opts.gmres.tol = config.tol;
    opts.gmres.maxit = config.maxit;
    opts.gmres.restart = config.restart;
    opts.wavelet.taps = config.taps;
    opts.wavelet.levels = config.levels;
    opts.wavelet.dims = dims;
    opts.wavelet.block_size = config.block_size;
    opts.pmmf = config.pmmf;

    for (PreconditionerKind k : config.preconditioners) {
        MethodResult m;
        m.method = k;
        m.report = solve_preconditioned(a, rhs, k, opts).second;
        row.shown = row.shown || m.report.converged;
        row.methods.push_back(std::move(m));
    }
    mark_best(row);
    return row;
}

namespace detail {

inline std::string join_flags(const std::vector<std::string>& flags)
{
    std::string out;
    for (const auto& f : flags) {
        if (!out.empty()) {
            out += ';';
        }
        out += f;
    }
    return out;
}

inline std::string fixed(double x, int digits)
{
    std::ostringstream s;
    s << std::fixed << std::setprecision(digits) << x;
    return s.str();
}

inline std::string scientific(double x)
{
    std::ostringstream s;
    s << std::scientific << std::setprecision(2) << x;
    return s.str();
}

inline std::string render_aligned(const std::vector<std::vector<std::string>>& cells)
{
    std::vector<std::size_t> width;
    for (const auto& r : cells) {
        width.resize(std::max(width.size(), r.size()), 0);
        for (std::size_t c = 0; c < r.size(); ++c) {
            width[c] = std::max(width[c], r[c].size());
        }
    }
    std::string out;
    for (std::size_t ri = 0; ri < cells.size(); ++ri) {
        std::string line;
        for (std::size_t c = 0; c < cells[ri].size(); ++c) {
            if (c > 0) {
                line += "  ";
            }
            line += cells[ri][c];
            if (c + 1 < cells[ri].size()) {
                line.append(width[c] - cells[ri][c].size(), ' ');
            }
        }
        out += line + '\n';
        if (ri == 0) {
            std::size_t total = 0;
            for (std::size_t c = 0; c < width.size(); ++c) {
                total += width[c] + (c > 0 ? 2 : 0);
            }
            out += std::string(total, '-') + '\n';
        }
    }
    return out;
}

} // namespace detail

struct Tables {
    /// dataset,n,nnz,shown,method,iterations,converged,true_relative_residual,flags
    std::string results_csv;
    /// dataset,method,setup_seconds,solve_seconds,total_seconds,best
    std::string timings_csv;
    std::string text;
};

inline constexpr const char* results_csv_header = "dataset,n,nnz,shown,method,iterations,converged,true_relative_residual,flags";
inline constexpr const char* timings_csv_header = "dataset,method,setup_seconds,solve_seconds,total_seconds,best";

//
// results_csv holds only run-to-run reproducible fields; wall-clock times
// and the best flag (whose tie-break uses time) go to timings_csv.  In the
// text tables a non-converged run reads DNC and the best method carries '*'.
//
inline Tables emit_tables(const std::vector<ResultRow>& rows)
{
    Tables t;
    std::ostringstream rc;
    std::ostringstream tc;
    rc << results_csv_header << '\n';
    tc << timings_csv_header << '\n';

    std::vector<PreconditionerKind> columns;
    for (const auto& r : rows) {
        for (const auto& m : r.methods) {
            if (std::find(columns.begin(), columns.end(), m.method) == columns.end()) {
                columns.push_back(m.method);
            }
        }
    }
    std::vector<std::vector<std::string>> iters{{"dataset", "n", "nnz"}};
    std::vector<std::vector<std::string>> times{{"dataset"}};
    for (auto k : columns) {
        iters[0].emplace_back(to_string(k));
        times[0].emplace_back(to_string(k));
    }

    for (const auto& r : rows) {
        std::vector<std::string> irow{r.dataset + (r.shown ? "" : " (hidden)"), std::to_string(r.n),
                                      std::to_string(r.nnz)};
        std::vector<std::string> trow{r.dataset};
        for (auto k : columns) {
            auto it = std::find_if(r.methods.begin(), r.methods.end(), [k](const auto& m) { return m.method == k; });
            if (it == r.methods.end()) {
                irow.emplace_back("-");
                trow.emplace_back("-");
                continue;
            }
            const auto& rep = it->report;
            std::vector<std::string> flags = r.flags;
            flags.insert(flags.end(), rep.flags.begin(), rep.flags.end());
            rc << r.dataset << ',' << r.n << ',' << r.nnz << ',' << (r.shown ? 1 : 0) << ',' << to_string(k) << ','
               << (rep.converged ? std::to_string(rep.iterations) : std::string()) << ',' << (rep.converged ? 1 : 0)
               << ',' << detail::format_double(rep.true_relative_residual) << ',' << detail::join_flags(flags)
               << '\n';
            tc << r.dataset << ',' << to_string(k) << ',' << detail::fixed(rep.setup_seconds, 6) << ','
               << detail::fixed(rep.solve_seconds, 6) << ',' << detail::fixed(it->total_seconds(), 6) << ','
               << (it->best ? 1 : 0) << '\n';
            const std::string mark = it->best ? "*" : "";
            irow.push_back((rep.converged ? std::to_string(rep.iterations) : std::string("DNC")) + mark);
            trow.push_back(detail::fixed(it->total_seconds(), 3) + mark);
        }
        iters.push_back(std::move(irow));
        times.push_back(std::move(trow));
    }
    t.results_csv = rc.str();
    t.timings_csv = tc.str();
    t.text = "GMRES iterations (* = best, DNC = no convergence)\n" + detail::render_aligned(iters)
             + "\nTotal time in seconds, setup + solve\n" + detail::render_aligned(times);
    return t;
}

inline std::string residual_csv_name(const std::string& dataset, PreconditionerKind k)
{
    return "residuals_" + dataset + "_" + std::string(to_string(k)) + ".csv";
}

/// iteration,relative_residual with one line per history entry.
inline std::string residual_csv(const SolveReport& rep)
{
    std::ostringstream s;
    s << "iteration,relative_residual\n";
    for (std::size_t i = 0; i < rep.residual_history.size(); ++i) {
        s << i << ',' << detail::format_double(rep.residual_history[i]) << '\n';
    }
    return s.str();
}

namespace detail {

inline void write_text(const std::filesystem::path& p, const std::string& content)
{
    std::ofstream out(p, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot write '" + p.string() + "'");
    }
    out << content;
}

} // namespace detail

/// Writes results.csv, timings.csv, results.txt and one residual CSV per method.
inline void write_outputs(const std::string& out_dir, const std::vector<ResultRow>& rows)
{
    const std::filesystem::path dir(out_dir);
    std::filesystem::create_directories(dir);
    const Tables t = emit_tables(rows);
    detail::write_text(dir / "results.csv", t.results_csv);
    detail::write_text(dir / "timings.csv", t.timings_csv);
    detail::write_text(dir / "results.txt", t.text);
    for (const auto& r : rows) {
        for (const auto& m : r.methods) {
            detail::write_text(dir / residual_csv_name(r.dataset, m.method), residual_csv(m.report));
        }
    }
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line)
{
    std::vector<std::string> out;
    std::string cell;
    std::istringstream s(line);
    while (std::getline(s, cell, ',')) {
        out.push_back(cell);
    }
    if (!line.empty() && line.back() == ',') {
        out.emplace_back();
    }
    return out;
}

inline std::vector<std::string> split_flags(const std::string& s)
{
    std::vector<std::string> out;
    std::string f;
    std::istringstream in(s);
    while (std::getline(in, f, ';')) {
        if (!f.empty()) {
            out.push_back(f);
        }
    }
    return out;
}

} // namespace detail

//
// Rebuilds result rows from a results.csv and (optionally) the matching
// timings.csv.  Dataset-level flags are folded into each method's flags.
//
inline std::vector<ResultRow> read_result_tables(std::istream& results, std::istream* timings = nullptr)
{
    std::vector<ResultRow> rows;
    std::string line;
    if (!std::getline(results, line) || line != results_csv_header) {
        throw FormatError("results.csv: unexpected header");
    }
    while (std::getline(results, line)) {
        if (line.empty()) {
            continue;
        }
        const auto c = detail::split_csv_line(line);
        if (c.size() != 9) {
            throw FormatError("results.csv: expected 9 columns in '" + line + "'");
        }
        auto kind = parse_preconditioner_kind(c[4]);
        if (!kind) {
            throw FormatError("results.csv: unknown method '" + c[4] + "'");
        }
        if (rows.empty() || rows.back().dataset != c[0]) {
            ResultRow r;
            r.dataset = c[0];
            r.n = std::stoll(c[1]);
            r.nnz = std::stoll(c[2]);
            r.shown = c[3] == "1";
            rows.push_back(std::move(r));
        }
        MethodResult m;
        m.method = *kind;
        m.report.converged = c[6] == "1";
        m.report.iterations = c[5].empty() ? 0 : std::stoll(c[5]);
        m.report.true_relative_residual = std::stod(c[7]);
        m.report.flags = detail::split_flags(c[8]);
        rows.back().methods.push_back(std::move(m));
    }
    if (timings) {
        if (!std::getline(*timings, line) || line != timings_csv_header) {
            throw FormatError("timings.csv: unexpected header");
        }
        while (std::getline(*timings, line)) {
            if (line.empty()) {
                continue;
            }
            const auto c = detail::split_csv_line(line);
            if (c.size() != 6) {
                throw FormatError("timings.csv: expected 6 columns in '" + line + "'");
            }
            for (auto& r : rows) {
                if (r.dataset != c[0]) {
                    continue;
                }
                for (auto& m : r.methods) {
                    if (to_string(m.method) == c[1]) {
                        m.report.setup_seconds = std::stod(c[2]);
                        m.report.solve_seconds = std::stod(c[3]);
                    }
                }
            }
        }
    }
    for (auto& r : rows) {
        mark_best(r);
    }
    return rows;
}

} // namespace mmfp

#endif
