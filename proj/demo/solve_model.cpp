// Solves one model problem with every preconditioner and prints the iteration counts.
//
//   demo_solve_model [lap1d|lap2d|lap3d|disc2d] [m]

#include <cstdio>
#include <string>

#include "mmfp.hpp"

int main(int argc, char** argv)
{
    using namespace mmfp;
    const std::string kind_name = argc > 1 ? argv[1] : "lap2d";
    const Index m = argc > 2 ? std::stoll(argv[2]) : 31;
    const auto kind = parse_problem_kind(kind_name);
    if (!kind) {
        std::fprintf(stderr, "unknown problem '%s'\n", kind_name.c_str());
        return 1;
    }
    const ModelProblem p = build_problem(*kind, m);
    std::printf("%s, m=%lld: n=%lld, nnz=%lld\n", kind_name.c_str(), static_cast<long long>(m),
                static_cast<long long>(p.matrix.n()), static_cast<long long>(p.matrix.nnz()));

    SolveOptions opts;
    opts.wavelet.dims = p.dims();
    for (auto k : {PreconditionerKind::none, PreconditionerKind::ctw, PreconditionerKind::hc, PreconditionerKind::mmf}) {
        const auto [x, rep] = solve_preconditioned(p.matrix, p.rhs, k, opts);
        std::printf("  %-5s %6s iterations  true residual %.2e  setup %.3f s  solve %.3f s\n",
                    std::string(to_string(k)).c_str(),
                    rep.converged ? std::to_string(rep.iterations).c_str() : "DNC", rep.true_relative_residual,
                    rep.setup_seconds, rep.solve_seconds);
    }
    return 0;
}
