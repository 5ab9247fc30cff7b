// Factors a model matrix with pMMF, saves the factorization, reloads it and
// checks that the reloaded inverse undoes the factored operator.

#include <cmath>
#include <cstdio>
#include <sstream>

#include "mmfp.hpp"

int main()
{
    using namespace mmfp;
    const ModelProblem p = build_problem(ProblemKind::disc2d, 31);
    PmmfConfig cfg;
    cfg.target_core = 64;
    const MMFFactorization f = pmmf(p.matrix, cfg);
    std::printf("n=%lld  levels=%lld  stages=%zu  core=%zu  recorded error^2=%.4g  ||A||_F^2=%.4g\n",
                static_cast<long long>(f.n), static_cast<long long>(f.levels()), f.stage_ends.size(),
                f.h.core_indices.size(), f.recorded_error_sq,
                frobenius_norm(p.matrix) * frobenius_norm(p.matrix));

    std::stringstream buf;
    write_factorization(buf, f);
    const MMFFactorization g = read_factorization(buf);
    const MmfPreconditioner inv = make_mmf_preconditioner(g);

    const Vector v = p.rhs;
    const Vector back = apply_inverse(inv, apply_factored(f, v));
    double err = 0.0;
    for (Index i = 0; i < f.n; ++i) {
        err += (back[i] - v[i]) * (back[i] - v[i]);
    }
    std::printf("serialized %zu bytes; relative round-trip error %.2e\n", buf.str().size(),
                std::sqrt(err) / norm2(v));
    return 0;
}
