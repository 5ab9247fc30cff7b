#ifndef MMFP_PRECONDITION_HPP
#define MMFP_PRECONDITION_HPP

#include <chrono>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mmfp/krylov.hpp"
#include "mmfp/mmf.hpp"
#include "mmfp/wavelet.hpp"
#include "mmfp/wspai.hpp"

namespace mmfp {

enum class PreconditionerKind { none, ctw, hc, mmf };

inline std::string_view to_string(PreconditionerKind k)
{
    switch (k) {
    case PreconditionerKind::none: return "none";
    case PreconditionerKind::ctw: return "ctw";
    case PreconditionerKind::hc: return "hc";
    case PreconditionerKind::mmf: return "mmf";
    }
    return "?";
}

inline std::optional<PreconditionerKind> parse_preconditioner_kind(std::string_view s)
{
    if (s == "none") return PreconditionerKind::none;
    if (s == "ctw") return PreconditionerKind::ctw;
    if (s == "hc") return PreconditionerKind::hc;
    if (s == "mmf") return PreconditionerKind::mmf;
    return std::nullopt;
}

struct WaveletOptions {
    int taps = 4;
    int levels = 8;
    /// Tensor dimension of the transform; the matrix order must be a perfect power.
    int dims = 1;
    /// Uniform CTW block size; unset selects one block per wavelet band.
    std::optional<Index> block_size;
    /// Largest admissible relative growth of each grid axis when padding to a dyadic multiple.
    double max_padding = 0.125;
};

//
// Grid on which a wavelet basis is laid out.  A matrix whose axis length is
// not divisible by 2^levels is embedded into a slightly larger grid, padding
// each axis at its end; padded unknowns are decoupled and carry the mean
// diagonal of A, so the embedded system restricts exactly to the original.
//
struct WaveletLayout {
    int dims = 1;
    Index inner = 0;
    Index padded = 0;
    int levels = 0;
    bool levels_clamped = false;

    Index inner_size() const { return ipow(inner); }
    Index padded_size() const { return ipow(padded); }
    bool is_padded() const { return padded != inner; }

private:
    Index ipow(Index len) const
    {
        Index s = 1;
        for (int d = 0; d < dims; ++d) {
            s *= len;
        }
        return s;
    }
};

inline Index integer_root(Index n, int dims)
{
    Index r = static_cast<Index>(std::llround(std::pow(static_cast<double>(n), 1.0 / dims)));
    for (Index c = std::max<Index>(1, r - 1); c <= r + 1; ++c) {
        Index p = 1;
        for (int d = 0; d < dims; ++d) {
            p *= c;
        }
        if (p == n) {
            return c;
        }
    }
    throw DimensionError("matrix order " + std::to_string(n) + " is not a " + std::to_string(dims)
                         + "-dimensional tensor grid");
}

/// Most levels (up to `requested`) whose dyadic padding stays within max_padding.
inline WaveletLayout choose_wavelet_layout(Index n, int dims, int requested, double max_padding = 0.125)
{
    if (dims < 1 || dims > 3 || requested < 0) {
        throw std::invalid_argument("choose_wavelet_layout: dims must be 1..3 and levels non-negative");
    }
    WaveletLayout out;
    out.dims = dims;
    out.inner = integer_root(n, dims);
    const int cap = std::min(requested, static_cast<int>(std::bit_width(static_cast<std::uint64_t>(out.inner))) - 1);
    for (int l = std::max(cap, 0); l >= 0; --l) {
        const Index unit = Index{1} << l;
        const Index padded = (out.inner + unit - 1) / unit * unit;
        if (static_cast<double>(padded) <= static_cast<double>(out.inner) * (1.0 + max_padding)) {
            out.levels = l;
            out.padded = padded;
            break;
        }
    }
    out.levels_clamped = out.levels < requested;
    return out;
}

/// Index of each original unknown within the padded grid.
inline IndexSet embedding_map(const WaveletLayout& layout)
{
    IndexSet map(layout.inner_size());
    for (Index i = 0; i < layout.inner_size(); ++i) {
        Index rest = i;
        Index target = 0;
        Index stride = 1;
        for (int d = 0; d < layout.dims; ++d) {
            target += (rest % layout.inner) * stride;
            rest /= layout.inner;
            stride *= layout.padded;
        }
        map[i] = target;
    }
    return map;
}

inline SparseSymMatrix embed_matrix(const SparseSymMatrix& a, const WaveletLayout& layout)
{
    if (!layout.is_padded()) {
        return a;
    }
    const IndexSet map = embedding_map(layout);
    const Index np = layout.padded_size();
    double diag_sum = 0.0;
    for (Index i = 0; i < a.n(); ++i) {
        diag_sum += a.coeff(i, i);
    }
    double fill = diag_sum / static_cast<double>(a.n());
    if (fill == 0.0) {
        fill = 1.0;
    }
    std::vector<char> used(np, 0);
    std::vector<Triplet> t;
    for (const auto& e : a.csr().triplets()) {
        t.push_back({map[e.row], map[e.col], e.value});
    }
    for (Index i : map) {
        used[i] = 1;
    }
    for (Index i = 0; i < np; ++i) {
        if (!used[i]) {
            t.push_back({i, i, fill});
        }
    }
    return SparseSymMatrix(CsrMatrix::from_triplets(np, np, std::move(t)));
}

struct SolveOptions {
    GmresOptions gmres;
    WaveletOptions wavelet;
    PmmfConfig pmmf;
};

namespace detail {

/// GMRES whose convergence test also requires the original system's residual within tol.
template <typename TrueResidual>
std::pair<Vector, SolveReport> gmres_to_true_tolerance(const LinearOperator& op, std::span<const double> rhs,
                                                       GmresOptions opts, TrueResidual true_residual)
{
    opts.true_residual = true_residual;
    return gmres(op, rhs, opts);
}

inline double seconds_since(std::chrono::steady_clock::time_point t0)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline void append_flag(std::vector<std::string>& flags, std::string f)
{
    if (std::find(flags.begin(), flags.end(), f) == flags.end()) {
        flags.push_back(std::move(f));
    }
}

} // namespace detail

//
// Solves A x = b with GMRES under the chosen preconditioner.  ctw and mmf
// are left preconditioners (P A x = P b).  hc iterates on W^T A M y = W^T b
// and returns x = M y.  The wavelet methods work on the padded grid when
// the layout requires it.  Convergence and true_relative_residual both refer
// to ||A x - b|| / ||b|| on the original system.
//
inline std::pair<Vector, SolveReport> solve_preconditioned(const SparseSymMatrix& a, std::span<const double> b,
                                                           PreconditionerKind kind, const SolveOptions& opts = {})
{
    require_dim(b.size(), static_cast<std::size_t>(a.n()), "solve_preconditioned rhs");
    using clock = std::chrono::steady_clock;
    const double bnorm = norm2(b);
    auto relative_residual = [&](std::span<const double> x) {
        const Vector ax = matvec(a, x);
        double rn = 0.0;
        for (Index i = 0; i < a.n(); ++i) {
            rn += (ax[i] - b[i]) * (ax[i] - b[i]);
        }
        return bnorm == 0.0 ? std::sqrt(rn) : std::sqrt(rn) / bnorm;
    };

    std::vector<std::string> flags;
    Vector x;
    SolveReport report;
    double setup = 0.0;
    auto t0 = clock::now();

    if (kind == PreconditionerKind::none) {
        std::tie(x, report) = detail::gmres_to_true_tolerance(make_operator(a), b, opts.gmres, relative_residual);
    } else if (kind == PreconditionerKind::mmf) {
        MmfPreconditioner p = make_mmf_preconditioner(pmmf(a, opts.pmmf));
        setup = detail::seconds_since(t0);
        for (const auto& f : p.factorization.flags) {
            detail::append_flag(flags, f);
        }
        for (const auto& f : p.flags) {
            detail::append_flag(flags, f);
        }
        LinearOperator op{a.n(), [&](std::span<const double> in, std::span<double> out) {
                              const Vector pv = apply_inverse(p, matvec(a, in));
                              std::copy(pv.begin(), pv.end(), out.begin());
                          }};
        const Vector rhs = apply_inverse(p, b);
        t0 = clock::now();
        std::tie(x, report) = detail::gmres_to_true_tolerance(op, rhs, opts.gmres, relative_residual);
    } else {
        const WaveletLayout layout =
            choose_wavelet_layout(a.n(), opts.wavelet.dims, opts.wavelet.levels, opts.wavelet.max_padding);
        if (layout.levels_clamped) {
            detail::append_flag(flags, "levels_clamped");
        }
        if (layout.is_padded()) {
            detail::append_flag(flags, "grid_padded");
        }
        const SparseSymMatrix ap = embed_matrix(a, layout);
        const IndexSet map = embedding_map(layout);
        const WaveletBasis basis(opts.wavelet.taps, layout.levels, layout.padded, layout.dims);
        Vector bp(ap.n(), 0.0);
        for (Index i = 0; i < a.n(); ++i) {
            bp[map[i]] = b[i];
        }
        auto restrict_to = [&](std::span<const double> xp) {
            Vector out(a.n());
            for (Index i = 0; i < a.n(); ++i) {
                out[i] = xp[map[i]];
            }
            return out;
        };
        if (kind == PreconditionerKind::ctw) {
            const CtwPreconditioner p = opts.wavelet.block_size ? build_ctw(ap, basis, *opts.wavelet.block_size)
                                                                : build_ctw(ap, basis);
            setup = detail::seconds_since(t0);
            if (p.rank_deficient_blocks > 0) {
                detail::append_flag(flags, "rank_deficient_blocks");
            }
            LinearOperator op{ap.n(), [&](std::span<const double> in, std::span<double> out) {
                                  const Vector pv = apply_ctw(p, matvec(ap, in));
                                  std::copy(pv.begin(), pv.end(), out.begin());
                              }};
            const Vector rhs = apply_ctw(p, bp);
            t0 = clock::now();
            Vector xp;
            std::tie(xp, report) = detail::gmres_to_true_tolerance(
                op, rhs, opts.gmres, [&](std::span<const double> v) { return relative_residual(restrict_to(v)); });
            x = restrict_to(xp);
        } else {
            const HcPreconditioner p = build_hc(ap, basis);
            setup = detail::seconds_since(t0);
            if (p.rank_deficient_columns > 0) {
                detail::append_flag(flags, "rank_deficient_columns");
            }
            LinearOperator op{ap.n(), [&](std::span<const double> in, std::span<double> out) {
                                  Vector av = matvec(ap, matvec(p.m, in));
                                  forward_nd_inplace(p.basis, av);
                                  std::copy(av.begin(), av.end(), out.begin());
                              }};
            const Vector rhs = forward_nd(basis, bp);
            t0 = clock::now();
            Vector y;
            std::tie(y, report) = detail::gmres_to_true_tolerance(
                op, rhs, opts.gmres,
                [&](std::span<const double> v) { return relative_residual(restrict_to(matvec(p.m, v))); });
            x = restrict_to(matvec(p.m, y));
        }
    }
    report.solve_seconds = detail::seconds_since(t0);
    report.setup_seconds = setup;
    report.true_relative_residual = relative_residual(x);
    for (auto& f : flags) {
        detail::append_flag(report.flags, std::move(f));
    }
    return {std::move(x), std::move(report)};
}

} // namespace mmfp

#endif
