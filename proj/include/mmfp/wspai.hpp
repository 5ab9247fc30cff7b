#ifndef MMFP_WSPAI_HPP
#define MMFP_WSPAI_HPP

#include <algorithm>
#include <map>
#include <numeric>
#include <span>
#include <tuple>
#include <vector>

#include <Eigen/Dense>

#include "mmfp/parallel.hpp"
#include "mmfp/sparse.hpp"
#include "mmfp/wavelet.hpp"

namespace mmfp {

/// Relative pivot threshold used by every local least-squares solve.
inline constexpr double lsq_rank_tolerance = 1e-12;

namespace detail {

inline Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> min_norm_solver(const Eigen::MatrixXd& a)
{
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod;
    cod.setThreshold(lsq_rank_tolerance);
    cod.compute(a);
    return cod;
}

inline void check_basis_size(const SparseSymMatrix& a, const WaveletBasis& b, const char* who)
{
    if (a.n() != b.size()) {
        throw DimensionError(std::string(who) + ": matrix size " + std::to_string(a.n())
                             + " does not match wavelet basis size " + std::to_string(b.size()));
    }
}

} // namespace detail

/// Dense W^T A W, built column by column through the factored transforms.
inline Eigen::MatrixXd wavelet_transform_matrix(const SparseSymMatrix& a, const WaveletBasis& b)
{
    detail::check_basis_size(a, b, "wavelet_transform_matrix");
    const Index n = a.n();
    Eigen::MatrixXd out(n, n);
    Vector e(n, 0.0);
    Vector col(n);
    for (Index j = 0; j < n; ++j) {
        std::fill(e.begin(), e.end(), 0.0);
        e[j] = 1.0;
        inverse_nd_inplace(b, e);
        a.csr().multiply(e, col);
        forward_nd_inplace(b, col);
        out.col(j) = Eigen::Map<const Eigen::VectorXd>(col.data(), n);
    }
    return out;
}

/// Per-axis band of a coefficient position: 0 for scaling, then 1 (coarsest detail) ... L.
inline int wavelet_band(const WaveletBasis& b, Index pos)
{
    const Index len = b.length_per_dim();
    const int levels = b.levels();
    if (pos < (len >> levels)) {
        return 0;
    }
    for (int k = levels; k >= 1; --k) {
        if (pos < (len >> (k - 1))) {
            return levels - k + 1;
        }
    }
    return levels;
}

/// Partition of the coefficient indices into the per-level bands of the tensor layout.
inline std::vector<IndexSet> wavelet_band_blocks(const WaveletBasis& b)
{
    std::map<std::vector<int>, IndexSet> groups;
    const Index len = b.length_per_dim();
    for (Index i = 0; i < b.size(); ++i) {
        std::vector<int> key;
        Index rest = i;
        for (int d = 0; d < b.dims(); ++d) {
            key.push_back(wavelet_band(b, rest % len));
            rest /= len;
        }
        groups[key].push_back(i);
    }
    std::vector<IndexSet> blocks;
    for (auto& [key, idx] : groups) {
        blocks.push_back(std::move(idx));
    }
    std::sort(blocks.begin(), blocks.end(), [](const IndexSet& x, const IndexSet& y) { return x.front() < y.front(); });
    return blocks;
}

inline std::vector<IndexSet> uniform_blocks(Index n, Index block_size)
{
    if (block_size < 1) {
        throw std::invalid_argument("uniform_blocks: block size must be positive");
    }
    std::vector<IndexSet> blocks;
    for (Index start = 0; start < n; start += block_size) {
        IndexSet blk(std::min(block_size, n - start));
        std::iota(blk.begin(), blk.end(), start);
        blocks.push_back(std::move(blk));
    }
    return blocks;
}

//
// Block-diagonal sparse approximate inverse of W^T A W.  Each diagonal block
// minimizes || Atilde(:, B) M_BB - I(:, B) ||_F independently; the operator
// applied to a residual is W M W^T.
//
struct CtwPreconditioner {
    WaveletBasis basis;
    std::vector<IndexSet> blocks;
    std::vector<Eigen::MatrixXd> block_inverses;
    /// ||Atilde M - I||_F at construction.
    double residual_fro = 0.0;
    Index rank_deficient_blocks = 0;

    Index size() const { return basis.size(); }
};

inline CtwPreconditioner build_ctw(const SparseSymMatrix& a, const WaveletBasis& b, std::vector<IndexSet> blocks)
{
    detail::check_basis_size(a, b, "build_ctw");
    const Index n = a.n();
    {
        std::vector<char> seen(n, 0);
        for (const auto& blk : blocks) {
            for (Index i : blk) {
                if (i < 0 || i >= n || seen[i]) {
                    throw std::invalid_argument("build_ctw: blocks must partition the index range");
                }
                seen[i] = 1;
            }
        }
        if (std::count(seen.begin(), seen.end(), 1) != n) {
            throw std::invalid_argument("build_ctw: blocks must cover every index");
        }
    }
    const Eigen::MatrixXd at = wavelet_transform_matrix(a, b);
    CtwPreconditioner p{b, std::move(blocks), {}, 0.0, 0};
    const Index nb = static_cast<Index>(p.blocks.size());
    p.block_inverses.resize(nb);
    std::vector<double> residual_sq(nb, 0.0);
    std::vector<char> deficient(nb, 0);
    parallel_for(nb, [&](Index bi) {
        const auto& blk = p.blocks[bi];
        const Index k = static_cast<Index>(blk.size());
        Eigen::MatrixXd cols(n, k);
        Eigen::MatrixXd target = Eigen::MatrixXd::Zero(n, k);
        for (Index c = 0; c < k; ++c) {
            cols.col(c) = at.col(blk[c]);
            target(blk[c], c) = 1.0;
        }
        auto cod = detail::min_norm_solver(cols);
        Eigen::MatrixXd x = cod.solve(target);
        deficient[bi] = cod.rank() < k ? 1 : 0;
        residual_sq[bi] = (cols * x - target).squaredNorm();
        p.block_inverses[bi] = std::move(x);
    });
    double total = 0.0;
    for (Index bi = 0; bi < nb; ++bi) {
        total += residual_sq[bi];
        p.rank_deficient_blocks += deficient[bi];
    }
    p.residual_fro = std::sqrt(total);
    return p;
}

/// Default blocking: one block per tensor band of the coefficient layout.
inline CtwPreconditioner build_ctw(const SparseSymMatrix& a, const WaveletBasis& b)
{
    return build_ctw(a, b, wavelet_band_blocks(b));
}

inline CtwPreconditioner build_ctw(const SparseSymMatrix& a, const WaveletBasis& b, Index block_size)
{
    return build_ctw(a, b, uniform_blocks(b.size(), block_size));
}

/// Block-diagonal M in wavelet coordinates as a dense matrix (test scale).
inline Eigen::MatrixXd ctw_dense_block_matrix(const CtwPreconditioner& p)
{
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(p.size(), p.size());
    for (std::size_t bi = 0; bi < p.blocks.size(); ++bi) {
        const auto& blk = p.blocks[bi];
        for (std::size_t r = 0; r < blk.size(); ++r) {
            for (std::size_t c = 0; c < blk.size(); ++c) {
                m(blk[r], blk[c]) = p.block_inverses[bi](r, c);
            }
        }
    }
    return m;
}

/// W M W^T r.
inline Vector apply_ctw(const CtwPreconditioner& p, std::span<const double> r)
{
    require_dim(r.size(), static_cast<std::size_t>(p.size()), "apply_ctw");
    Vector y = forward_nd(p.basis, r);
    Vector z(y.size(), 0.0);
    Eigen::VectorXd local;
    for (std::size_t bi = 0; bi < p.blocks.size(); ++bi) {
        const auto& blk = p.blocks[bi];
        local.resize(static_cast<Index>(blk.size()));
        for (std::size_t c = 0; c < blk.size(); ++c) {
            local[c] = y[blk[c]];
        }
        const Eigen::VectorXd out = p.block_inverses[bi] * local;
        for (std::size_t c = 0; c < blk.size(); ++c) {
            z[blk[c]] = out[c];
        }
    }
    inverse_nd_inplace(p.basis, z);
    return z;
}

//
// Implicit wavelet sparse approximate inverse: M minimizes ||W^T A M - I||_F
// with column j of M supported on the support of wavelet j.  W^T A is held
// sparse, one transformed column of A at a time.
//
struct HcPreconditioner {
    WaveletBasis basis;
    CsrMatrix m;
    Index rank_deficient_columns = 0;
    /// Stored entries of the sparse W^T A used during construction.
    Index transformed_nnz = 0;
    /// Largest local least-squares problem (rows * cols) solved.
    Index peak_local_entries = 0;

    Index size() const { return basis.size(); }
};

/// Columns of W^T A stored as rows of a CSR matrix ((W^T A)^T, which equals A W).
inline CsrMatrix transformed_columns(const SparseSymMatrix& a, const WaveletBasis& b)
{
    detail::check_basis_size(a, b, "transformed_columns");
    const Index n = a.n();
    std::vector<Index> starts{0};
    std::vector<Index> cols;
    std::vector<double> vals;
    Vector dense(n);
    for (Index i = 0; i < n; ++i) {
        std::fill(dense.begin(), dense.end(), 0.0);
        auto ci = a.col_indices(i);
        auto cv = a.col_values(i);
        for (std::size_t p = 0; p < ci.size(); ++p) {
            dense[ci[p]] = cv[p];
        }
        forward_nd_inplace(b, dense);
        for (Index r = 0; r < n; ++r) {
            if (dense[r] != 0.0) {
                cols.push_back(r);
                vals.push_back(dense[r]);
            }
        }
        starts.push_back(static_cast<Index>(cols.size()));
    }
    return CsrMatrix(n, n, std::move(starts), std::move(cols), std::move(vals));
}

inline HcPreconditioner build_hc(const SparseSymMatrix& a, const WaveletBasis& b)
{
    detail::check_basis_size(a, b, "build_hc");
    const Index n = a.n();
    const CsrMatrix fa_cols = transformed_columns(a, b);

    std::vector<IndexSet> supports(n);
    std::vector<Vector> solutions(n);
    std::vector<char> deficient(n, 0);
    std::vector<Index> local_entries(n, 0);
    parallel_for(n, [&](Index j) {
        IndexSet pattern = column_support(b, j);
        std::vector<Index> rows;
        for (Index c : pattern) {
            auto rc = fa_cols.row_cols(c);
            rows.insert(rows.end(), rc.begin(), rc.end());
        }
        std::sort(rows.begin(), rows.end());
        rows.erase(std::unique(rows.begin(), rows.end()), rows.end());
        const Index nr = static_cast<Index>(rows.size());
        const Index nc = static_cast<Index>(pattern.size());
        Eigen::MatrixXd local = Eigen::MatrixXd::Zero(nr, nc);
        for (Index c = 0; c < nc; ++c) {
            auto rc = fa_cols.row_cols(pattern[c]);
            auto rv = fa_cols.row_values(pattern[c]);
            std::size_t q = 0;
            for (std::size_t p = 0; p < rc.size(); ++p) {
                while (rows[q] < rc[p]) {
                    ++q;
                }
                local(static_cast<Index>(q), c) = rv[p];
            }
        }
        Eigen::VectorXd rhs = Eigen::VectorXd::Zero(nr);
        auto it = std::lower_bound(rows.begin(), rows.end(), j);
        if (it != rows.end() && *it == j) {
            rhs[it - rows.begin()] = 1.0;
        }
        auto cod = detail::min_norm_solver(local);
        const Eigen::VectorXd x = cod.solve(rhs);
        deficient[j] = cod.rank() < nc ? 1 : 0;
        local_entries[j] = nr * nc;
        solutions[j].assign(x.data(), x.data() + nc);
        supports[j] = std::move(pattern);
    });

    std::vector<Triplet> t;
    HcPreconditioner p{b, {}, 0, fa_cols.nnz(), 0};
    for (Index j = 0; j < n; ++j) {
        for (std::size_t q = 0; q < supports[j].size(); ++q) {
            t.push_back({supports[j][q], j, solutions[j][q]});
        }
        p.rank_deficient_columns += deficient[j];
        p.peak_local_entries = std::max(p.peak_local_entries, local_entries[j]);
    }
    p.m = CsrMatrix::from_triplets(n, n, std::move(t));
    return p;
}

/// The approximate inverse M W^T r (W^T A M ~ I implies A^{-1} ~ M W^T).
inline Vector apply_hc(const HcPreconditioner& p, std::span<const double> r)
{
    require_dim(r.size(), static_cast<std::size_t>(p.size()), "apply_hc");
    const Vector y = forward_nd(p.basis, r);
    return matvec(p.m, y);
}

} // namespace mmfp

#endif
