#ifndef MMFP_SPARSE_HPP
#define MMFP_SPARSE_HPP

#include <algorithm>
#include <cmath>
#include <span>
#include <tuple>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "mmfp/types.hpp"

namespace mmfp {

struct Triplet {
    Index row;
    Index col;
    double value;
};

//
// Compressed sparse row matrix, square or rectangular.  Rows hold strictly
// increasing column indices and no stored zeros.
//
class CsrMatrix {
public:
    CsrMatrix() = default;

    CsrMatrix(Index rows, Index cols, std::vector<Index> row_starts, std::vector<Index> col_indices,
              std::vector<double> values)
        : rows_(rows), cols_(cols), row_starts_(std::move(row_starts)),
          col_indices_(std::move(col_indices)), values_(std::move(values))
    {
        if (rows_ < 0 || cols_ < 0 || row_starts_.size() != static_cast<std::size_t>(rows_ + 1)
            || col_indices_.size() != values_.size()
            || row_starts_.back() != static_cast<Index>(values_.size())) {
            throw DimensionError("CsrMatrix: inconsistent arrays");
        }
        for (Index r = 0; r < rows_; ++r) {
            for (Index p = row_starts_[r]; p < row_starts_[r + 1]; ++p) {
                if (col_indices_[p] < 0 || col_indices_[p] >= cols_
                    || (p > row_starts_[r] && col_indices_[p] <= col_indices_[p - 1])) {
                    throw DimensionError("CsrMatrix: column indices must be in range and strictly increasing");
                }
            }
        }
    }

    /// Duplicates are summed; entries that end up exactly zero are dropped.
    static CsrMatrix from_triplets(Index rows, Index cols, std::vector<Triplet> entries)
    {
        for (const auto& t : entries) {
            if (t.row < 0 || t.row >= rows || t.col < 0 || t.col >= cols) {
                throw DimensionError("CsrMatrix::from_triplets: index out of bounds");
            }
        }
        std::stable_sort(entries.begin(), entries.end(), [](const Triplet& a, const Triplet& b) {
            return std::tie(a.row, a.col) < std::tie(b.row, b.col);
        });
        std::vector<Index> starts(rows + 1, 0);
        std::vector<Index> colv;
        std::vector<double> vals;
        colv.reserve(entries.size());
        vals.reserve(entries.size());
        std::size_t p = 0;
        while (p < entries.size()) {
            const Index r = entries[p].row;
            const Index c = entries[p].col;
            double sum = 0.0;
            while (p < entries.size() && entries[p].row == r && entries[p].col == c) {
                sum += entries[p].value;
                ++p;
            }
            if (sum != 0.0) {
                colv.push_back(c);
                vals.push_back(sum);
                ++starts[r + 1];
            }
        }
        for (Index r = 0; r < rows; ++r) {
            starts[r + 1] += starts[r];
        }
        return CsrMatrix(rows, cols, std::move(starts), std::move(colv), std::move(vals));
    }

    static CsrMatrix identity(Index n, double diag = 1.0)
    {
        std::vector<Triplet> t;
        t.reserve(n);
        for (Index i = 0; i < n; ++i) {
            t.push_back({i, i, diag});
        }
        return from_triplets(n, n, std::move(t));
    }

    static CsrMatrix from_dense(const Eigen::MatrixXd& d)
    {
        std::vector<Triplet> t;
        for (Index i = 0; i < d.rows(); ++i) {
            for (Index j = 0; j < d.cols(); ++j) {
                if (d(i, j) != 0.0) {
                    t.push_back({i, j, d(i, j)});
                }
            }
        }
        return from_triplets(d.rows(), d.cols(), std::move(t));
    }

    Index rows() const { return rows_; }
    Index cols() const { return cols_; }
    Index nnz() const { return static_cast<Index>(values_.size()); }

    const std::vector<Index>& row_starts() const { return row_starts_; }
    const std::vector<Index>& col_indices() const { return col_indices_; }
    const std::vector<double>& values() const { return values_; }

    std::span<const Index> row_cols(Index r) const
    {
        return {col_indices_.data() + row_starts_[r], static_cast<std::size_t>(row_starts_[r + 1] - row_starts_[r])};
    }
    std::span<const double> row_values(Index r) const
    {
        return {values_.data() + row_starts_[r], static_cast<std::size_t>(row_starts_[r + 1] - row_starts_[r])};
    }

    /// Stored value at (r, c), zero if absent.
    double coeff(Index r, Index c) const
    {
        auto cols = row_cols(r);
        auto it = std::lower_bound(cols.begin(), cols.end(), c);
        if (it == cols.end() || *it != c) {
            return 0.0;
        }
        return values_[row_starts_[r] + (it - cols.begin())];
    }

    void multiply(std::span<const double> v, std::span<double> out) const
    {
        require_dim(v.size(), static_cast<std::size_t>(cols_), "matvec");
        require_dim(out.size(), static_cast<std::size_t>(rows_), "matvec output");
        for (Index r = 0; r < rows_; ++r) {
            double acc = 0.0;
            for (Index p = row_starts_[r]; p < row_starts_[r + 1]; ++p) {
                acc += values_[p] * v[col_indices_[p]];
            }
            out[r] = acc;
        }
    }

    CsrMatrix transpose() const
    {
        std::vector<Index> starts(cols_ + 1, 0);
        for (Index c : col_indices_) {
            ++starts[c + 1];
        }
        for (Index c = 0; c < cols_; ++c) {
            starts[c + 1] += starts[c];
        }
        std::vector<Index> fill(starts.begin(), starts.end() - 1);
        std::vector<Index> colv(values_.size());
        std::vector<double> vals(values_.size());
        for (Index r = 0; r < rows_; ++r) {
            for (Index p = row_starts_[r]; p < row_starts_[r + 1]; ++p) {
                const Index dst = fill[col_indices_[p]]++;
                colv[dst] = r;
                vals[dst] = values_[p];
            }
        }
        return CsrMatrix(cols_, rows_, std::move(starts), std::move(colv), std::move(vals));
    }

    Eigen::MatrixXd to_dense() const
    {
        Eigen::MatrixXd d = Eigen::MatrixXd::Zero(rows_, cols_);
        for (Index r = 0; r < rows_; ++r) {
            for (Index p = row_starts_[r]; p < row_starts_[r + 1]; ++p) {
                d(r, col_indices_[p]) = values_[p];
            }
        }
        return d;
    }

    std::vector<Triplet> triplets() const
    {
        std::vector<Triplet> t;
        t.reserve(values_.size());
        for (Index r = 0; r < rows_; ++r) {
            for (Index p = row_starts_[r]; p < row_starts_[r + 1]; ++p) {
                t.push_back({r, col_indices_[p], values_[p]});
            }
        }
        return t;
    }

    friend bool operator==(const CsrMatrix&, const CsrMatrix&) = default;

private:
    Index rows_ = 0;
    Index cols_ = 0;
    std::vector<Index> row_starts_{0};
    std::vector<Index> col_indices_;
    std::vector<double> values_;
};

//
// Square symmetric matrix with both triangles stored.  Construction checks
// exact value symmetry; use symmetrize() for inputs that are only close.
//
class SparseSymMatrix {
public:
    SparseSymMatrix() = default;

    explicit SparseSymMatrix(CsrMatrix csr) : csr_(std::move(csr))
    {
        if (csr_.rows() != csr_.cols() || csr_.rows() < 1) {
            throw DimensionError("SparseSymMatrix: matrix must be square with n >= 1");
        }
        if (!(csr_ == csr_.transpose())) {
            throw DimensionError("SparseSymMatrix: stored values are not symmetric");
        }
    }

    /// Returns (A + A^T) / 2.
    static SparseSymMatrix symmetrize(const CsrMatrix& a)
    {
        if (a.rows() != a.cols()) {
            throw DimensionError("symmetrize: matrix must be square");
        }
        auto t = a.triplets();
        const std::size_t m = t.size();
        t.reserve(2 * m);
        for (std::size_t p = 0; p < m; ++p) {
            t[p].value *= 0.5;
            t.push_back({t[p].col, t[p].row, t[p].value});
        }
        // each (i,j) sums exactly two halves, and two-term addition commutes
        return SparseSymMatrix(CsrMatrix::from_triplets(a.rows(), a.cols(), std::move(t)));
    }

    static SparseSymMatrix from_triplets(Index n, std::vector<Triplet> entries)
    {
        return SparseSymMatrix(CsrMatrix::from_triplets(n, n, std::move(entries)));
    }

    static SparseSymMatrix from_dense(const Eigen::MatrixXd& d) { return SparseSymMatrix(CsrMatrix::from_dense(d)); }

    static SparseSymMatrix identity(Index n, double diag = 1.0) { return SparseSymMatrix(CsrMatrix::identity(n, diag)); }

    Index n() const { return csr_.rows(); }
    Index nnz() const { return csr_.nnz(); }
    const CsrMatrix& csr() const { return csr_; }

    /// Column j; equal to row j by symmetry.
    std::span<const Index> col_indices(Index j) const { return csr_.row_cols(j); }
    std::span<const double> col_values(Index j) const { return csr_.row_values(j); }

    double coeff(Index i, Index j) const { return csr_.coeff(i, j); }

    Eigen::MatrixXd to_dense() const { return csr_.to_dense(); }

    friend bool operator==(const SparseSymMatrix&, const SparseSymMatrix&) = default;

private:
    CsrMatrix csr_;
};

inline Vector matvec(const CsrMatrix& a, std::span<const double> v)
{
    Vector out(a.rows());
    a.multiply(v, out);
    return out;
}

inline Vector matvec(const SparseSymMatrix& a, std::span<const double> v) { return matvec(a.csr(), v); }

inline double frobenius_norm(const CsrMatrix& a)
{
    double s = 0.0;
    for (double x : a.values()) {
        s += x * x;
    }
    return std::sqrt(s);
}

inline double frobenius_norm(const SparseSymMatrix& a) { return frobenius_norm(a.csr()); }

/// Inner product of two sorted sparse vectors.
inline double sparse_dot(std::span<const Index> ia, std::span<const double> va, std::span<const Index> ib,
                         std::span<const double> vb)
{
    double acc = 0.0;
    std::size_t p = 0;
    std::size_t q = 0;
    while (p < ia.size() && q < ib.size()) {
        if (ia[p] < ib[q]) {
            ++p;
        } else if (ib[q] < ia[p]) {
            ++q;
        } else {
            acc += va[p] * vb[q];
            ++p;
            ++q;
        }
    }
    return acc;
}

/// Pairwise inner products <a_i, a_j> of the selected columns.
inline Eigen::MatrixXd gram_columns(const SparseSymMatrix& a, std::span<const Index> cols)
{
    const Index k = static_cast<Index>(cols.size());
    Eigen::MatrixXd g(k, k);
    for (Index p = 0; p < k; ++p) {
        if (cols[p] < 0 || cols[p] >= a.n()) {
            throw DimensionError("gram_columns: column index out of range");
        }
    }
    for (Index p = 0; p < k; ++p) {
        for (Index q = p; q < k; ++q) {
            const double d = sparse_dot(a.col_indices(cols[p]), a.col_values(cols[p]), a.col_indices(cols[q]),
                                        a.col_values(cols[q]));
            g(p, q) = d;
            g(q, p) = d;
        }
    }
    return g;
}

/// A[keep, keep]; keep must be strictly increasing.
inline SparseSymMatrix principal_submatrix(const SparseSymMatrix& a, std::span<const Index> keep)
{
    std::vector<Index> map(a.n(), -1);
    for (std::size_t p = 0; p < keep.size(); ++p) {
        if (keep[p] < 0 || keep[p] >= a.n() || (p > 0 && keep[p] <= keep[p - 1])) {
            throw DimensionError("principal_submatrix: indices must be increasing and in range");
        }
        map[keep[p]] = static_cast<Index>(p);
    }
    std::vector<Triplet> t;
    for (std::size_t p = 0; p < keep.size(); ++p) {
        auto ci = a.col_indices(keep[p]);
        auto cv = a.col_values(keep[p]);
        for (std::size_t q = 0; q < ci.size(); ++q) {
            if (map[ci[q]] >= 0) {
                t.push_back({static_cast<Index>(p), map[ci[q]], cv[q]});
            }
        }
    }
    return SparseSymMatrix::from_triplets(static_cast<Index>(keep.size()), std::move(t));
}

inline double norm2(std::span<const double> v)
{
    double s = 0.0;
    for (double x : v) {
        s += x * x;
    }
    return std::sqrt(s);
}

inline double dot(std::span<const double> a, std::span<const double> b)
{
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        s += a[i] * b[i];
    }
    return s;
}

} // namespace mmfp

#endif
