#ifndef MMFP_WAVELET_HPP
#define MMFP_WAVELET_HPP

#include <algorithm>
#include <bit>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "mmfp/sparse.hpp"

namespace mmfp {

/// Orthonormal Daubechies scaling filter with the given even number of taps (2 = Haar, up to 8).
inline Vector daubechies_taps(int taps)
{
    switch (taps) {
    case 2: {
        const double r = 1.0 / std::sqrt(2.0);
        return {r, r};
    }
    case 4: {
        const double s3 = std::sqrt(3.0);
        const double d = 4.0 * std::sqrt(2.0);
        return {(1.0 + s3) / d, (3.0 + s3) / d, (3.0 - s3) / d, (1.0 - s3) / d};
    }
    case 6:
        return {0.33267055295008261599851158914,  0.80689150931109257649449360409,
                0.45987750211849157009515194215,  -0.13501102001025458869638990670,
                -0.08544127388202666169281916918, 0.03522629188570953660274066472};
    case 8:
        return {0.23037781330889650086329118304,  0.71484657055291564708992195527,
                0.63088076792985890788171633830,  -0.02798376941685985421141374718,
                -0.18703481171909308407957067279, 0.03084138183556076362721936253,
                0.03288301166688519973540751355,  -0.01059740178506903210488320852};
    default:
        throw std::invalid_argument("daubechies_taps: supported tap counts are 2, 4, 6, 8");
    }
}

/// Largest number of dyadic levels a length admits (number of factors of two).
inline int max_wavelet_levels(Index length)
{
    if (length < 1) {
        return 0;
    }
    return std::countr_zero(static_cast<std::uint64_t>(length));
}

//
// Periodized orthogonal wavelet transform on signals of length^dims entries.
//
// The forward transform is W^T = W_L^T ... W_1^T.  Factor W_k^T acts on the
// leading N = length / 2^(k-1) coefficients: its first N/2 rows are the
// stride-2 circulant of h (U_k), the next N/2 rows the circulant of g (V_k),
// and the remainder is identity.  After L levels the scaling coefficients
// occupy the first length / 2^L entries, followed by the detail bands from
// coarsest to finest.
//
class WaveletBasis {
public:
    WaveletBasis(int taps, int levels, Index length_per_dim, int dims = 1)
        : h_(daubechies_taps(taps)), levels_(levels), length_(length_per_dim), dims_(dims)
    {
        if (dims < 1 || dims > 3) {
            throw std::invalid_argument("WaveletBasis: dims must be 1, 2 or 3");
        }
        if (length_per_dim < 1 || levels < 0 || levels > max_wavelet_levels(length_per_dim)) {
            throw std::invalid_argument("WaveletBasis: " + std::to_string(levels) + " levels not admissible for length "
                                        + std::to_string(length_per_dim));
        }
        const std::size_t m = h_.size();
        g_.resize(m);
        for (std::size_t k = 0; k < m; ++k) {
            const double sign = (k % 2 == 0) ? 1.0 : -1.0;
            g_[k] = sign * h_[m - 1 - k];
        }
        total_ = 1;
        for (int d = 0; d < dims_; ++d) {
            total_ *= length_;
        }
    }

    const Vector& h() const { return h_; }
    const Vector& g() const { return g_; }
    int taps() const { return static_cast<int>(h_.size()); }
    int levels() const { return levels_; }
    int dims() const { return dims_; }
    Index length_per_dim() const { return length_; }
    /// Total signal size length^dims.
    Index size() const { return total_; }

    /// Active length of level k (1-based).
    Index active_length(int k) const { return length_ >> (k - 1); }

private:
    Vector h_;
    Vector g_;
    int levels_;
    Index length_;
    int dims_;
    Index total_ = 0;
};

namespace detail {

inline void forward_line(const WaveletBasis& b, double* x, Index stride, Vector& tmp)
{
    const auto& h = b.h();
    const auto& g = b.g();
    const Index m = static_cast<Index>(h.size());
    for (int k = 1; k <= b.levels(); ++k) {
        const Index n = b.active_length(k);
        const Index half = n / 2;
        tmp.assign(n, 0.0);
        for (Index r = 0; r < half; ++r) {
            double lo = 0.0;
            double hi = 0.0;
            for (Index t = 0; t < m; ++t) {
                const double v = x[((2 * r + t) % n) * stride];
                lo += h[t] * v;
                hi += g[t] * v;
            }
            tmp[r] = lo;
            tmp[half + r] = hi;
        }
        for (Index i = 0; i < n; ++i) {
            x[i * stride] = tmp[i];
        }
    }
}

inline void inverse_line(const WaveletBasis& b, double* y, Index stride, Vector& tmp)
{
    const auto& h = b.h();
    const auto& g = b.g();
    const Index m = static_cast<Index>(h.size());
    for (int k = b.levels(); k >= 1; --k) {
        const Index n = b.active_length(k);
        const Index half = n / 2;
        tmp.assign(n, 0.0);
        for (Index r = 0; r < half; ++r) {
            const double lo = y[r * stride];
            const double hi = y[(half + r) * stride];
            for (Index t = 0; t < m; ++t) {
                tmp[(2 * r + t) % n] += h[t] * lo + g[t] * hi;
            }
        }
        for (Index i = 0; i < n; ++i) {
            y[i * stride] = tmp[i];
        }
    }
}

template <typename LineOp>
void along_axes(const WaveletBasis& b, std::span<double> x, LineOp op)
{
    const Index len = b.length_per_dim();
    Index stride = 1;
    Vector tmp;
    for (int axis = 0; axis < b.dims(); ++axis) {
        // Lines along `axis` start at every index whose axis coordinate is zero.
        const Index block = stride * len;
        for (Index outer = 0; outer < b.size(); outer += block) {
            for (Index inner = 0; inner < stride; ++inner) {
                op(b, x.data() + outer + inner, stride, tmp);
            }
        }
        stride = block;
    }
}

} // namespace detail

/// W_k^T of a one-dimensional basis as a sparse matrix.
inline CsrMatrix build_factor_transpose(const WaveletBasis& b, int k)
{
    if (k < 1 || k > b.levels()) {
        throw std::out_of_range("build_factor_transpose: level " + std::to_string(k) + " outside [1, "
                                + std::to_string(b.levels()) + "]");
    }
    const Index len = b.length_per_dim();
    const Index n = b.active_length(k);
    const Index half = n / 2;
    const Index m = b.taps();
    std::vector<Triplet> t;
    for (Index r = 0; r < half; ++r) {
        for (Index p = 0; p < m; ++p) {
            t.push_back({r, (2 * r + p) % n, b.h()[p]});
            t.push_back({half + r, (2 * r + p) % n, b.g()[p]});
        }
    }
    for (Index i = n; i < len; ++i) {
        t.push_back({i, i, 1.0});
    }
    return CsrMatrix::from_triplets(len, len, std::move(t));
}

/// One-dimensional forward transform W^T x along a single line of length length_per_dim.
inline Vector forward(const WaveletBasis& b, std::span<const double> x)
{
    require_dim(x.size(), static_cast<std::size_t>(b.length_per_dim()), "wavelet forward");
    Vector y(x.begin(), x.end());
    Vector tmp;
    detail::forward_line(b, y.data(), 1, tmp);
    return y;
}

/// One-dimensional inverse transform W y.
inline Vector inverse(const WaveletBasis& b, std::span<const double> y)
{
    require_dim(y.size(), static_cast<std::size_t>(b.length_per_dim()), "wavelet inverse");
    Vector x(y.begin(), y.end());
    Vector tmp;
    detail::inverse_line(b, x.data(), 1, tmp);
    return x;
}

/// Dimension-wise transform (W x ... x W)^T x of a vectorized, column-stacked signal.
inline void forward_nd_inplace(const WaveletBasis& b, std::span<double> x)
{
    require_dim(x.size(), static_cast<std::size_t>(b.size()), "wavelet forward_nd");
    detail::along_axes(b, x, detail::forward_line);
}

inline void inverse_nd_inplace(const WaveletBasis& b, std::span<double> y)
{
    require_dim(y.size(), static_cast<std::size_t>(b.size()), "wavelet inverse_nd");
    detail::along_axes(b, y, detail::inverse_line);
}

inline Vector forward_nd(const WaveletBasis& b, std::span<const double> x)
{
    Vector y(x.begin(), x.end());
    forward_nd_inplace(b, y);
    return y;
}

inline Vector inverse_nd(const WaveletBasis& b, std::span<const double> y)
{
    Vector x(y.begin(), y.end());
    inverse_nd_inplace(b, x);
    return x;
}

/// Support of column j of the one-dimensional W = W_1 ... W_L, by structural propagation.
inline IndexSet column_support_1d(const WaveletBasis& b, Index j)
{
    const Index len = b.length_per_dim();
    if (j < 0 || j >= len) {
        throw std::out_of_range("column_support_1d: index out of range");
    }
    std::vector<char> cur(len, 0);
    std::vector<char> next(len, 0);
    cur[j] = 1;
    const Index m = b.taps();
    for (int k = b.levels(); k >= 1; --k) {
        const Index n = b.active_length(k);
        const Index half = n / 2;
        std::fill(next.begin(), next.end(), 0);
        for (Index r = 0; r < len; ++r) {
            if (!cur[r]) {
                continue;
            }
            if (r >= n) {
                next[r] = 1;
                continue;
            }
            const Index base = 2 * (r < half ? r : r - half);
            for (Index p = 0; p < m; ++p) {
                next[(base + p) % n] = 1;
            }
        }
        std::swap(cur, next);
    }
    IndexSet out;
    for (Index i = 0; i < len; ++i) {
        if (cur[i]) {
            out.push_back(i);
        }
    }
    return out;
}

/// Support of column j of W (x W (x W)), the tensor product of per-axis supports.
inline IndexSet column_support(const WaveletBasis& b, Index j)
{
    if (j < 0 || j >= b.size()) {
        throw std::out_of_range("column_support: index out of range");
    }
    const Index len = b.length_per_dim();
    IndexSet result{0};
    Index stride = 1;
    Index rest = j;
    for (int axis = 0; axis < b.dims(); ++axis) {
        const auto axis_support = column_support_1d(b, rest % len);
        rest /= len;
        IndexSet next;
        next.reserve(result.size() * axis_support.size());
        for (Index a : axis_support) {
            for (Index r : result) {
                next.push_back(r + a * stride);
            }
        }
        result = std::move(next);
        stride *= len;
    }
    std::sort(result.begin(), result.end());
    return result;
}

} // namespace mmfp

#endif
