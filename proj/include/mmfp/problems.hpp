#ifndef MMFP_PROBLEMS_HPP
#define MMFP_PROBLEMS_HPP

#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>

#include "mmfp/sparse.hpp"

namespace mmfp {

enum class ProblemKind { lap1d, lap2d, lap3d, disc2d };

inline std::string_view to_string(ProblemKind k)
{
    switch (k) {
    case ProblemKind::lap1d: return "lap1d";
    case ProblemKind::lap2d: return "lap2d";
    case ProblemKind::lap3d: return "lap3d";
    case ProblemKind::disc2d: return "disc2d";
    }
    return "?";
}

inline std::optional<ProblemKind> parse_problem_kind(std::string_view s)
{
    if (s == "lap1d") return ProblemKind::lap1d;
    if (s == "lap2d") return ProblemKind::lap2d;
    if (s == "lap3d") return ProblemKind::lap3d;
    if (s == "disc2d") return ProblemKind::disc2d;
    return std::nullopt;
}

/// Spatial dimension of the underlying PDE.
inline int problem_dims(ProblemKind k)
{
    switch (k) {
    case ProblemKind::lap1d: return 1;
    case ProblemKind::lap3d: return 3;
    default: return 2;
    }
}

//
// Central-difference discretization on the interior points of a regular mesh
// over the unit cube, x_i = i*h with h = 1/(m+1).  Unknowns are ordered with
// x fastest, then y, then z.  Dirichlet boundary values are zero, and the
// operator is the literal (negative definite) difference operator.
//
struct ModelProblem {
    ProblemKind kind;
    Index mesh_points_per_dim;
    SparseSymMatrix matrix;
    Vector rhs;

    int dims() const { return problem_dims(kind); }
    double spacing() const { return 1.0 / static_cast<double>(mesh_points_per_dim + 1); }
};

namespace detail {

inline void check_mesh(Index m)
{
    if (m < 1) {
        throw DimensionError("model problem: mesh size must be at least 1");
    }
}

/// Coordinate twice_pos * h / 2; exact at 0.5.
inline double half_point(Index twice_pos, Index m)
{
    return static_cast<double>(twice_pos) / static_cast<double>(2 * (m + 1));
}

} // namespace detail

inline ModelProblem build_lap1d(Index m)
{
    detail::check_mesh(m);
    const double h = 1.0 / static_cast<double>(m + 1);
    const double inv_h2 = 1.0 / (h * h);
    std::vector<Triplet> t;
    Vector rhs(m);
    for (Index i = 0; i < m; ++i) {
        t.push_back({i, i, -2.0 * inv_h2});
        if (i > 0) t.push_back({i, i - 1, inv_h2});
        if (i + 1 < m) t.push_back({i, i + 1, inv_h2});
        const double x = static_cast<double>(i + 1) * h;
        rhs[i] = std::exp(x) / (1.0 + x * x);
    }
    return {ProblemKind::lap1d, m, SparseSymMatrix::from_triplets(m, std::move(t)), std::move(rhs)};
}

inline ModelProblem build_lap2d(Index m)
{
    detail::check_mesh(m);
    const double h = 1.0 / static_cast<double>(m + 1);
    const double inv_h2 = 1.0 / (h * h);
    const Index n = m * m;
    std::vector<Triplet> t;
    Vector rhs(n);
    for (Index j = 0; j < m; ++j) {
        for (Index i = 0; i < m; ++i) {
            const Index row = i + m * j;
            t.push_back({row, row, -4.0 * inv_h2});
            if (i > 0) t.push_back({row, row - 1, inv_h2});
            if (i + 1 < m) t.push_back({row, row + 1, inv_h2});
            if (j > 0) t.push_back({row, row - m, inv_h2});
            if (j + 1 < m) t.push_back({row, row + m, inv_h2});
            const double x = static_cast<double>(i + 1) * h;
            rhs[row] = -100.0 * x * x;
        }
    }
    return {ProblemKind::lap2d, m, SparseSymMatrix::from_triplets(n, std::move(t)), std::move(rhs)};
}

inline ModelProblem build_lap3d(Index m)
{
    detail::check_mesh(m);
    const double h = 1.0 / static_cast<double>(m + 1);
    const double inv_h2 = 1.0 / (h * h);
    const Index n = m * m * m;
    const Index plane = m * m;
    std::vector<Triplet> t;
    Vector rhs(n);
    for (Index k = 0; k < m; ++k) {
        for (Index j = 0; j < m; ++j) {
            for (Index i = 0; i < m; ++i) {
                const Index row = i + m * j + plane * k;
                t.push_back({row, row, -6.0 * inv_h2});
                if (i > 0) t.push_back({row, row - 1, inv_h2});
                if (i + 1 < m) t.push_back({row, row + 1, inv_h2});
                if (j > 0) t.push_back({row, row - m, inv_h2});
                if (j + 1 < m) t.push_back({row, row + m, inv_h2});
                if (k > 0) t.push_back({row, row - plane, inv_h2});
                if (k + 1 < m) t.push_back({row, row + plane, inv_h2});
                const double x = static_cast<double>(i + 1) * h;
                rhs[row] = -100.0 * x * x;
            }
        }
    }
    return {ProblemKind::lap3d, m, SparseSymMatrix::from_triplets(n, std::move(t)), std::move(rhs)};
}

/// Piecewise coefficient a = b of the discontinuous problem; closed regions, first match wins.
inline double disc2d_coefficient(double x, double y)
{
    if (x >= 0.0 && x <= 0.5 && y >= 0.5 && y <= 1.0) {
        return 1e-3;
    }
    if (x >= 0.5 && x <= 1.0 && y >= 0.0 && y <= 0.5) {
        return 1e3;
    }
    return 1.0;
}

//
// (a u_x)_x + (b u_y)_y with flux coefficients sampled pointwise at the edge
// midpoints.  Each edge coefficient is shared by the two rows it couples.
//
inline ModelProblem build_disc2d(Index m)
{
    detail::check_mesh(m);
    const double h = 1.0 / static_cast<double>(m + 1);
    const double inv_h2 = 1.0 / (h * h);
    const Index n = m * m;
    std::vector<Triplet> t;
    Vector rhs(n);
    // Mesh point i (1-based) sits at twice-position 2i; midpoints at 2i +- 1.
    for (Index j = 0; j < m; ++j) {
        for (Index i = 0; i < m; ++i) {
            const Index row = i + m * j;
            const Index xi2 = 2 * (i + 1);
            const Index yj2 = 2 * (j + 1);
            const double x = detail::half_point(xi2, m);
            const double y = detail::half_point(yj2, m);
            const double west = disc2d_coefficient(detail::half_point(xi2 - 1, m), y);
            const double east = disc2d_coefficient(detail::half_point(xi2 + 1, m), y);
            const double south = disc2d_coefficient(x, detail::half_point(yj2 - 1, m));
            const double north = disc2d_coefficient(x, detail::half_point(yj2 + 1, m));
            t.push_back({row, row, -(west + east + south + north) * inv_h2});
            if (i > 0) t.push_back({row, row - 1, west * inv_h2});
            if (i + 1 < m) t.push_back({row, row + 1, east * inv_h2});
            if (j > 0) t.push_back({row, row - m, south * inv_h2});
            if (j + 1 < m) t.push_back({row, row + m, north * inv_h2});
            rhs[row] = std::sin(std::numbers::pi * x * y);
        }
    }
    return {ProblemKind::disc2d, m, SparseSymMatrix::from_triplets(n, std::move(t)), std::move(rhs)};
}

inline ModelProblem build_problem(ProblemKind kind, Index m)
{
    switch (kind) {
    case ProblemKind::lap1d: return build_lap1d(m);
    case ProblemKind::lap2d: return build_lap2d(m);
    case ProblemKind::lap3d: return build_lap3d(m);
    case ProblemKind::disc2d: return build_disc2d(m);
    }
    throw std::invalid_argument("unknown problem kind");
}

} // namespace mmfp

#endif
