#ifndef MMFP_KRYLOV_HPP
#define MMFP_KRYLOV_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mmfp/sparse.hpp"

namespace mmfp {

/// out = Op * in; out is sized to dimension and must not alias in.
struct LinearOperator {
    Index dimension = 0;
    std::function<void(std::span<const double>, std::span<double>)> apply;

    Vector operator()(std::span<const double> v) const
    {
        Vector out(dimension);
        apply(v, out);
        return out;
    }
};

inline LinearOperator make_operator(const SparseSymMatrix& a)
{
    return {a.n(), [&a](std::span<const double> in, std::span<double> out) {
                const Vector y = matvec(a, in);
                std::copy(y.begin(), y.end(), out.begin());
            }};
}

struct SolveReport {
    bool converged = false;
    Index iterations = 0;
    /// Relative residual of the iterated system, entry 0 being the initial one.
    Vector residual_history;
    double true_relative_residual = std::numeric_limits<double>::quiet_NaN();
    double setup_seconds = 0.0;
    double solve_seconds = 0.0;
    std::vector<std::string> flags;
};

struct GmresOptions {
    double tol = 1e-8;
    Index maxit = 1000;
    /// Krylov dimension per cycle; 0 means no restart.
    Index restart = 0;
    //
    // Optional residual of the underlying system at an iterate.  When set,
    // reaching tol on the iterated system only counts as convergence if this
    // residual is also within tol; otherwise the iterated target is tightened
    // and the same Krylov process continues.
    //
    std::function<double(std::span<const double>)> true_residual;
};

//
// GMRES with modified Gram-Schmidt Arnoldi and plane rotations on the
// Hessenberg matrix.  Stops when the iterated system's relative residual
// ||rhs - Op x|| / ||rhs|| reaches tol (see GmresOptions::true_residual) or
// after maxit iterations.
//
inline std::pair<Vector, SolveReport> gmres(const LinearOperator& op, std::span<const double> rhs,
                                            const GmresOptions& opts = {}, std::span<const double> x0 = {})
{
    const Index n = op.dimension;
    require_dim(rhs.size(), static_cast<std::size_t>(n), "gmres rhs");
    if (!x0.empty()) {
        require_dim(x0.size(), static_cast<std::size_t>(n), "gmres x0");
    }
    if (!(opts.tol > 0.0) || opts.maxit < 0 || opts.restart < 0) {
        throw std::invalid_argument("gmres: tol must be positive, maxit and restart non-negative");
    }
    constexpr double floor_tol = 1e-15;

    SolveReport report;
    Vector x = x0.empty() ? Vector(n, 0.0) : Vector(x0.begin(), x0.end());
    const double bnorm = norm2(rhs);
    if (bnorm == 0.0) {
        std::fill(x.begin(), x.end(), 0.0);
        report.converged = true;
        report.residual_history = {0.0};
        report.true_relative_residual = 0.0;
        return {x, report};
    }
    auto add_flag = [&](const char* f) {
        if (std::find(report.flags.begin(), report.flags.end(), f) == report.flags.end()) {
            report.flags.emplace_back(f);
        }
    };

    Vector r(n);
    Vector w(n);
    auto residual = [&] {
        op.apply(x, w);
        for (Index i = 0; i < n; ++i) {
            r[i] = rhs[i] - w[i];
        }
        return norm2(r);
    };

    // Accepts x when the underlying residual agrees; otherwise tightens target.
    double target = opts.tol;
    bool exhausted = false;
    auto accept = [&](std::span<const double> xc, double rel) {
        if (!opts.true_residual) {
            return true;
        }
        const double t = opts.true_residual(xc);
        if (t <= opts.tol) {
            return true;
        }
        const double next = std::max(floor_tol, 0.5 * rel * opts.tol / t);
        if (!(next < target)) {
            exhausted = true;
            return false;
        }
        target = next;
        add_flag("refined");
        return false;
    };

    double beta = residual();
    report.residual_history.push_back(beta / bnorm);
    if (beta / bnorm <= target && accept(x, beta / bnorm)) {
        report.converged = true;
    }
    const double breakdown_floor = 1e-14 * beta;

    Vector trial;
    while (!report.converged && !exhausted && report.iterations < opts.maxit) {
        const Index remaining = opts.maxit - report.iterations;
        const Index m = opts.restart > 0 ? std::min(opts.restart, remaining) : remaining;

        std::vector<Vector> v;
        v.reserve(static_cast<std::size_t>(std::min<Index>(m + 1, n + 1)));
        v.emplace_back(n);
        for (Index i = 0; i < n; ++i) {
            v[0][i] = r[i] / beta;
        }
        // Column j of the Hessenberg matrix holds j + 2 entries, already rotated.
        std::vector<Vector> hcols;
        Vector cs;
        Vector sn;
        Vector g{beta};

        // x + V_j y_j for the current least-squares minimizer.
        auto solution = [&](Index j, Vector& out) {
            Vector y(j, 0.0);
            for (Index i = j - 1; i >= 0; --i) {
                double acc = g[i];
                for (Index k = i + 1; k < j; ++k) {
                    acc -= hcols[k][i] * y[k];
                }
                y[i] = hcols[i][i] == 0.0 ? 0.0 : acc / hcols[i][i];
            }
            out = x;
            for (Index i = 0; i < j; ++i) {
                for (Index t = 0; t < n; ++t) {
                    out[t] += y[i] * v[i][t];
                }
            }
        };

        bool stop = false;
        Index j = 0;
        for (; j < m; ++j) {
            op.apply(v[j], w);
            Vector hj(j + 2, 0.0);
            for (Index i = 0; i <= j; ++i) {
                hj[i] = dot(w, v[i]);
                for (Index t = 0; t < n; ++t) {
                    w[t] -= hj[i] * v[i][t];
                }
            }
            const double hnext = norm2(w);
            hj[j + 1] = hnext;
            for (Index i = 0; i < j; ++i) {
                const double a = hj[i];
                const double b = hj[i + 1];
                hj[i] = cs[i] * a + sn[i] * b;
                hj[i + 1] = -sn[i] * a + cs[i] * b;
            }
            const double rho = std::hypot(hj[j], hj[j + 1]);
            const double c = rho == 0.0 ? 1.0 : hj[j] / rho;
            const double s = rho == 0.0 ? 0.0 : hj[j + 1] / rho;
            cs.push_back(c);
            sn.push_back(s);
            hj[j] = rho;
            hj[j + 1] = 0.0;
            g.push_back(-s * g[j]);
            g[j] = c * g[j];
            hcols.push_back(std::move(hj));

            ++report.iterations;
            const double rel = std::abs(g[j + 1]) / bnorm;
            report.residual_history.push_back(rel);
            if (rel <= target) {
                solution(j + 1, trial);
                if (accept(trial, rel)) {
                    report.converged = true;
                    ++j;
                    break;
                }
                if (exhausted) {
                    ++j;
                    break;
                }
            }
            if (hnext < breakdown_floor) {
                add_flag("arnoldi_breakdown");
                stop = true;
                ++j;
                break;
            }
            if (report.iterations >= opts.maxit) {
                ++j;
                break;
            }
            v.emplace_back(n);
            for (Index t = 0; t < n; ++t) {
                v[j + 1][t] = w[t] / hnext;
            }
        }

        solution(j, trial);
        x.swap(trial);
        if (stop) {
            break;
        }
        if (!report.converged && !exhausted && report.iterations < opts.maxit) {
            beta = residual();
        }
    }

    const double final_res = residual();
    report.true_relative_residual = final_res / bnorm;
    if (exhausted) {
        add_flag("true_residual_above_tol");
    }
    if (!report.converged) {
        add_flag("DNC");
    }
    return {x, report};
}

} // namespace mmfp

#endif
