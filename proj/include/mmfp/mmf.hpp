#ifndef MMFP_MMF_HPP
#define MMFP_MMF_HPP

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <istream>
#include <numbers>
#include <numeric>
#include <ostream>
#include <queue>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mmfp/parallel.hpp"
#include "mmfp/sparse.hpp"

namespace mmfp {

//
// Orthogonal matrix that differs from the identity only on indices x indices.
// Applied to a vector v it replaces v[indices] by block * v[indices].  For
// k = 2 the block is [[c, -s], [s, c]].
//
struct KPointRotation {
    IndexSet indices;
    Eigen::MatrixXd block;
    Index level = 0;

    Index order() const { return static_cast<Index>(indices.size()); }

    void apply(std::span<double> v) const { apply_impl(v, false); }
    void apply_transpose(std::span<double> v) const { apply_impl(v, true); }

private:
    void apply_impl(std::span<double> v, bool transposed) const
    {
        const Index k = order();
        if (k == 2) {
            const double a = v[indices[0]];
            const double b = v[indices[1]];
            if (!transposed) {
                v[indices[0]] = block(0, 0) * a + block(0, 1) * b;
                v[indices[1]] = block(1, 0) * a + block(1, 1) * b;
            } else {
                v[indices[0]] = block(0, 0) * a + block(1, 0) * b;
                v[indices[1]] = block(0, 1) * a + block(1, 1) * b;
            }
            return;
        }
        Eigen::VectorXd x(k);
        for (Index p = 0; p < k; ++p) {
            x[p] = v[indices[p]];
        }
        const Eigen::VectorXd y = transposed ? Eigen::VectorXd(block.transpose() * x) : Eigen::VectorXd(block * x);
        for (Index p = 0; p < k; ++p) {
            v[indices[p]] = y[p];
        }
    }
};

/// Givens rotation on (i, j) by angle theta.
inline KPointRotation givens(Index i, Index j, double theta, Index level = 0)
{
    Eigen::MatrixXd b(2, 2);
    const double c = std::cos(theta);
    const double s = std::sin(theta);
    b << c, -s, s, c;
    return {{i, j}, std::move(b), level};
}

//
// H_{ij} = 0 unless i, j both lie in the core or i = j.  The retired
// (wavelet) indices carry one diagonal value each.
//
struct CoreDiagonal {
    IndexSet core_indices;
    Eigen::MatrixXd core;
    IndexSet wavelet_indices;
    Vector diagonal;
};

//
// A ~ Q_1^T ... Q_L^T H Q_L ... Q_1.  Level l applies rotations[l-1] and
// retires retired[l-1], so the active set before level l is [n] minus the
// first l-1 retired indices and delta_l = n - l.
//
struct MMFFactorization {
    Index n = 0;
    std::vector<KPointRotation> rotations;
    IndexSet retired;
    /// Level count at the end of each pMMF stage (a single entry for greedy MMF).
    std::vector<Index> stage_ends;
    CoreDiagonal h;
    /// Sum of squares of every off-diagonal entry zeroed when indices were retired.
    double recorded_error_sq = 0.0;
    std::vector<std::string> flags;

    Index levels() const { return static_cast<Index>(rotations.size()); }
    /// delta_0 >= delta_1 >= ... >= delta_L.
    std::vector<Index> schedule() const
    {
        std::vector<Index> d(levels() + 1);
        for (Index l = 0; l <= levels(); ++l) {
            d[l] = n - l;
        }
        return d;
    }
};

//
// jacobi annihilates the pair's coupling in the working matrix; gram
// annihilates it in the Gram matrix, making the two rotated columns
// orthogonal; min_offdiag minimizes the wavelet row's off-diagonal norm.
//
enum class RotationRule { jacobi, gram, min_offdiag };

struct PmmfConfig {
    int k = 2;
    RotationRule rule = RotationRule::jacobi;
    double wavelet_fraction = 0.5;
    Index target_core = 100;
    Index max_block = 2000;
    Index stages_cap = 64;
    /// Pair each index at most once per stage while untouched partners remain.
    bool fresh_pairs = true;
    std::uint64_t seed = 1;

    void validate() const
    {
        if (k < 2) {
            throw std::invalid_argument("PmmfConfig: rotation order k must be at least 2");
        }
        if (!(wavelet_fraction > 0.0 && wavelet_fraction < 1.0)) {
            throw std::invalid_argument("PmmfConfig: wavelet_fraction must lie in (0, 1)");
        }
        if (target_core < 0 || max_block < 2 || stages_cap < 1) {
            throw std::invalid_argument("PmmfConfig: invalid target_core / max_block / stages_cap");
        }
    }
};

struct RotationChoice {
    /// Rotation in the index space of the working matrix.
    KPointRotation rotation;
    Index wavelet = -1;
    /// Frobenius mass (both triangles) of the wavelet row/column outside the rotated group.
    double error_contribution = 0.0;
    bool partner_found = false;
};

namespace detail {

inline double reduce_jacobi_angle(double theta)
{
    constexpr double quarter = std::numbers::pi / 4.0;
    while (theta > quarter) {
        theta -= 2.0 * quarter;
    }
    while (theta <= -quarter) {
        theta += 2.0 * quarter;
    }
    return theta;
}

/// Row p of the group after rotation, evaluated at column x.
inline double rotated_entry(const Eigen::MatrixXd& w, const KPointRotation& rot, Index p, Index x)
{
    double acc = 0.0;
    for (Index q = 0; q < rot.order(); ++q) {
        acc += rot.block(p, q) * w(rot.indices[q], x);
    }
    return acc;
}

/// A <- Q A Q^T for a symmetric dense A.
inline void conjugate(Eigen::MatrixXd& a, const KPointRotation& rot)
{
    const Index k = rot.order();
    const Index n = a.rows();
    if (k == 2) {
        const Index i = rot.indices[0];
        const Index j = rot.indices[1];
        const double b00 = rot.block(0, 0), b01 = rot.block(0, 1), b10 = rot.block(1, 0), b11 = rot.block(1, 1);
        for (Index x = 0; x < n; ++x) {
            const double u = a(i, x);
            const double v = a(j, x);
            a(i, x) = b00 * u + b01 * v;
            a(j, x) = b10 * u + b11 * v;
        }
        for (Index x = 0; x < n; ++x) {
            const double u = a(x, i);
            const double v = a(x, j);
            a(x, i) = b00 * u + b01 * v;
            a(x, j) = b10 * u + b11 * v;
        }
        return;
    }
    Eigen::MatrixXd rows(k, n);
    for (Index p = 0; p < k; ++p) {
        rows.row(p) = a.row(rot.indices[p]);
    }
    rows = rot.block * rows;
    for (Index p = 0; p < k; ++p) {
        a.row(rot.indices[p]) = rows.row(p);
    }
    Eigen::MatrixXd cols(n, k);
    for (Index p = 0; p < k; ++p) {
        cols.col(p) = a.col(rot.indices[p]);
    }
    cols = cols * rot.block.transpose();
    for (Index p = 0; p < k; ++p) {
        a.col(rot.indices[p]) = cols.col(p);
    }
}

} // namespace detail

//
// Chooses the next rotation around i1.  Partners maximize the normalized
// inner product |G(i1, j)| / sqrt(G(i1,i1) G(j,j)) over active j (zero
// columns excluded).  For k = 2 the angle is the Jacobi angle annihilating
// working(i1, i2), reduced to (-pi/4, pi/4]; for k > 2 the group block is
// diagonalized.  The wavelet is the rotated row with the smaller off-diagonal
// norm over the active set outside the group.
//
inline RotationChoice find_rotation(const Eigen::MatrixXd& working, const Eigen::MatrixXd& gram,
                                    std::span<const Index> active, Index i1, int k = 2,
                                    RotationRule rule = RotationRule::jacobi, std::span<const Index> eligible = {})
{
    if (eligible.empty()) {
        eligible = active;
    }
    if (k < 2) {
        throw std::invalid_argument("find_rotation: k must be at least 2");
    }
    std::vector<std::pair<double, Index>> candidates;
    const double g11 = gram(i1, i1);
    if (g11 > 0.0) {
        for (Index j : eligible) {
            if (j == i1 || gram(j, j) <= 0.0) {
                continue;
            }
            candidates.push_back({std::abs(gram(i1, j)) / std::sqrt(g11 * gram(j, j)), j});
        }
    }
    RotationChoice out;
    if (candidates.empty()) {
        // No usable partner: identity rotation and i1 becomes the wavelet.
        Index other = -1;
        for (Index j : active) {
            if (j != i1) {
                other = j;
                break;
            }
        }
        if (other < 0) {
            throw std::invalid_argument("find_rotation: active set needs at least two indices");
        }
        out.rotation = givens(i1, other, 0.0);
        out.wavelet = i1;
        double mass = 0.0;
        for (Index x : active) {
            if (x != i1) {
                mass += working(i1, x) * working(i1, x);
            }
        }
        out.error_contribution = 2.0 * mass;
        return out;
    }
    const std::size_t partners = std::min<std::size_t>(static_cast<std::size_t>(k - 1), candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(partners),
                      candidates.end(), [](const auto& a, const auto& b) {
                          return a.first > b.first || (a.first == b.first && a.second < b.second);
                      });
    out.partner_found = true;

    if (partners == 1 && rule == RotationRule::min_offdiag) {
        const Index i2 = candidates[0].second;
        double g11 = 0.0, g12 = 0.0, g22 = 0.0;
        for (Index x : active) {
            if (x != i1 && x != i2) {
                const double u = working(i1, x);
                const double v = working(i2, x);
                g11 += u * u;
                g12 += u * v;
                g22 += v * v;
            }
        }
        // Row 0 becomes the wavelet.  With phi = 2 theta its zeroed mass is
        //   alpha + beta cos(phi) + gamma sin(phi) + (delta sin(phi) + eps cos(phi))^2,
        // the last term being the coupling to the partner.
        const double alpha = 0.5 * (g11 + g22);
        const double beta = 0.5 * (g11 - g22);
        const double gamma = g12;
        const double delta = 0.5 * (working(i2, i2) - working(i1, i1));
        const double eps = working(i1, i2);
        auto mass = [&](double phi) {
            const double coupling = delta * std::sin(phi) + eps * std::cos(phi);
            return alpha + beta * std::cos(phi) + gamma * std::sin(phi) + coupling * coupling;
        };
        constexpr int samples = 64;
        constexpr double step = 2.0 * std::numbers::pi / samples;
        int best_k = 0;
        for (int k2 = 1; k2 < samples; ++k2) {
            if (mass(k2 * step) < mass(best_k * step)) {
                best_k = k2;
            }
        }
        double lo = (best_k - 1) * step;
        double hi = (best_k + 1) * step;
        const double ratio = 0.5 * (std::sqrt(5.0) - 1.0);
        for (int it = 0; it < 60; ++it) {
            const double m1 = hi - ratio * (hi - lo);
            const double m2 = lo + ratio * (hi - lo);
            if (mass(m1) <= mass(m2)) {
                hi = m2;
            } else {
                lo = m1;
            }
        }
        const double theta = 0.25 * (lo + hi);
        const double c = std::cos(theta);
        const double s = std::sin(theta);
        Eigen::MatrixXd blk(2, 2);
        blk << c, s, -s, c;
        out.rotation = {{i1, i2}, std::move(blk), 0};
        out.wavelet = i1;
        double off = 0.0;
        for (Index x : active) {
            if (x != i1 && x != i2) {
                const double e = c * working(i1, x) + s * working(i2, x);
                off += e * e;
            }
        }
        out.error_contribution = 2.0 * off;
        return out;
    } else if (partners == 1 && rule == RotationRule::gram) {
        const Index i2 = candidates[0].second;
        const double theta =
            detail::reduce_jacobi_angle(0.5 * std::atan2(2.0 * gram(i1, i2), gram(i2, i2) - gram(i1, i1)));
        out.rotation = givens(i1, i2, theta);
    } else if (partners == 1) {
        const Index i2 = candidates[0].second;
        const double theta = detail::reduce_jacobi_angle(
            0.5 * std::atan2(2.0 * working(i1, i2), working(i2, i2) - working(i1, i1)));
        out.rotation = givens(i1, i2, theta);
    } else {
        IndexSet group{i1};
        for (std::size_t p = 0; p < partners; ++p) {
            group.push_back(candidates[p].second);
        }
        const Index g = static_cast<Index>(group.size());
        Eigen::MatrixXd sub(g, g);
        for (Index p = 0; p < g; ++p) {
            for (Index q = 0; q < g; ++q) {
                sub(p, q) = working(group[p], group[q]);
            }
        }
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sub);
        out.rotation = {std::move(group), eig.eigenvectors().transpose(), 0};
    }

    const auto& rot = out.rotation;
    std::vector<char> in_group(working.rows(), 0);
    for (Index i : rot.indices) {
        in_group[i] = 1;
    }
    double best = std::numeric_limits<double>::infinity();
    for (Index p = 0; p < rot.order(); ++p) {
        double mass = 0.0;
        for (Index x : active) {
            if (!in_group[x]) {
                const double e = detail::rotated_entry(working, rot, p, x);
                mass += e * e;
            }
        }
        if (mass < best) {
            best = mass;
            out.wavelet = rot.indices[p];
        }
    }
    out.error_contribution = 2.0 * best;
    return out;
}

//
// Partial MMF of one dense symmetric block.  Retires `quota` indices (fewer
// if the block runs out of pairs), zeroing each retired row/column inside
// the block.
//
struct BlockFactorization {
    /// Rotations in block-local indices.
    std::vector<KPointRotation> rotations;
    /// Block-local retired indices, in retirement order.
    IndexSet retired;
    /// Final working block: active part rotated, retired rows/columns zero off the diagonal.
    Eigen::MatrixXd working;
    double error_sq = 0.0;
};

inline BlockFactorization factor_block(Eigen::MatrixXd block, Index quota, std::uint64_t seed, int k = 2,
                                       RotationRule rule = RotationRule::jacobi, bool fresh_pairs = false)
{
    const Index b = block.rows();
    BlockFactorization out;
    Eigen::MatrixXd gram = Eigen::MatrixXd(block.transpose() * block);
    IndexSet active(b);
    std::iota(active.begin(), active.end(), Index{0});
    std::vector<Index> position(b);
    std::iota(position.begin(), position.end(), Index{0});
    std::mt19937_64 rng(seed);
    std::vector<Index> support;

    // Indices not yet touched by a rotation of this call.
    IndexSet fresh = active;
    std::vector<Index> fresh_pos = position;
    auto drop_fresh = [&](Index i) {
        const Index fp = fresh_pos[i];
        if (fp < 0) {
            return;
        }
        fresh[fp] = fresh.back();
        fresh_pos[fresh[fp]] = fp;
        fresh.pop_back();
        fresh_pos[i] = -1;
    };

    for (Index level = 0; level < quota && active.size() >= 2; ++level) {
        const bool use_fresh = fresh_pairs && fresh.size() >= 2;
        const IndexSet& pool = use_fresh ? fresh : active;
        std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
        const Index i1 = pool[pick(rng)];
        RotationChoice choice;
        if (use_fresh) {
            drop_fresh(i1);
            choice = find_rotation(block, gram, active, i1, k, rule, fresh);
        } else {
            choice = find_rotation(block, gram, active, i1, k, rule);
        }
        if (choice.partner_found) {
            detail::conjugate(block, choice.rotation);
            detail::conjugate(gram, choice.rotation);
        }
        for (Index i : choice.rotation.indices) {
            drop_fresh(i);
        }
        const Index w = choice.wavelet;

        // Remove w from the active set, then account for and zero its row.
        const Index pos = position[w];
        active[pos] = active.back();
        position[active[pos]] = pos;
        active.pop_back();

        support.clear();
        double mass = 0.0;
        for (Index x : active) {
            const double e = block(w, x);
            if (e != 0.0) {
                support.push_back(x);
                mass += e * e;
            }
        }
        out.error_sq += 2.0 * mass;
        for (Index x : support) {
            const double ex = block(w, x);
            for (Index y : support) {
                gram(x, y) -= ex * block(w, y);
            }
        }
        for (Index x : support) {
            block(w, x) = 0.0;
            block(x, w) = 0.0;
        }
        out.rotations.push_back(std::move(choice.rotation));
        out.retired.push_back(w);
    }
    out.working = std::move(block);
    return out;
}

namespace detail {

inline MMFFactorization assemble_from_block(Index n, BlockFactorization&& bf, std::span<const Index> ids)
{
    MMFFactorization f;
    f.n = n;
    for (auto& r : bf.rotations) {
        for (auto& i : r.indices) {
            i = ids[i];
        }
    }
    f.rotations = std::move(bf.rotations);
    std::vector<char> retired(bf.working.rows(), 0);
    for (Index w : bf.retired) {
        retired[w] = 1;
        f.retired.push_back(ids[w]);
        f.h.wavelet_indices.push_back(ids[w]);
        f.h.diagonal.push_back(bf.working(w, w));
    }
    IndexSet core_local;
    for (Index i = 0; i < bf.working.rows(); ++i) {
        if (!retired[i]) {
            core_local.push_back(i);
        }
    }
    const Index c = static_cast<Index>(core_local.size());
    f.h.core.resize(c, c);
    for (Index p = 0; p < c; ++p) {
        f.h.core_indices.push_back(ids[core_local[p]]);
        for (Index q = 0; q < c; ++q) {
            f.h.core(p, q) = bf.working(core_local[p], core_local[q]);
        }
    }
    f.recorded_error_sq = bf.error_sq;
    for (std::size_t l = 0; l < f.rotations.size(); ++l) {
        f.rotations[l].level = static_cast<Index>(l + 1);
    }
    f.stage_ends.push_back(f.levels());
    return f;
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b)
{
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b)};
    std::uint64_t out[1];
    std::uint32_t words[2];
    seq.generate(words, words + 2);
    out[0] = (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
    return out[0];
}

} // namespace detail

//
// Single-stream greedy MMF on the dense matrix with delta_l = n - l.  Runs
// `levels` levels or stops when the active set reaches config.target_core.
//
inline MMFFactorization greedy_mmf(const SparseSymMatrix& a, Index levels, const PmmfConfig& config = {})
{
    config.validate();
    const Index n = a.n();
    const Index quota = std::max<Index>(0, std::min(levels, n - std::max<Index>(config.target_core, 1)));
    IndexSet ids(n);
    std::iota(ids.begin(), ids.end(), Index{0});
    auto bf = factor_block(a.to_dense(), quota, detail::mix_seed(config.seed, 0, 0), config.k, config.rule, config.fresh_pairs);
    return detail::assemble_from_block(n, std::move(bf), ids);
}

//
// Rough clustering of the active columns by normalized inner product.
// Leaders are drawn in seeded random order; each cluster grows from its
// leader over columns with a nonzero inner product with the cluster,
// preferring columns most similar to the leader, until it holds max_block
// columns.  Columns with no coupling never join a cluster they are not
// coupled to.
//
inline std::vector<IndexSet> cluster_columns(const SparseSymMatrix& a, std::span<const Index> active, Index max_block,
                                             std::uint64_t seed)
{
    if (max_block < 1) {
        throw std::invalid_argument("cluster_columns: max_block must be positive");
    }
    const Index n = a.n();
    if (static_cast<Index>(active.size()) <= max_block) {
        IndexSet all(active.begin(), active.end());
        std::sort(all.begin(), all.end());
        return {all};
    }
    std::vector<char> is_active(n, 0);
    for (Index i : active) {
        is_active[i] = 1;
    }
    std::vector<double> norms(n, 0.0);
    for (Index i : active) {
        double s = 0.0;
        for (double v : a.col_values(i)) {
            s += v * v;
        }
        norms[i] = std::sqrt(s);
    }
    auto cosine = [&](Index i, Index j) {
        if (norms[i] == 0.0 || norms[j] == 0.0) {
            return 0.0;
        }
        return std::abs(sparse_dot(a.col_indices(i), a.col_values(i), a.col_indices(j), a.col_values(j)))
               / (norms[i] * norms[j]);
    };

    IndexSet order(active.begin(), active.end());
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);

    std::vector<char> assigned(n, 0);
    std::vector<Index> seen_by(n, -1);
    std::vector<IndexSet> clusters;
    using Entry = std::pair<double, Index>;
    auto cmp = [](const Entry& x, const Entry& y) { return x.first < y.first || (x.first == y.first && x.second > y.second); };
    for (Index leader : order) {
        if (assigned[leader]) {
            continue;
        }
        const Index cid = static_cast<Index>(clusters.size());
        IndexSet members{leader};
        assigned[leader] = 1;
        std::priority_queue<Entry, std::vector<Entry>, decltype(cmp)> frontier(cmp);
        auto expand = [&](Index c) {
            for (Index r : a.col_indices(c)) {
                for (Index c2 : a.col_indices(r)) {
                    if (is_active[c2] && !assigned[c2] && seen_by[c2] != cid) {
                        seen_by[c2] = cid;
                        frontier.push({cosine(leader, c2), c2});
                    }
                }
            }
        };
        expand(leader);
        while (static_cast<Index>(members.size()) < max_block && !frontier.empty()) {
            const Index c = frontier.top().second;
            frontier.pop();
            if (assigned[c]) {
                continue;
            }
            assigned[c] = 1;
            members.push_back(c);
            expand(c);
        }
        std::sort(members.begin(), members.end());
        clusters.push_back(std::move(members));
    }
    return clusters;
}

namespace detail {

using SparseRow = std::vector<std::pair<Index, double>>;

/// Row-wise rotation rows[I] <- block * rows[I] on sorted sparse rows.
inline void rotate_sparse_rows(std::vector<SparseRow>& rows, const KPointRotation& rot)
{
    const Index k = rot.order();
    std::vector<Index> cols;
    for (Index p = 0; p < k; ++p) {
        for (const auto& [c, v] : rows[rot.indices[p]]) {
            cols.push_back(c);
        }
    }
    std::sort(cols.begin(), cols.end());
    cols.erase(std::unique(cols.begin(), cols.end()), cols.end());
    std::vector<SparseRow> out(k);
    Eigen::MatrixXd dense = Eigen::MatrixXd::Zero(k, static_cast<Index>(cols.size()));
    for (Index p = 0; p < k; ++p) {
        for (const auto& [c, v] : rows[rot.indices[p]]) {
            const auto pos = std::lower_bound(cols.begin(), cols.end(), c) - cols.begin();
            dense(p, pos) = v;
        }
    }
    const Eigen::MatrixXd mixed = rot.block * dense;
    for (Index p = 0; p < k; ++p) {
        SparseRow r;
        for (std::size_t q = 0; q < cols.size(); ++q) {
            if (mixed(p, static_cast<Index>(q)) != 0.0) {
                r.push_back({cols[q], mixed(p, static_cast<Index>(q))});
            }
        }
        rows[rot.indices[p]] = std::move(r);
    }
}

inline std::vector<SparseRow> transpose_rows(const std::vector<SparseRow>& rows)
{
    std::vector<SparseRow> t(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        for (const auto& [c, v] : rows[r]) {
            t[c].push_back({static_cast<Index>(r), v});
        }
    }
    return t;
}

inline SparseSymMatrix rows_to_matrix(Index n, const std::vector<SparseRow>& rows)
{
    std::vector<Triplet> t;
    for (Index r = 0; r < n; ++r) {
        for (const auto& [c, v] : rows[r]) {
            t.push_back({r, c, v});
        }
    }
    // Rotated cross couplings are symmetric only to roundoff.
    return SparseSymMatrix::symmetrize(CsrMatrix::from_triplets(n, n, std::move(t)));
}

inline std::vector<SparseRow> matrix_to_rows(const SparseSymMatrix& a)
{
    std::vector<SparseRow> rows(a.n());
    for (Index r = 0; r < a.n(); ++r) {
        auto ci = a.col_indices(r);
        auto cv = a.col_values(r);
        for (std::size_t p = 0; p < ci.size(); ++p) {
            rows[r].push_back({ci[p], cv[p]});
        }
    }
    return rows;
}

} // namespace detail

//
// Parallel blocked MMF.  Each stage clusters the active columns, runs a
// partial greedy factorization inside every cluster independently, and
// reassembles the active submatrix.  Off-cluster couplings of the stage's
// wavelets are rotated by both clusters' compound rotations and accounted
// once the stage is complete, so recorded_error_sq stays exact.
//
inline MMFFactorization pmmf(const SparseSymMatrix& a, const PmmfConfig& config = {})
{
    config.validate();
    const Index n = a.n();
    MMFFactorization f;
    f.n = n;

    std::vector<detail::SparseRow> rows = detail::matrix_to_rows(a);
    IndexSet active(n);
    std::iota(active.begin(), active.end(), Index{0});
    const Index target = std::max<Index>(config.target_core, 1);

    for (Index stage = 0; stage < config.stages_cap && static_cast<Index>(active.size()) > target; ++stage) {
        const SparseSymMatrix current = detail::rows_to_matrix(n, rows);
        rows = detail::matrix_to_rows(current);
        const auto clusters = cluster_columns(current, active, config.max_block,
                                              detail::mix_seed(config.seed, 0x5eed, static_cast<std::uint64_t>(stage)));
        const Index nc = static_cast<Index>(clusters.size());

        std::vector<Index> quota(nc, 0);
        Index total = 0;
        for (Index c = 0; c < nc; ++c) {
            const Index sz = static_cast<Index>(clusters[c].size());
            if (sz >= 2) {
                quota[c] = std::min<Index>(
                    static_cast<Index>(std::ceil(config.wavelet_fraction * static_cast<double>(sz))), sz - 1);
            }
            total += quota[c];
        }
        const Index allowed = static_cast<Index>(active.size()) - target;
        if (total > allowed) {
            std::vector<Index> wanted = quota;
            Index assigned = 0;
            for (Index c = 0; c < nc; ++c) {
                quota[c] = wanted[c] * allowed / total;
                assigned += quota[c];
            }
            for (Index c = 0; c < nc && assigned < allowed; ++c) {
                if (quota[c] < wanted[c]) {
                    ++quota[c];
                    ++assigned;
                }
            }
        }

        std::vector<BlockFactorization> results(nc);
        parallel_for(nc, [&](Index c) {
            const auto& ids = clusters[c];
            const Index sz = static_cast<Index>(ids.size());
            Eigen::MatrixXd block = Eigen::MatrixXd::Zero(sz, sz);
            for (Index p = 0; p < sz; ++p) {
                for (const auto& [col, v] : rows[ids[p]]) {
                    const auto it = std::lower_bound(ids.begin(), ids.end(), col);
                    if (it != ids.end() && *it == col) {
                        block(p, it - ids.begin()) = v;
                    }
                }
            }
            results[c] = factor_block(std::move(block), quota[c],
                                      detail::mix_seed(config.seed, static_cast<std::uint64_t>(stage + 1),
                                                       static_cast<std::uint64_t>(c)),
                                      config.k, config.rule, config.fresh_pairs);
        });

        Index retired_now = 0;
        for (const auto& r : results) {
            retired_now += static_cast<Index>(r.retired.size());
        }
        if (retired_now == 0) {
            f.flags.push_back("stage_no_progress");
            break;
        }

        std::vector<Index> cluster_of(n, -1);
        for (Index c = 0; c < nc; ++c) {
            for (Index i : clusters[c]) {
                cluster_of[i] = c;
            }
        }
        std::vector<char> retired_flag(n, 0);
        std::vector<KPointRotation> stage_rotations;
        for (Index c = 0; c < nc; ++c) {
            auto& r = results[c];
            for (auto& rot : r.rotations) {
                for (auto& i : rot.indices) {
                    i = clusters[c][i];
                }
            }
            for (Index w : r.retired) {
                retired_flag[clusters[c][w]] = 1;
            }
        }

        // Off-cluster couplings: X <- Qbar X Qbar^T applied as row rotations, transpose, row rotations.
        std::vector<detail::SparseRow> cross(n);
        for (Index r : active) {
            for (const auto& [col, v] : rows[r]) {
                if (cluster_of[col] >= 0 && cluster_of[col] != cluster_of[r]) {
                    cross[r].push_back({col, v});
                }
            }
        }
        bool any_cross = false;
        for (const auto& r : cross) {
            any_cross = any_cross || !r.empty();
        }
        if (any_cross) {
            for (const auto& r : results) {
                for (const auto& rot : r.rotations) {
                    detail::rotate_sparse_rows(cross, rot);
                }
            }
            cross = detail::transpose_rows(cross);
            for (const auto& r : results) {
                for (const auto& rot : r.rotations) {
                    detail::rotate_sparse_rows(cross, rot);
                }
            }
        }

        double stage_error = 0.0;
        for (const auto& r : results) {
            stage_error += r.error_sq;
        }
        for (Index w : active) {
            if (!retired_flag[w]) {
                continue;
            }
            for (const auto& [col, v] : cross[w]) {
                stage_error += (retired_flag[col] ? 1.0 : 2.0) * v * v;
            }
        }
        f.recorded_error_sq += stage_error;

        // Reassemble the active submatrix from cluster blocks and rotated couplings.
        std::vector<detail::SparseRow> next(n);
        for (Index c = 0; c < nc; ++c) {
            const auto& ids = clusters[c];
            const auto& wk = results[c].working;
            for (std::size_t p = 0; p < ids.size(); ++p) {
                if (retired_flag[ids[p]]) {
                    continue;
                }
                for (std::size_t q = 0; q < ids.size(); ++q) {
                    const double v = wk(static_cast<Index>(p), static_cast<Index>(q));
                    if (!retired_flag[ids[q]] && v != 0.0) {
                        next[ids[p]].push_back({ids[q], v});
                    }
                }
            }
        }
        for (Index r : active) {
            if (retired_flag[r]) {
                continue;
            }
            for (const auto& [col, v] : cross[r]) {
                if (!retired_flag[col]) {
                    next[r].push_back({col, v});
                }
            }
            std::sort(next[r].begin(), next[r].end());
        }

        for (Index c = 0; c < nc; ++c) {
            const auto& ids = clusters[c];
            for (Index w : results[c].retired) {
                f.retired.push_back(ids[w]);
                f.h.wavelet_indices.push_back(ids[w]);
                f.h.diagonal.push_back(results[c].working(w, w));
            }
            for (auto& rot : results[c].rotations) {
                rot.level = static_cast<Index>(f.rotations.size() + 1);
                f.rotations.push_back(std::move(rot));
            }
        }
        f.stage_ends.push_back(f.levels());

        rows = std::move(next);
        IndexSet still;
        for (Index i : active) {
            if (!retired_flag[i]) {
                still.push_back(i);
            }
        }
        active = std::move(still);
    }
    if (static_cast<Index>(active.size()) > target && f.flags.empty()) {
        f.flags.push_back("stages_cap_reached");
    }

    const Index c = static_cast<Index>(active.size());
    f.h.core_indices = active;
    f.h.core = Eigen::MatrixXd::Zero(c, c);
    for (Index p = 0; p < c; ++p) {
        for (const auto& [col, v] : rows[active[p]]) {
            const auto it = std::lower_bound(active.begin(), active.end(), col);
            if (it != active.end() && *it == col) {
                f.h.core(p, it - active.begin()) = v;
            }
        }
    }
    return f;
}

/// Q v with Q = Q_L ... Q_1.
inline void apply_rotations(const MMFFactorization& f, std::span<double> v)
{
    for (const auto& r : f.rotations) {
        r.apply(v);
    }
}

/// Q^T v.
inline void apply_rotations_transpose(const MMFFactorization& f, std::span<double> v)
{
    for (auto it = f.rotations.rbegin(); it != f.rotations.rend(); ++it) {
        it->apply_transpose(v);
    }
}

/// Q_1^T ... Q_L^T H Q_L ... Q_1 v.
inline Vector apply_factored(const MMFFactorization& f, std::span<const double> v)
{
    require_dim(v.size(), static_cast<std::size_t>(f.n), "apply_factored");
    Vector w(v.begin(), v.end());
    apply_rotations(f, w);
    Vector out(f.n, 0.0);
    const Index c = static_cast<Index>(f.h.core_indices.size());
    Eigen::VectorXd local(c);
    for (Index p = 0; p < c; ++p) {
        local[p] = w[f.h.core_indices[p]];
    }
    const Eigen::VectorXd core_out = f.h.core * local;
    for (Index p = 0; p < c; ++p) {
        out[f.h.core_indices[p]] = core_out[p];
    }
    for (std::size_t p = 0; p < f.h.wavelet_indices.size(); ++p) {
        out[f.h.wavelet_indices[p]] = f.h.diagonal[p] * w[f.h.wavelet_indices[p]];
    }
    apply_rotations_transpose(f, out);
    return out;
}

//
// Factored approximate inverse Q^T H^{-1} Q.  The core is inverted once
// through its eigendecomposition; near-zero eigenvalues are dropped
// (pseudo-inverse) and tiny diagonal entries replaced by a sign-preserving
// floor, each with a flag.
//
struct MmfPreconditioner {
    MMFFactorization factorization;
    Eigen::MatrixXd core_inverse;
    Vector diagonal_inverse;
    std::vector<std::string> flags;

    Index size() const { return factorization.n; }
};

inline MmfPreconditioner make_mmf_preconditioner(MMFFactorization f)
{
    MmfPreconditioner p;
    const auto& h = f.h;
    double scale = 0.0;
    for (double d : h.diagonal) {
        scale = std::max(scale, std::abs(d));
    }
    for (Index i = 0; i < h.core.rows(); ++i) {
        scale = std::max(scale, std::abs(h.core(i, i)));
    }
    const double eps = 1e-12 * scale;
    bool floored = false;
    p.diagonal_inverse.resize(h.diagonal.size());
    for (std::size_t i = 0; i < h.diagonal.size(); ++i) {
        double d = h.diagonal[i];
        if (std::abs(d) < eps || d == 0.0) {
            d = (d < 0.0 ? -1.0 : 1.0) * (eps > 0.0 ? eps : 1.0);
            floored = true;
        }
        p.diagonal_inverse[i] = 1.0 / d;
    }
    if (floored) {
        p.flags.push_back("diagonal_regularized");
    }
    if (h.core.rows() > 0) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(h.core);
        const Eigen::VectorXd lam = eig.eigenvalues();
        const double cut = 1e-12 * lam.cwiseAbs().maxCoeff();
        Eigen::VectorXd inv(lam.size());
        bool singular = false;
        for (Index i = 0; i < lam.size(); ++i) {
            if (std::abs(lam[i]) <= cut || lam[i] == 0.0) {
                inv[i] = 0.0;
                singular = true;
            } else {
                inv[i] = 1.0 / lam[i];
            }
        }
        p.core_inverse = eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose();
        if (singular) {
            p.flags.push_back("core_pseudo_inverse");
        }
    }
    p.factorization = std::move(f);
    return p;
}

/// Q_1^T ... Q_L^T H^{-1} Q_L ... Q_1 v.
inline Vector apply_inverse(const MmfPreconditioner& p, std::span<const double> v)
{
    const auto& f = p.factorization;
    require_dim(v.size(), static_cast<std::size_t>(f.n), "apply_inverse");
    Vector w(v.begin(), v.end());
    apply_rotations(f, w);
    Vector out(f.n, 0.0);
    const Index c = static_cast<Index>(f.h.core_indices.size());
    if (c > 0) {
        Eigen::VectorXd local(c);
        for (Index q = 0; q < c; ++q) {
            local[q] = w[f.h.core_indices[q]];
        }
        const Eigen::VectorXd core_out = p.core_inverse * local;
        for (Index q = 0; q < c; ++q) {
            out[f.h.core_indices[q]] = core_out[q];
        }
    }
    for (std::size_t q = 0; q < f.h.wavelet_indices.size(); ++q) {
        out[f.h.wavelet_indices[q]] = p.diagonal_inverse[q] * w[f.h.wavelet_indices[q]];
    }
    apply_rotations_transpose(f, out);
    return out;
}

/// Dense Q = Q_L ... Q_1 (test scale).
inline Eigen::MatrixXd dense_rotation_product(const MMFFactorization& f)
{
    Eigen::MatrixXd q = Eigen::MatrixXd::Identity(f.n, f.n);
    Vector col(f.n);
    for (Index j = 0; j < f.n; ++j) {
        for (Index i = 0; i < f.n; ++i) {
            col[i] = q(i, j);
        }
        apply_rotations(f, col);
        for (Index i = 0; i < f.n; ++i) {
            q(i, j) = col[i];
        }
    }
    return q;
}

/// Dense H (test scale).
inline Eigen::MatrixXd dense_core_diagonal(const MMFFactorization& f)
{
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(f.n, f.n);
    const auto& ci = f.h.core_indices;
    for (std::size_t p = 0; p < ci.size(); ++p) {
        for (std::size_t q = 0; q < ci.size(); ++q) {
            h(ci[p], ci[q]) = f.h.core(static_cast<Index>(p), static_cast<Index>(q));
        }
    }
    for (std::size_t p = 0; p < f.h.wavelet_indices.size(); ++p) {
        h(f.h.wavelet_indices[p], f.h.wavelet_indices[p]) = f.h.diagonal[p];
    }
    return h;
}

// Serialization: a line-oriented text format.  Doubles are written in their
// shortest round-trip decimal form, so a read-back factorization applies
// bit-identically.
//
//   mmfp-factorization 1
//   n <n>
//   error_sq <value>
//   rotations <count>
//   <level> <k> <k indices> <k*k block values, row-major>     (one per line)
//   retired <count> <indices...>
//   stage_ends <count> <levels...>
//   core <c> <c indices>
//   <c*c core values, row-major>
//   diagonal <count>
//   <index> <value>                                            (one per line)
//   flags <count> <tokens...>

namespace detail {

inline void put_double(std::ostream& out, double x)
{
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), x);
    out.write(buf, res.ptr - buf);
}

inline double get_double(std::istream& in)
{
    std::string tok;
    if (!(in >> tok)) {
        throw FormatError("mmf factorization: unexpected end of input");
    }
    double x = 0.0;
    auto res = std::from_chars(tok.data(), tok.data() + tok.size(), x);
    if (res.ec != std::errc() || res.ptr != tok.data() + tok.size()) {
        throw FormatError("mmf factorization: bad number '" + tok + "'");
    }
    return x;
}

template <typename T>
T get_value(std::istream& in)
{
    T v{};
    if (!(in >> v)) {
        throw FormatError("mmf factorization: malformed input");
    }
    return v;
}

inline void expect(std::istream& in, const std::string& word)
{
    std::string tok;
    if (!(in >> tok) || tok != word) {
        throw FormatError("mmf factorization: expected '" + word + "', found '" + tok + "'");
    }
}

} // namespace detail

inline constexpr int factorization_format_version = 1;

inline void write_factorization(std::ostream& out, const MMFFactorization& f)
{
    out << "mmfp-factorization " << factorization_format_version << '\n';
    out << "n " << f.n << '\n';
    out << "error_sq ";
    detail::put_double(out, f.recorded_error_sq);
    out << '\n';
    out << "rotations " << f.rotations.size() << '\n';
    for (const auto& r : f.rotations) {
        out << r.level << ' ' << r.order();
        for (Index i : r.indices) {
            out << ' ' << i;
        }
        for (Index p = 0; p < r.order(); ++p) {
            for (Index q = 0; q < r.order(); ++q) {
                out << ' ';
                detail::put_double(out, r.block(p, q));
            }
        }
        out << '\n';
    }
    out << "retired " << f.retired.size();
    for (Index i : f.retired) {
        out << ' ' << i;
    }
    out << '\n';
    out << "stage_ends " << f.stage_ends.size();
    for (Index s : f.stage_ends) {
        out << ' ' << s;
    }
    out << '\n';
    const Index c = static_cast<Index>(f.h.core_indices.size());
    out << "core " << c;
    for (Index i : f.h.core_indices) {
        out << ' ' << i;
    }
    out << '\n';
    for (Index p = 0; p < c; ++p) {
        for (Index q = 0; q < c; ++q) {
            if (q > 0) {
                out << ' ';
            }
            detail::put_double(out, f.h.core(p, q));
        }
        out << '\n';
    }
    out << "diagonal " << f.h.wavelet_indices.size() << '\n';
    for (std::size_t p = 0; p < f.h.wavelet_indices.size(); ++p) {
        out << f.h.wavelet_indices[p] << ' ';
        detail::put_double(out, f.h.diagonal[p]);
        out << '\n';
    }
    out << "flags " << f.flags.size();
    for (const auto& s : f.flags) {
        out << ' ' << s;
    }
    out << '\n';
}

inline MMFFactorization read_factorization(std::istream& in)
{
    using detail::expect;
    using detail::get_value;
    MMFFactorization f;
    expect(in, "mmfp-factorization");
    const int version = get_value<int>(in);
    if (version != factorization_format_version) {
        throw FormatError("mmf factorization: unsupported version " + std::to_string(version));
    }
    expect(in, "n");
    f.n = get_value<Index>(in);
    if (f.n < 1) {
        throw FormatError("mmf factorization: n must be positive");
    }
    auto check_index = [&](Index i) {
        if (i < 0 || i >= f.n) {
            throw FormatError("mmf factorization: index out of range");
        }
        return i;
    };
    expect(in, "error_sq");
    f.recorded_error_sq = detail::get_double(in);
    expect(in, "rotations");
    const auto nrot = get_value<std::size_t>(in);
    f.rotations.reserve(nrot);
    for (std::size_t r = 0; r < nrot; ++r) {
        KPointRotation rot;
        rot.level = get_value<Index>(in);
        const auto k = get_value<Index>(in);
        if (k < 1 || k > f.n) {
            throw FormatError("mmf factorization: bad rotation order");
        }
        for (Index p = 0; p < k; ++p) {
            rot.indices.push_back(check_index(get_value<Index>(in)));
        }
        rot.block.resize(k, k);
        for (Index p = 0; p < k; ++p) {
            for (Index q = 0; q < k; ++q) {
                rot.block(p, q) = detail::get_double(in);
            }
        }
        f.rotations.push_back(std::move(rot));
    }
    expect(in, "retired");
    const auto nret = get_value<std::size_t>(in);
    for (std::size_t p = 0; p < nret; ++p) {
        f.retired.push_back(check_index(get_value<Index>(in)));
    }
    expect(in, "stage_ends");
    const auto nst = get_value<std::size_t>(in);
    for (std::size_t p = 0; p < nst; ++p) {
        f.stage_ends.push_back(get_value<Index>(in));
    }
    expect(in, "core");
    const auto c = get_value<Index>(in);
    if (c < 0 || c > f.n) {
        throw FormatError("mmf factorization: bad core size");
    }
    for (Index p = 0; p < c; ++p) {
        f.h.core_indices.push_back(check_index(get_value<Index>(in)));
    }
    f.h.core.resize(c, c);
    for (Index p = 0; p < c; ++p) {
        for (Index q = 0; q < c; ++q) {
            f.h.core(p, q) = detail::get_double(in);
        }
    }
    expect(in, "diagonal");
    const auto nd = get_value<std::size_t>(in);
    for (std::size_t p = 0; p < nd; ++p) {
        f.h.wavelet_indices.push_back(check_index(get_value<Index>(in)));
        f.h.diagonal.push_back(detail::get_double(in));
    }
    expect(in, "flags");
    const auto nf = get_value<std::size_t>(in);
    for (std::size_t p = 0; p < nf; ++p) {
        f.flags.push_back(get_value<std::string>(in));
    }
    if (static_cast<Index>(f.h.core_indices.size() + f.h.wavelet_indices.size()) != f.n) {
        throw FormatError("mmf factorization: core and wavelet indices must cover [n]");
    }
    return f;
}

} // namespace mmfp

#endif
