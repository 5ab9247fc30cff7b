#include <cstdlib>

#include <gtest/gtest.h>

#include "mmfp/problems.hpp"
#include "mmfp/wspai.hpp"
#include "oracles.hpp"

using namespace mmfp;

namespace {

/// Dense forward transform matrix W^T of a basis (1D or Kronecker).
Eigen::MatrixXd dense_forward(const WaveletBasis& b)
{
    const Eigen::MatrixXd w1 = oracle::dense_transform(b.h(), b.length_per_dim(), b.levels());
    Eigen::MatrixXd w = w1;
    for (int d = 1; d < b.dims(); ++d) {
        w = oracle::kron(w1, w);
    }
    return w;
}

double cond2(const Eigen::MatrixXd& m)
{
    const Eigen::VectorXd s = Eigen::JacobiSVD<Eigen::MatrixXd>(m).singularValues();
    return s[0] / s[s.size() - 1];
}

Eigen::MatrixXd hc_dense_m(const HcPreconditioner& p) { return p.m.to_dense(); }

} // namespace

TEST(Ctw, IdentityMatrixGivesIdentity)
{
    const WaveletBasis b(4, 3, 32);
    for (Index bs : {1, 4, 32}) {
        const auto p = build_ctw(SparseSymMatrix::identity(32), b, bs);
        EXPECT_LE((ctw_dense_block_matrix(p) - Eigen::MatrixXd::Identity(32, 32)).norm(), 1e-14);
        EXPECT_LE(p.residual_fro, 1e-14);
    }
    const auto p = build_ctw(SparseSymMatrix::identity(32), b);
    const Vector r = oracle::random_vector(32, 1);
    const Vector z = apply_ctw(p, r);
    for (Index i = 0; i < 32; ++i) {
        EXPECT_NEAR(z[i], r[i], 1e-10);
    }
}

TEST(Ctw, FullBlockIsTheInverse)
{
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(16, 16);
    for (Index i = 0; i < 16; ++i) {
        d(i, i) = 1.0 + static_cast<double>(i);
    }
    const WaveletBasis b(2, 1, 16);
    const auto p = build_ctw(SparseSymMatrix::from_dense(d), b, 16);
    const Eigen::MatrixXd f = dense_forward(b);
    const Eigen::MatrixXd at = f * d * f.transpose();
    EXPECT_LE((ctw_dense_block_matrix(p) - at.inverse()).norm(), 1e-10);
}

TEST(Ctw, TransformMatchesDenseOracle)
{
    const Eigen::MatrixXd a = oracle::random_spd(32, 4);
    const WaveletBasis b(4, 3, 32);
    const Eigen::MatrixXd f = dense_forward(b);
    EXPECT_LE((wavelet_transform_matrix(SparseSymMatrix::from_dense(a), b) - f * a * f.transpose()).norm(),
              1e-12 * a.norm());
}

TEST(Ctw, ResidualNonIncreasingInBlockSize)
{
    const auto a = SparseSymMatrix::from_dense(oracle::random_spd(32, 77));
    const WaveletBasis b(4, 3, 32);
    double previous = std::numeric_limits<double>::infinity();
    for (Index bs : {1, 2, 4, 8, 16, 32}) {
        const auto p = build_ctw(a, b, bs);
        EXPECT_LE(p.residual_fro, previous * (1.0 + 1e-12)) << "block size " << bs;
        previous = p.residual_fro;
    }
    EXPECT_LT(previous, 1e-10);
}

TEST(Ctw, BandBlocksPartitionTheLayout)
{
    const WaveletBasis b(4, 3, 16, 2);
    const auto blocks = wavelet_band_blocks(b);
    // (levels + 1)^dims tensor bands.
    EXPECT_EQ(blocks.size(), 16u);
    Index total = 0;
    for (const auto& blk : blocks) {
        total += static_cast<Index>(blk.size());
    }
    EXPECT_EQ(total, b.size());
    EXPECT_THROW(build_ctw(SparseSymMatrix::identity(4), WaveletBasis(2, 1, 4), std::vector<IndexSet>{{0, 1}}),
                 std::invalid_argument);
}

TEST(Hc, IdentityMatrixRecoversTheBasis)
{
    for (int dims : {1, 2}) {
        const WaveletBasis b(4, 2, dims == 1 ? 32 : 8, dims);
        const auto p = build_hc(SparseSymMatrix::identity(b.size()), b);
        const Eigen::MatrixXd f = dense_forward(b);
        const Eigen::MatrixXd m = hc_dense_m(p);
        EXPECT_LT((f * m - Eigen::MatrixXd::Identity(b.size(), b.size())).norm(), 1e-10);
        EXPECT_LT((m - f.transpose()).norm(), 1e-10);
        const Vector r = oracle::random_vector(b.size(), 3);
        const Vector z = apply_hc(p, r);
        for (Index i = 0; i < b.size(); ++i) {
            EXPECT_NEAR(z[i], r[i], 1e-10);
        }
    }
}

TEST(Hc, ScalesInverselyWithTheMatrix)
{
    const WaveletBasis b(4, 2, 32);
    const Eigen::MatrixXd m1 = hc_dense_m(build_hc(SparseSymMatrix::identity(32), b));
    const Eigen::MatrixXd m4 = hc_dense_m(build_hc(SparseSymMatrix::identity(32, 4.0), b));
    EXPECT_LT((m4 - 0.25 * m1).norm(), 1e-12);
}

TEST(Hc, PatternContainmentAndLeastSquaresOptimality)
{
    struct Case {
        int taps, levels, dims;
        Index len;
    };
    for (auto c : {Case{2, 3, 1, 64}, Case{4, 3, 1, 128}, Case{4, 2, 2, 8}, Case{2, 2, 3, 4}}) {
        const WaveletBasis b(c.taps, c.levels, c.len, c.dims);
        const Index n = b.size();
        const Eigen::MatrixXd a = oracle::random_sparse_spd(n, 4, 500 + n);
        const auto p = build_hc(SparseSymMatrix::from_dense(a), b);
        const Eigen::MatrixXd fa = dense_forward(b) * a;
        const Eigen::MatrixXd m = hc_dense_m(p);
        const Eigen::MatrixXd resid = fa * m - Eigen::MatrixXd::Identity(n, n);
        for (Index j = 0; j < n; ++j) {
            const IndexSet s = column_support(b, j);
            for (Index i = 0; i < n; ++i) {
                if (m(i, j) != 0.0) {
                    ASSERT_TRUE(std::binary_search(s.begin(), s.end(), i)) << "entry outside the pattern";
                }
            }
            for (Index col : s) {
                EXPECT_LE(std::abs(fa.col(col).dot(resid.col(j))), 1e-10 * fa.col(col).norm())
                    << "n=" << n << " j=" << j;
            }
        }
        EXPECT_EQ(p.rank_deficient_columns, 0);
    }
}

TEST(Hc, BeatsTheDiagonalGuessOnItsPattern)
{
    const Index n = 64;
    const Eigen::MatrixXd a = oracle::random_sparse_spd(n, 4, 64);
    const auto sa = SparseSymMatrix::from_dense(a);
    const WaveletBasis b3(2, 3, n);
    const WaveletBasis b1(2, 1, n);
    const Eigen::MatrixXd f3 = dense_forward(b3);
    const Eigen::MatrixXd f1 = dense_forward(b1);
    const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(n, n);
    const double r3 = (f3 * a * hc_dense_m(build_hc(sa, b3)) - id).norm();
    const double r1 = (f1 * a * hc_dense_m(build_hc(sa, b1)) - id).norm();
    // W D^{-1} with D the diagonal of W^T A W lies in the admissible pattern.
    const Eigen::MatrixXd at = f3 * a * f3.transpose();
    const Eigen::MatrixXd guess = f3.transpose() * at.diagonal().cwiseInverse().asDiagonal();
    const double rg = (f3 * a * guess - id).norm();
    EXPECT_LT(r3, rg);
    EXPECT_LT(r3, r1);
}

TEST(Hc, NoDenseProductIsFormed)
{
    // W^T A stays sparse at any depth; local problems stay small while the
    // coarsest supports are short compared with the grid.
    const Index n = 1024;
    const auto a = build_lap1d(n).matrix;
    const auto deep = build_hc(a, WaveletBasis(4, 8, n));
    EXPECT_LT(deep.transformed_nnz, 64 * a.nnz());
    const auto shallow = build_hc(a, WaveletBasis(4, 3, n));
    EXPECT_LT(shallow.transformed_nnz, 16 * a.nnz());
    EXPECT_LT(shallow.peak_local_entries, n * n / 256);
}

TEST(Hc, ResultIndependentOfWorkerCount)
{
    const auto a = SparseSymMatrix::from_dense(oracle::random_sparse_spd(128, 5, 12));
    const WaveletBasis b(4, 4, 128);
    setenv("MMFP_WORKERS", "1", 1);
    const auto p1 = build_hc(a, b);
    const auto c1 = build_ctw(a, b);
    setenv("MMFP_WORKERS", "4", 1);
    const auto p4 = build_hc(a, b);
    const auto c4 = build_ctw(a, b);
    unsetenv("MMFP_WORKERS");
    EXPECT_EQ(p1.m.values(), p4.m.values());
    EXPECT_EQ(p1.m.col_indices(), p4.m.col_indices());
    EXPECT_EQ(c1.residual_fro, c4.residual_fro);
    for (std::size_t i = 0; i < c1.block_inverses.size(); ++i) {
        EXPECT_TRUE(c1.block_inverses[i] == c4.block_inverses[i]);
    }
}

TEST(WaveletSpai, OperatorsAreLinear)
{
    const auto a = SparseSymMatrix::from_dense(oracle::random_spd(32, 8));
    const WaveletBasis b(4, 3, 32);
    const auto ctw = build_ctw(a, b);
    const auto hc = build_hc(a, b);
    const Vector r1 = oracle::random_vector(32, 1);
    const Vector r2 = oracle::random_vector(32, 2);
    Vector mix(32);
    for (Index i = 0; i < 32; ++i) {
        mix[i] = 2.5 * r1[i] - 0.75 * r2[i];
    }
    for (auto apply : {+[](const CtwPreconditioner& p, const HcPreconditioner&, std::span<const double> r) {
                           return apply_ctw(p, r);
                       },
                       +[](const CtwPreconditioner&, const HcPreconditioner& p, std::span<const double> r) {
                           return apply_hc(p, r);
                       }}) {
        const Vector z = apply(ctw, hc, mix);
        const Vector z1 = apply(ctw, hc, r1);
        const Vector z2 = apply(ctw, hc, r2);
        for (Index i = 0; i < 32; ++i) {
            EXPECT_NEAR(z[i], 2.5 * z1[i] - 0.75 * z2[i], 1e-12 * (1.0 + std::abs(z[i])));
        }
    }
}

TEST(WaveletSpai, PreconditioningDoesNotWorsenConditioning)
{
    const Eigen::MatrixXd a = -build_lap1d(16).matrix.to_dense();
    const auto sa = SparseSymMatrix::from_dense(a);
    const WaveletBasis b(4, 2, 16);
    const Eigen::MatrixXd f = dense_forward(b);
    const auto ctw = build_ctw(sa, b);
    const auto hc = build_hc(sa, b);
    const Eigen::MatrixXd p_ctw = f.transpose() * ctw_dense_block_matrix(ctw) * f;
    const Eigen::MatrixXd hc_op = f * a * hc_dense_m(hc);
    EXPECT_LE(cond2(p_ctw * a), cond2(a));
    EXPECT_LE(cond2(hc_op), cond2(a));
}

TEST(WaveletSpai, RejectsMismatchedSizes)
{
    EXPECT_THROW(build_hc(SparseSymMatrix::identity(10), WaveletBasis(2, 1, 8)), DimensionError);
    EXPECT_THROW(build_ctw(SparseSymMatrix::identity(10), WaveletBasis(2, 1, 8)), DimensionError);
}
