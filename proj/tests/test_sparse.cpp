#include <gtest/gtest.h>

#include "mmfp/sparse.hpp"
#include "oracles.hpp"

using namespace mmfp;

namespace {

SparseSymMatrix tridiag(Index n, double off, double diag)
{
    std::vector<Triplet> t;
    for (Index i = 0; i < n; ++i) {
        t.push_back({i, i, diag});
        if (i + 1 < n) {
            t.push_back({i, i + 1, off});
            t.push_back({i + 1, i, off});
        }
    }
    return SparseSymMatrix::from_triplets(n, std::move(t));
}

} // namespace

TEST(Matvec, IdentityReturnsInput)
{
    const auto id = SparseSymMatrix::identity(3);
    EXPECT_EQ(matvec(id, Vector{1, 2, 3}), (Vector{1, 2, 3}));
}

TEST(Matvec, TridiagonalRowSums)
{
    EXPECT_EQ(matvec(tridiag(3, 1.0, -2.0), Vector{1, 1, 1}), (Vector{-1, 0, -1}));
}

TEST(Matvec, MatchesDenseOracle)
{
    for (Index n : {1, 2, 8, 17, 64}) {
        const Eigen::MatrixXd d = oracle::random_sparse_spd(n, 3, 100 + n);
        const auto a = SparseSymMatrix::from_dense(d);
        const Vector v = oracle::random_vector(n, 7 + n);
        const Eigen::VectorXd want = d * oracle::to_eigen(v);
        const Eigen::VectorXd got = oracle::to_eigen(matvec(a, v));
        EXPECT_LE((got - want).norm(), 1e-13 * want.norm()) << "n=" << n;
    }
}

TEST(Matvec, RejectsWrongLength)
{
    EXPECT_THROW(matvec(SparseSymMatrix::identity(3), Vector{1, 2}), DimensionError);
}

TEST(FrobeniusNorm, Basics)
{
    EXPECT_EQ(frobenius_norm(SparseSymMatrix::from_triplets(3, {})), 0.0);
    EXPECT_EQ(frobenius_norm(SparseSymMatrix::identity(4)), 2.0);
    const Eigen::MatrixXd d = oracle::random_symmetric(6, 5);
    EXPECT_NEAR(frobenius_norm(SparseSymMatrix::from_dense(d)), d.norm(), 1e-14 * d.norm());
}

TEST(GramColumns, IdentityBlock)
{
    const IndexSet cols{0, 1};
    EXPECT_TRUE(gram_columns(SparseSymMatrix::identity(3), cols).isApprox(Eigen::MatrixXd::Identity(2, 2)));
}

TEST(GramColumns, DuplicatedColumnsGiveSquaredNorm)
{
    // Columns 0 and 1 are equal: rows 0 and 1 are equal as well.
    Eigen::MatrixXd d(3, 3);
    d << 1, 1, 2, 1, 1, 2, 2, 2, 5;
    const auto a = SparseSymMatrix::from_dense(d);
    const IndexSet cols{0, 1};
    const auto g = gram_columns(a, cols);
    EXPECT_DOUBLE_EQ(g(0, 1), d.col(0).squaredNorm());
}

TEST(GramColumns, MatchesDenseOracleAndIsPsd)
{
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const Eigen::MatrixXd d = oracle::random_symmetric(10, seed);
        const IndexSet cols{1, 4, 6, 9};
        Eigen::MatrixXd b(10, 4);
        for (int c = 0; c < 4; ++c) {
            b.col(c) = d.col(cols[c]);
        }
        const Eigen::MatrixXd want = b.transpose() * b;
        const Eigen::MatrixXd got = gram_columns(SparseSymMatrix::from_dense(d), cols);
        EXPECT_LE((got - want).norm(), 1e-13 * want.norm());
        EXPECT_GE(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(got).eigenvalues().minCoeff(), -1e-12);
    }
}

TEST(SparseSymMatrix, RejectsAsymmetricValues)
{
    EXPECT_THROW(SparseSymMatrix::from_triplets(2, {{0, 1, 1.0}, {1, 0, 2.0}}), DimensionError);
}

TEST(SparseSymMatrix, SymmetrizeIsExact)
{
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-1, 1);
    std::vector<Triplet> t;
    for (Index i = 0; i < 12; ++i) {
        for (Index j = 0; j < 12; ++j) {
            if ((i * 7 + j * 3) % 5 == 0) {
                t.push_back({i, j, u(rng)});
            }
        }
    }
    const auto s = SparseSymMatrix::symmetrize(CsrMatrix::from_triplets(12, 12, t));
    const Eigen::MatrixXd d = s.to_dense();
    EXPECT_EQ((d - d.transpose()).norm(), 0.0);
}

TEST(CsrMatrix, DuplicatesAreSummedAndColumnsSorted)
{
    const auto a = CsrMatrix::from_triplets(2, 3, {{0, 2, 1.0}, {0, 0, 2.0}, {0, 2, 0.5}, {1, 1, 0.0}});
    ASSERT_EQ(a.nnz(), 2);
    EXPECT_EQ(a.row_cols(0)[0], 0);
    EXPECT_EQ(a.row_cols(0)[1], 2);
    EXPECT_EQ(a.coeff(0, 2), 1.5);
}

TEST(PrincipalSubmatrix, MatchesDenseSelection)
{
    const Eigen::MatrixXd d = oracle::random_symmetric(9, 11);
    const IndexSet keep{0, 3, 4, 8};
    const auto sub = principal_submatrix(SparseSymMatrix::from_dense(d), keep).to_dense();
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 4; ++j) {
            EXPECT_EQ(sub(i, j), d(keep[i], keep[j]));
        }
    }
}
