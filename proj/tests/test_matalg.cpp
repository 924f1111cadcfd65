#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace spenv;
using namespace spenv::testing;

TEST(Vec, ColumnMajorStacking) {
  Matrix a(2, 2);
  a << 1, 2, 3, 4;
  const Vector v = matalg::vec(a);
  EXPECT_EQ(v, (Vector(4) << 1, 3, 2, 4).finished());
  EXPECT_EQ(matalg::vec(Matrix::Identity(2, 2)), (Vector(4) << 1, 0, 0, 1).finished());
}

TEST(Vec, RoundTrip) {
  std::mt19937_64 rng(1);
  const Matrix a = randn(3, 2, rng);
  EXPECT_EQ(matalg::unvec(matalg::vec(a), 3, 2), a);
  // element (i, j) sits at j*m + i
  EXPECT_EQ(matalg::vec(a)(1 * 3 + 2), a(2, 1));
}

TEST(Vech, LowerTriangleStacking) {
  Matrix a(2, 2);
  a << 1.5, 2.5, 2.5, 3.5;
  EXPECT_EQ(matalg::vech(a), (Vector(3) << 1.5, 2.5, 3.5).finished());
  EXPECT_EQ(matalg::vech(Matrix::Identity(3, 3)), (Vector(6) << 1, 0, 0, 1, 0, 1).finished());
}

TEST(Vech, AsymmetricInputRejected) {
  Matrix a(2, 2);
  a << 1, 2, 3, 4;
  EXPECT_THROW(matalg::vech(a), symmetry_error);
}

TEST(Vech, ExpansionOracle) {
  std::mt19937_64 rng(2);
  const Matrix a = rand_sym(4, rng);
  const Matrix e = matalg::expansion(4);
  EXPECT_LE((e * matalg::vech(a) - matalg::vec(a)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Structural, ScalarCase) {
  const auto s = matalg::structural(1, 1, 1);
  EXPECT_EQ(s.E_r, Matrix::Ones(1, 1));
  EXPECT_EQ(s.C_r, Matrix::Ones(1, 1));
  EXPECT_EQ(s.K_mn, Matrix::Ones(1, 1));
}

TEST(Structural, ExpansionTwo) {
  const auto s = matalg::structural(2, 2, 2);
  ASSERT_EQ(s.E_r.rows(), 4);
  ASSERT_EQ(s.E_r.cols(), 3);
  const Vector v = s.E_r * (Vector(3) << 1, 2, 5).finished();
  EXPECT_EQ(v, (Vector(4) << 1, 2, 2, 5).finished());
}

TEST(Structural, CommutationTranspose) {
  Matrix a(2, 2);
  a << 1, 2, 3, 4;
  const auto s = matalg::structural(2, 2, 2);
  EXPECT_EQ(s.K_mn * matalg::vec(a), (Vector(4) << 1, 2, 3, 4).finished());
  // independent oracle: vec of the explicit transpose
  EXPECT_EQ(s.K_mn * matalg::vec(a), matalg::vec(Matrix(a.transpose())));
}

TEST(Structural, InvalidDimensions) {
  EXPECT_THROW(matalg::structural(0, 1, 1), invalid_argument);
  EXPECT_THROW(matalg::structural(2, 0, 1), invalid_argument);
}

TEST(Structural, InvariantsOnRandomMatrices) {
  std::mt19937_64 rng(3);
  for (Index r = 1; r <= 5; ++r) {
    const auto s = matalg::structural(r, r + 1, r + 2);
    const Matrix a = rand_sym(r, rng);
    EXPECT_LE((s.E_r * matalg::vech(a) - matalg::vec(a)).norm(), 1e-14);
    EXPECT_LE((s.C_r * matalg::vec(a) - matalg::vech(a)).norm(), 1e-14);
    EXPECT_LE((s.E_r.transpose() * s.E_r * s.C_r - s.E_r.transpose()).norm(), 1e-14);
    // C_r is the Moore-Penrose inverse of E_r
    EXPECT_LE((s.C_r - matalg::pinv(s.E_r)).norm(), 1e-12);
    // general (non-symmetric) A: C_r reads the symmetric part, L_r the lower triangle
    const Matrix g = randn(r, r, rng);
    EXPECT_LE((s.C_r * matalg::vec(g) - matalg::vech(matalg::symmetrize(g))).norm(), 1e-14);
    Vector lower(r * (r + 1) / 2);
    Index k = 0;
    for (Index j = 0; j < r; ++j)
      for (Index i = j; i < r; ++i) lower(k++) = g(i, j);
    EXPECT_EQ(matalg::elimination(r) * matalg::vec(g), lower);
    const Matrix b = randn(r + 1, r + 2, rng);
    EXPECT_EQ(s.K_mn * matalg::vec(b), matalg::vec(Matrix(b.transpose())));
    EXPECT_EQ(matalg::commutation(r + 1, r + 2) * matalg::commutation(r + 2, r + 1),
              Matrix::Identity((r + 1) * (r + 2), (r + 1) * (r + 2)));
  }
}

TEST(Det0, DiagonalCase) {
  const Matrix a = (Vector(3) << 2, 3, 0).finished().asDiagonal();
  EXPECT_NEAR(matalg::det0(a), 6.0, 1e-12);
  EXPECT_EQ(matalg::det0_full(a).rank, 2);
}

TEST(Det0, ZeroMatrixEmptyProduct) {
  const auto d = matalg::det0_full(Matrix::Zero(3, 3));
  EXPECT_EQ(d.value, 1.0);
  EXPECT_EQ(d.rank, 0);
}

TEST(Det0, EqualsDeterminantOnPd) {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 20; ++t) {
    const Matrix a = rand_spd(4, rng);
    const double d = a.determinant();
    EXPECT_LE(std::abs(matalg::det0(a) - d) / d, 1e-10);
  }
}

TEST(Det0, RankTwoEigenOracle) {
  std::mt19937_64 rng(5);
  const Matrix q = rand_orth(3, 3, rng);
  const Matrix a = matalg::symmetrize(q * (Vector(3) << 4, 9, 0).finished().asDiagonal() *
                                      q.transpose());
  EXPECT_NEAR(matalg::det0(a), 36.0, 1e-9);
}

TEST(Pinv, BasicCases) {
  EXPECT_LE((matalg::pinv(Matrix::Identity(3, 3)) - Matrix::Identity(3, 3)).norm(), 1e-14);
  const Matrix d = (Vector(2) << 2, 0).finished().asDiagonal();
  const Matrix expect = (Vector(2) << 0.5, 0).finished().asDiagonal();
  EXPECT_LE((matalg::pinv(d) - expect).norm(), 1e-14);
}

TEST(Pinv, FullColumnRankLeftInverse) {
  std::mt19937_64 rng(6);
  const Matrix a = randn(3, 2, rng);
  EXPECT_LE((matalg::pinv(a) * a - Matrix::Identity(2, 2)).norm(), 1e-8);
  // normal-equations oracle
  const Matrix ne = (a.transpose() * a).inverse() * a.transpose();
  EXPECT_LE(rel_err(matalg::pinv(a), ne), 1e-10);
}

TEST(Pinv, PenroseConditions) {
  std::mt19937_64 rng(7);
  for (int t = 0; t < 10; ++t) {
    const Matrix a = randn(5, 2, rng) * randn(2, 4, rng);  // rank 2
    const Matrix ap = matalg::pinv(a);
    const double s = a.norm();
    EXPECT_LE((a * ap * a - a).norm() / s, 1e-8);
    EXPECT_LE((ap * a * ap - ap).norm() / ap.norm(), 1e-8);
    EXPECT_LE(((a * ap).transpose() - a * ap).norm(), 1e-8);
    EXPECT_LE(((ap * a).transpose() - ap * a).norm(), 1e-8);
  }
}

TEST(Proj, AxisAndOrthonormalCases) {
  const Matrix e1 = Vector::Unit(3, 0);
  const Matrix expect = (Vector(3) << 1, 0, 0).finished().asDiagonal();
  EXPECT_LE((matalg::proj(e1) - expect).norm(), 1e-14);
  std::mt19937_64 rng(8);
  const Matrix g = rand_orth(5, 2, rng);
  EXPECT_LE((matalg::proj(g) - g * g.transpose()).norm(), 1e-12);
}

TEST(Proj, ZeroMatrix) {
  EXPECT_EQ(matalg::proj(Matrix::Zero(3, 2)), Matrix::Zero(3, 3));
}

TEST(Proj, IdempotentRankTwoQrOracle) {
  std::mt19937_64 rng(9);
  const Matrix b = randn(4, 2, rng);
  const Matrix p = matalg::proj(b);
  EXPECT_LE((p * p - p).norm(), 1e-10);
  EXPECT_LE((p - p.transpose()).norm(), 1e-10);
  Eigen::FullPivLU<Matrix> lu(p);
  lu.setThreshold(1e-8);
  EXPECT_EQ(lu.rank(), 2);
  const Matrix q = Eigen::HouseholderQR<Matrix>(b).householderQ() * Matrix::Identity(4, 2);
  EXPECT_LE((p - q * q.transpose()).norm(), 1e-10);
  EXPECT_EQ(matalg::proj(b) + matalg::qproj(b), Matrix::Identity(4, 4));
}

TEST(OrthComplement, AxisCase) {
  const Matrix g = Vector::Unit(2, 0);
  const Matrix g0 = matalg::orth_complement(g);
  ASSERT_EQ(g0.cols(), 1);
  EXPECT_NEAR(std::abs(g0(1, 0)), 1.0, 1e-14);
  EXPECT_NEAR(g0(0, 0), 0.0, 1e-14);
}

TEST(OrthComplement, FullSpace) {
  const Matrix g0 = matalg::orth_complement(Matrix::Identity(3, 3));
  EXPECT_EQ(g0.rows(), 3);
  EXPECT_EQ(g0.cols(), 0);
}

TEST(OrthComplement, CompletesOrthogonalBasis) {
  std::mt19937_64 rng(10);
  const Matrix g = rand_orth(5, 2, rng);
  const Matrix g0 = matalg::orth_complement(g);
  Matrix full(5, 5);
  full << g, g0;
  EXPECT_LE((full.transpose() * full - Matrix::Identity(5, 5)).norm(), 1e-8);
  EXPECT_LE((g.transpose() * g0).norm(), 1e-8);
}

TEST(OrthComplement, RejectsNonOrthonormal) {
  Matrix g(3, 1);
  g << 1, 1, 0;
  EXPECT_THROW(matalg::orth_complement(g), invalid_argument);
}

TEST(SymEigen, DeterministicSigns) {
  std::mt19937_64 rng(11);
  const Matrix a = rand_sym(4, rng);
  const auto es = matalg::sym_eigen(a);
  for (Index j = 0; j < 4; ++j) {
    Index i = 0;
    while (std::abs(es.vectors(i, j)) <= 1e-12) ++i;
    EXPECT_GT(es.vectors(i, j), 0.0);
  }
  EXPECT_LE(rel_err(es.vectors * es.values.asDiagonal() * es.vectors.transpose(), a), 1e-12);
}
