#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "test_support.hpp"

using namespace spenv;
using namespace spenv::testing;

namespace {

  // K_nu(x) = int_0^inf exp(-x cosh t) cosh(nu t) dt, composite Simpson rule.
  double bessel_k_quadrature(double nu, double x) {
    const double upper = std::acosh(800.0 / x + 1.0);
    const int steps = 20000;
    const double h = upper / steps;
    double s = 0.0;
    for (int k = 0; k <= steps; ++k) {
      const double t = k * h;
      const double w = (k == 0 || k == steps) ? 1.0 : (k % 2 ? 4.0 : 2.0);
      s += w * std::exp(-x * std::cosh(t)) * std::cosh(nu * t);
    }
    return s * h / 3.0;
  }

  double matern_oracle(double h, double range, double nu) {
    const double x = h / range;
    return std::pow(2.0, 1.0 - nu) / std::tgamma(nu) * std::pow(x, nu) *
           bessel_k_quadrature(nu, x);
  }

  Locations make_locations(std::initializer_list<std::pair<double, double>> pts) {
    Matrix c(static_cast<Index>(pts.size()), 2);
    Index i = 0;
    for (const auto& [a, b] : pts) {
      c(i, 0) = a;
      c(i, 1) = b;
      ++i;
    }
    return Locations(c);
  }

}  // namespace

TEST(Locations, Validation) {
  EXPECT_THROW(Locations(Matrix(0, 2)), invalid_argument);
  EXPECT_THROW(Locations(Matrix::Zero(3, 3)), invalid_argument);
  Matrix bad = Matrix::Zero(2, 2);
  bad(1, 1) = std::nan("");
  EXPECT_THROW(Locations{bad}, invalid_argument);
}

TEST(PairwiseDist, ThreeFourFive) {
  const Matrix d = pairwise_dist(make_locations({{0, 0}, {3, 4}}));
  EXPECT_DOUBLE_EQ(d(0, 1), 5.0);
  EXPECT_DOUBLE_EQ(d(1, 0), 5.0);
  EXPECT_EQ(d(0, 0), 0.0);
}

TEST(PairwiseDist, SinglePoint) {
  const Matrix d = pairwise_dist(make_locations({{2, 7}}));
  EXPECT_EQ(d, Matrix::Zero(1, 1));
}

TEST(PairwiseDist, UnitSquare) {
  const Matrix d = pairwise_dist(make_locations({{0, 0}, {1, 0}, {1, 1}, {0, 1}}));
  const double s2 = std::sqrt(2.0);
  Matrix expect(4, 4);
  expect << 0, 1, s2, 1, 1, 0, 1, s2, s2, 1, 0, 1, 1, s2, 1, 0;
  EXPECT_LE((d - expect).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Matern, ExponentialAtHalf) {
  MaternModel m{2.0, 0.5, 1.0, 0.0};
  for (double h : {0.0, 0.1, 1.0, 3.7, 25.0})
    EXPECT_NEAR(matern(h, m), std::exp(-h / 2.0), 1e-15);
}

TEST(Matern, OriginEqualsScaleSquared) {
  MaternModel m{1.0, 0.8, 3.0, 0.0};
  EXPECT_DOUBLE_EQ(matern(0.0, m), 9.0);
}

TEST(Matern, BesselOracle) {
  EXPECT_NEAR(matern(1.0, MaternModel{1.0, 1.5, 1.0, 0.0}), matern_oracle(1.0, 1.0, 1.5), 1e-9);
  for (double nu : {0.3, 0.8, 1.5, 2.2})
    for (double h : {0.05, 0.4, 1.3, 4.0}) {
      const double v = matern(h, MaternModel{0.7, nu, 1.0, 0.0});
      EXPECT_NEAR(v, matern_oracle(h, 0.7, nu), 1e-8) << "nu=" << nu << " h=" << h;
    }
}

TEST(Matern, Errors) {
  const MaternModel m;
  EXPECT_THROW(matern(std::nan(""), m), invalid_argument);
  EXPECT_THROW(matern(std::numeric_limits<double>::infinity(), m), invalid_argument);
  EXPECT_THROW(matern(1.0, MaternModel{-1.0, 0.5, 1.0, 0.0}), invalid_argument);
  EXPECT_THROW(matern(1.0, MaternModel{1.0, 0.0, 1.0, 0.0}), invalid_argument);
}

TEST(Matern, MonotoneInDistance) {
  for (double nu : {0.2, 0.5, 1.0, 1.5, 2.0, 2.5}) {
    double prev = 2.0;
    for (int k = 0; k <= 400; ++k) {
      const double v = matern(0.025 * k, MaternModel{0.6, nu, 1.0, 0.0});
      EXPECT_LE(v, prev + 1e-14);
      prev = v;
    }
  }
}

TEST(CorrelationMatrix, SingleSite) {
  const auto c = correlation_matrix(make_locations({{1, 1}}), MaternModel{1, 0.5, 1, 1e-4});
  EXPECT_NEAR(c.rho()(0, 0), 1.0 + 1e-4, 1e-15);
}

TEST(CorrelationMatrix, CoincidentPointsZeroNugget) {
  EXPECT_THROW(correlation_matrix(make_locations({{0, 0}, {0, 0}}), MaternModel{1, 0.5, 1, 0.0}),
               not_positive_definite);
}

TEST(CorrelationMatrix, CoincidentPointsPositiveNugget) {
  const auto c = correlation_matrix(make_locations({{0, 0}, {0, 0}}), MaternModel{1, 0.5, 1, 1e-8});
  EXPECT_GT(c.nugget_used(), 0.0);
}

TEST(CorrelationMatrix, ExponentialKernelOracle) {
  std::mt19937_64 rng(21);
  for (Index n : {3, 12}) {
    const Locations loc = rand_locations(n, rng, 5.0);
    const double range = 1.7;
    const auto c = correlation_matrix(loc, MaternModel{range, 0.5, 1, 0.0});
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < n; ++j) {
        const double d = std::hypot(loc.x(i) - loc.x(j), loc.y(i) - loc.y(j));
        EXPECT_NEAR(c.rho()(i, j), std::exp(-d / range), 1e-12);
      }
  }
}

TEST(CorrelationMatrix, CachedFactorAndLogDet) {
  std::mt19937_64 rng(22);
  const auto c = correlation_matrix(rand_locations(15, rng), MaternModel{0.3, 1.2, 1, 1e-10});
  const Matrix l = c.chol();
  EXPECT_LE(rel_err(l * l.transpose(), c.rho()), 1e-12);
  EXPECT_NEAR(c.log_det(), 2.0 * l.diagonal().array().log().sum(), 1e-10);
  EXPECT_NEAR(c.log_det(), std::log(c.rho().determinant()), 1e-8);
  EXPECT_LE((c.rho() - c.rho().transpose()).norm(), 0.0);
}

TEST(Whiten, IdentityAndSelf) {
  std::mt19937_64 rng(23);
  const Matrix m = randn(4, 2, rng);
  EXPECT_LE((whiten(CorrelationMatrix::identity(4), m) - m).norm(), 1e-15);
  const auto c = correlation_matrix(rand_locations(4, rng), MaternModel{0.5, 0.5, 1, 0});
  EXPECT_LE((c.whiten(c.chol()) - Matrix::Identity(4, 4)).norm(), 1e-12);
}

TEST(Whiten, DenseInverseOracle) {
  std::mt19937_64 rng(24);
  const auto c = correlation_matrix(rand_locations(4, rng), MaternModel{0.8, 1.5, 1, 0});
  const Matrix m = randn(4, 2, rng);
  const Matrix w = c.whiten(m);
  const Matrix direct = m.transpose() * c.rho().inverse() * m;
  EXPECT_LE(rel_err(w.transpose() * w, direct), 1e-8);
  EXPECT_LE((c.unwhiten(w) - m).norm(), 1e-10);
}

TEST(MoransI, ExpectedValues) {
  std::mt19937_64 rng(25);
  for (Index n : {5, 269}) {
    const Locations loc = rand_locations(n, rng);
    const Vector v = randn(n, 1, rng);
    const auto mi = morans_i(v, loc);
    EXPECT_EQ(mi.expected, -1.0 / (n - 1.0));
  }
  const Locations loc = rand_locations(269, rng);
  EXPECT_NEAR(morans_i(randn(269, 1, rng), loc).expected, -0.003731343, 5e-10);
  EXPECT_EQ(morans_i(randn(5, 1, rng), rand_locations(5, rng)).expected, -0.25);
}

TEST(MoransI, DoubleSumOracleOnLine) {
  const Locations loc = make_locations({{0, 0}, {1, 0}, {2, 0}, {3, 0}});
  const Vector v = (Vector(4) << 1, 2, 3, 4).finished();
  double s0 = 0.0, num = 0.0, den = 0.0;
  const double mean = 2.5;
  for (int i = 0; i < 4; ++i) {
    den += (v(i) - mean) * (v(i) - mean);
    for (int j = 0; j < 4; ++j) {
      if (i == j) continue;
      const double w = 1.0 / std::abs(i - j);
      s0 += w;
      num += w * (v(i) - mean) * (v(j) - mean);
    }
  }
  const double expect = 4.0 / s0 * num / den;
  const auto mi = morans_i(v, loc);
  EXPECT_NEAR(mi.observed, expect, 1e-14);
  EXPECT_GT(mi.sd, 0.0);
  EXPECT_GE(mi.p_value, 0.0);
  EXPECT_LE(mi.p_value, 1.0);
}

TEST(MoransI, PermutationInvariant) {
  std::mt19937_64 rng(26);
  const Index n = 30;
  const Locations loc = rand_locations(n, rng);
  const Vector v = randn(n, 1, rng);
  std::vector<Index> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Vector pv(n);
  for (Index i = 0; i < n; ++i) pv(i) = v(perm[i]);
  const auto a = morans_i(v, loc);
  const auto b = morans_i(pv, loc.subset(perm));
  EXPECT_NEAR(a.observed, b.observed, 1e-12);
  EXPECT_NEAR(a.sd, b.sd, 1e-12);
}

TEST(MoransI, RandomizationVarianceByEnumeration) {
  // The randomization sd is the exact sd of I over all permutations of the values.
  const Locations loc = make_locations({{0, 0}, {1, 0.3}, {0.2, 1.1}, {1.4, 1.6}, {2.5, 0.4}});
  const Vector v = (Vector(5) << 0.3, -1.2, 2.0, 0.7, 1.1).finished();
  std::vector<Index> perm = {0, 1, 2, 3, 4};
  double s = 0.0, ss = 0.0;
  int count = 0;
  do {
    Vector pv(5);
    for (Index i = 0; i < 5; ++i) pv(i) = v(perm[i]);
    const double x = morans_i(pv, loc).observed;
    s += x;
    ss += x * x;
    ++count;
  } while (std::next_permutation(perm.begin(), perm.end()));
  const double mean = s / count;
  const double sd = std::sqrt(ss / count - mean * mean);
  const auto mi = morans_i(v, loc);
  EXPECT_NEAR(mean, mi.expected, 1e-12);
  EXPECT_NEAR(mi.sd, sd, 1e-10);
}

TEST(MoransI, Errors) {
  std::mt19937_64 rng(27);
  const Locations loc = rand_locations(6, rng);
  EXPECT_THROW(morans_i(Vector::Constant(6, 2.0), loc), degenerate_variance);
  EXPECT_THROW(morans_i(Vector::Ones(2), rand_locations(2, rng)), invalid_argument);
}

TEST(Variogram, ConstantField) {
  std::mt19937_64 rng(28);
  const auto bins = empirical_variogram(Vector::Constant(12, 3.0), rand_locations(12, rng), 4);
  for (const auto& b : bins)
    if (b.pair_count > 0) EXPECT_EQ(b.semivariance, 0.0);
}

TEST(Variogram, TwoPoints) {
  const auto bins =
      empirical_variogram((Vector(2) << 0, 2).finished(), make_locations({{0, 0}, {1, 1}}), 1);
  ASSERT_EQ(bins.size(), 1u);
  EXPECT_EQ(bins[0].pair_count, 1);
  EXPECT_DOUBLE_EQ(bins[0].semivariance, 2.0);
}

TEST(Variogram, PairEnumerationOracle) {
  std::mt19937_64 rng(29);
  const Index n = 10;
  const Locations loc = rand_locations(n, rng);
  const Vector v = randn(n, 1, rng);
  const int nb = 3;
  const auto bins = empirical_variogram(v, loc, nb);
  double dmax = 0.0;
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j)
      dmax = std::max(dmax, std::hypot(loc.x(i) - loc.x(j), loc.y(i) - loc.y(j)));
  std::vector<double> sum(nb, 0.0);
  std::vector<long> cnt(nb, 0);
  for (Index i = 0; i < n; ++i)
    for (Index j = i + 1; j < n; ++j) {
      const double d = std::hypot(loc.x(i) - loc.x(j), loc.y(i) - loc.y(j));
      int b = 0;
      while (b < nb - 1 && d > dmax * (b + 1) / nb) ++b;
      sum[b] += (v(i) - v(j)) * (v(i) - v(j));
      ++cnt[b];
    }
  long total = 0;
  for (int b = 0; b < nb; ++b) {
    EXPECT_EQ(bins[b].pair_count, cnt[b]);
    if (cnt[b]) EXPECT_NEAR(bins[b].semivariance, sum[b] / (2.0 * cnt[b]), 1e-12);
    total += bins[b].pair_count;
  }
  EXPECT_EQ(total, n * (n - 1) / 2);
}

TEST(Variogram, EmptyBinsAreUndefined) {
  const auto bins = empirical_variogram((Vector(3) << 0, 1, 2).finished(),
                                        make_locations({{0, 0}, {0.1, 0}, {10, 0}}), 20);
  long total = 0;
  int empty = 0;
  for (const auto& b : bins) {
    total += b.pair_count;
    if (b.pair_count == 0) {
      EXPECT_TRUE(std::isnan(b.semivariance));
      ++empty;
    }
  }
  EXPECT_EQ(total, 3);
  EXPECT_GT(empty, 0);
}
