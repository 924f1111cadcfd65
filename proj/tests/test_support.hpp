#ifndef SPENV_TEST_SUPPORT_HPP
#define SPENV_TEST_SUPPORT_HPP

#include <cmath>
#include <random>

#include "spenv/spenv.hpp"

namespace spenv::testing {

  inline Matrix randn(Index r, Index c, std::mt19937_64& rng) {
    std::normal_distribution<double> z(0.0, 1.0);
    Matrix a(r, c);
    for (Index j = 0; j < c; ++j)
      for (Index i = 0; i < r; ++i) a(i, j) = z(rng);
    return a;
  }

  inline Matrix rand_spd(Index r, std::mt19937_64& rng, double ridge = 0.5) {
    const Matrix a = randn(r, r, rng);
    return matalg::symmetrize(a * a.transpose() / r + ridge * Matrix::Identity(r, r));
  }

  inline Matrix rand_sym(Index r, std::mt19937_64& rng) {
    return matalg::symmetrize(randn(r, r, rng));
  }

  inline Matrix rand_orth(Index r, Index u, std::mt19937_64& rng) {
    return matalg::qf(randn(r, u, rng));
  }

  inline double rel_err(const Matrix& a, const Matrix& b) {
    const double den = std::max(b.norm(), 1e-300);
    return (a - b).norm() / den;
  }

  inline Locations rand_locations(Index n, std::mt19937_64& rng, double side = 1.0) {
    std::uniform_real_distribution<double> u(0.0, side);
    Matrix c(n, 2);
    for (Index i = 0; i < n; ++i) {
      c(i, 0) = u(rng);
      c(i, 1) = u(rng);
    }
    return Locations(c);
  }

  /// Dense log-density of vec(R) ~ N(0, Sigma) with an explicit covariance.
  inline double dense_gaussian_logpdf(const Vector& x, const Matrix& sigma) {
    Eigen::LDLT<Matrix> ldlt(sigma);
    const double logdet = ldlt.vectorD().array().log().sum();
    const double quad = x.dot(ldlt.solve(x));
    return -0.5 * logdet - 0.5 * quad - 0.5 * x.size() * std::log(2.0 * M_PI);
  }

}  // namespace spenv::testing

#endif  // SPENV_TEST_SUPPORT_HPP
