#ifndef SPENV_SPATIALCOV_HPP
#define SPENV_SPATIALCOV_HPP

#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "spenv/matalg.hpp"

namespace spenv {

  /*! Planar site coordinates, one row per site. Distances are Euclidean;
   *  geographic coordinates must be projected before use. */
  class Locations {
  public:
    Locations() = default;

    explicit Locations(Matrix coords) : coords_(std::move(coords)) {
      if (coords_.cols() != 2)
        throw invalid_argument("Locations: expected two coordinate columns");
      if (coords_.rows() < 1)
        throw invalid_argument("Locations: need at least one site");
      if (!coords_.allFinite())
        throw invalid_argument("Locations: coordinates must be finite");
    }

    Index size() const { return coords_.rows(); }
    const Matrix& coords() const { return coords_; }
    double x(Index i) const { return coords_(i, 0); }
    double y(Index i) const { return coords_(i, 1); }

    Locations subset(const std::vector<Index>& rows) const {
      Matrix c(static_cast<Index>(rows.size()), 2);
      for (std::size_t k = 0; k < rows.size(); ++k)
        c.row(static_cast<Index>(k)) = coords_.row(rows[k]);
      return Locations(std::move(c));
    }

  private:
    Matrix coords_;
  };

  /*! Matern correlation family.
   *
   *  rho(h) = scale^2 * 2^(1-nu) / Gamma(nu) * (h/range)^nu * K_nu(h/range)
   *
   *  with nu = smoothness and K_nu the modified Bessel function of the
   *  second kind. `scale` is only used when simulating; fitted correlation
   *  matrices are normalized so that rho(0) = 1. `nugget` is added to the
   *  diagonal of correlation matrices.
   */
  struct MaternModel {
    double range = 1.0;
    double smoothness = 0.5;
    double scale = 1.0;
    double nugget = 1e-10;

    void validate() const {
      if (!(range > 0) || !std::isfinite(range))
        throw invalid_argument("Matern range must be positive and finite");
      if (!(smoothness > 0) || !std::isfinite(smoothness))
        throw invalid_argument("Matern smoothness must be positive and finite");
      if (!(scale >= 0) || !std::isfinite(scale))
        throw invalid_argument("Matern scale must be non-negative");
      if (!(nugget >= 0) || !std::isfinite(nugget))
        throw invalid_argument("nugget must be non-negative");
    }
  };

  namespace detail {
    // Unit-scale Matern correlation at scaled distance x = h / range.
    inline double matern_unit(double x, double nu) {
      if (x <= 0.0) return 1.0;
      if (x > 700.0) return 0.0;
      if (nu == 0.5) return std::exp(-x);
      if (nu == 1.5) return (1.0 + x) * std::exp(-x);
      if (nu == 2.5) return (1.0 + x + x * x / 3.0) * std::exp(-x);
      if (x < 1e-12) return 1.0;
      const double k = std::cyl_bessel_k(nu, x);
      if (k == 0.0) return 0.0;
      const double logv = (1.0 - nu) * std::log(2.0) - std::lgamma(nu) +
                          nu * std::log(x) + std::log(k);
      return std::min(1.0, std::exp(logv));
    }
  }  // namespace detail

  inline double matern(double h, const MaternModel& model) {
    if (!std::isfinite(h)) throw invalid_argument("matern: distance is not finite");
    if (h < 0) throw invalid_argument("matern: negative distance");
    model.validate();
    return model.scale * model.scale *
           detail::matern_unit(h / model.range, model.smoothness);
  }

  inline Matrix pairwise_dist(const Locations& loc) {
    const Index n = loc.size();
    Matrix d = Matrix::Zero(n, n);
    for (Index j = 0; j < n; ++j)
      for (Index i = j + 1; i < n; ++i) {
        const double v = std::hypot(loc.x(i) - loc.x(j), loc.y(i) - loc.y(j));
        d(i, j) = v;
        d(j, i) = v;
      }
    return d;
  }

  /// Distances between every site of `a` (rows) and `b` (columns).
  inline Matrix cross_dist(const Locations& a, const Locations& b) {
    Matrix d(a.size(), b.size());
    for (Index j = 0; j < b.size(); ++j)
      for (Index i = 0; i < a.size(); ++i)
        d(i, j) = std::hypot(a.x(i) - b.x(j), a.y(i) - b.y(j));
    return d;
  }

  /// Elementwise normalized Matern correlation of a distance matrix (no nugget).
  inline Matrix matern_correlation(const Matrix& dist, const MaternModel& model) {
    model.validate();
    Matrix out(dist.rows(), dist.cols());
    const double inv_range = 1.0 / model.range;
    for (Index j = 0; j < dist.cols(); ++j)
      for (Index i = 0; i < dist.rows(); ++i)
        out(i, j) = detail::matern_unit(dist(i, j) * inv_range, model.smoothness);
    return out;
  }

  /*! Positive definite site correlation matrix together with its Cholesky
   *  factor. Immutable after construction. */
  class CorrelationMatrix {
  public:
    static constexpr double max_nugget = 1e-6;

    /// rho_ij = matern(|s_i - s_j|) / matern(0) + nugget * 1{i = j}.
    /// A positive nugget is escalated x10 (up to 1e-6) if the Cholesky
    /// factorization fails; a zero nugget is never modified.
    static CorrelationMatrix from_distances(const Matrix& dist,
                                            const MaternModel& model) {
      Matrix base = matern_correlation(dist, model);
      double nugget = model.nugget;
      for (;;) {
        Matrix rho = base;
        rho.diagonal().array() += nugget;
        Eigen::LLT<Matrix> llt(rho);
        if (llt.info() == Eigen::Success)
          return CorrelationMatrix(std::move(rho), std::move(llt), nugget);
        if (nugget <= 0.0 || nugget * 10.0 > max_nugget * (1.0 + 1e-12))
          throw not_positive_definite("correlation matrix",
                                      matalg::min_eigenvalue(rho));
        nugget *= 10.0;
      }
    }

    static CorrelationMatrix from_locations(const Locations& loc,
                                            const MaternModel& model) {
      return from_distances(pairwise_dist(loc), model);
    }

    /// Wraps an explicit correlation matrix (tests, identity correlation).
    static CorrelationMatrix from_matrix(Matrix rho) {
      matalg::require_symmetric(rho);
      Eigen::LLT<Matrix> llt(rho);
      if (llt.info() != Eigen::Success)
        throw not_positive_definite("correlation matrix",
                                    matalg::min_eigenvalue(rho));
      return CorrelationMatrix(std::move(rho), std::move(llt), 0.0);
    }

    static CorrelationMatrix identity(Index n) {
      return from_matrix(Matrix::Identity(n, n));
    }

    Index size() const { return rho_.rows(); }
    const Matrix& rho() const { return rho_; }
    Matrix chol() const { return llt_.matrixL(); }
    double log_det() const { return log_det_; }
    double nugget_used() const { return nugget_; }

    /// L^{-1} M, so that W^T W = M^T rho^{-1} M.
    Matrix whiten(const Matrix& m) const {
      if (m.rows() != size()) throw invalid_argument("whiten: row mismatch");
      return llt_.matrixL().solve(m);
    }

    Matrix unwhiten(const Matrix& w) const { return llt_.matrixL() * w; }

    /// rho^{-1} M.
    Matrix solve(const Matrix& m) const {
      if (m.rows() != size()) throw invalid_argument("solve: row mismatch");
      return llt_.solve(m);
    }

    Matrix inverse() const {
      return matalg::symmetrize(solve(Matrix::Identity(size(), size())));
    }

  private:
    CorrelationMatrix(Matrix rho, Eigen::LLT<Matrix> llt, double nugget)
      : rho_(std::move(rho)), llt_(std::move(llt)), nugget_(nugget) {
      const Matrix l = llt_.matrixL();
      log_det_ = 2.0 * l.diagonal().array().log().sum();
    }

    Matrix rho_;
    Eigen::LLT<Matrix> llt_;
    double nugget_ = 0.0;
    double log_det_ = 0.0;
  };

  inline CorrelationMatrix correlation_matrix(const Locations& loc,
                                              const MaternModel& model) {
    return CorrelationMatrix::from_locations(loc, model);
  }

  inline Matrix whiten(const CorrelationMatrix& c, const Matrix& m) {
    return c.whiten(m);
  }

  // ---------------------------------------------------------------------
  // Diagnostics

  struct MoransI {
    double observed = 0;
    double expected = 0;
    double sd = 0;
    double p_value = 1;
  };

  /*! Moran's I with inverse-distance weights (w_ii = 0, no row
   *  standardization). sd is the randomization-hypothesis standard
   *  deviation; the p-value is two-sided under the normal approximation. */
  inline MoransI morans_i(const Vector& values, const Locations& loc) {
    const Index n = values.size();
    if (n != loc.size()) throw invalid_argument("morans_i: length mismatch");
    if (n < 3) throw invalid_argument("morans_i: need at least 3 sites");
    if (!values.allFinite()) throw invalid_argument("morans_i: non-finite values");

    const Vector z = values.array() - values.mean();
    const double m2 = z.squaredNorm();
    if (m2 <= 1e-300 * n)
      throw degenerate_variance("morans_i: values are constant");

    const Matrix d = pairwise_dist(loc);
    Matrix w = Matrix::Zero(n, n);
    for (Index j = 0; j < n; ++j)
      for (Index i = 0; i < n; ++i) {
        if (i == j) continue;
        if (d(i, j) == 0.0)
          throw invalid_argument("morans_i: coincident sites give infinite weight");
        w(i, j) = 1.0 / d(i, j);
      }

    const double s0 = w.sum();
    const double dn = static_cast<double>(n);
    MoransI out;
    out.observed = dn / s0 * (z.transpose() * w * z)(0, 0) / m2;
    out.expected = -1.0 / (dn - 1.0);

    const double s1 = 0.5 * (w + w.transpose()).array().square().sum();
    const Vector rc = w.rowwise().sum() + w.colwise().sum().transpose();
    const double s2 = rc.squaredNorm();
    double var;
    if (n > 3) {
      const double b2 = dn * z.array().pow(4).sum() / (m2 * m2);
      const double num = dn * ((dn * dn - 3 * dn + 3) * s1 - dn * s2 + 3 * s0 * s0) -
                         b2 * ((dn * dn - dn) * s1 - 2 * dn * s2 + 6 * s0 * s0);
      const double den = (dn - 1) * (dn - 2) * (dn - 3) * s0 * s0;
      var = num / den - out.expected * out.expected;
    } else {
      // randomization moments need n > 3; fall back to the normality form
      var = (dn * dn * s1 - dn * s2 + 3 * s0 * s0) / ((dn * dn - 1) * s0 * s0) -
            out.expected * out.expected;
    }
    out.sd = std::sqrt(std::max(var, 0.0));
    if (out.sd > 0) {
      const double zscore = (out.observed - out.expected) / out.sd;
      out.p_value = std::erfc(std::abs(zscore) / std::sqrt(2.0));
    }
    return out;
  }

  struct VariogramBin {
    double center = 0;
    double semivariance = std::numeric_limits<double>::quiet_NaN();
    long pair_count = 0;
  };

  /*! Matheron estimator over `n_bins` equal-width distance bins covering
   *  (0, max distance]. Zero-distance pairs are counted in the first bin.
   *  Empty bins carry NaN semivariance. */
  inline std::vector<VariogramBin> empirical_variogram(const Vector& values,
                                                       const Locations& loc,
                                                       int n_bins) {
    const Index n = values.size();
    if (n != loc.size()) throw invalid_argument("empirical_variogram: length mismatch");
    if (n < 2) throw invalid_argument("empirical_variogram: need at least 2 sites");
    if (n_bins < 1) throw invalid_argument("empirical_variogram: n_bins must be >= 1");

    const Matrix d = pairwise_dist(loc);
    const double dmax = d.maxCoeff();
    const double width = dmax > 0 ? dmax / n_bins : 1.0;
    std::vector<double> sum(n_bins, 0.0);
    std::vector<long> count(n_bins, 0);
    for (Index j = 0; j < n; ++j)
      for (Index i = j + 1; i < n; ++i) {
        int b = static_cast<int>(std::ceil(d(i, j) / width)) - 1;
        b = std::clamp(b, 0, n_bins - 1);
        const double diff = values(i) - values(j);
        sum[b] += diff * diff;
        ++count[b];
      }
    std::vector<VariogramBin> out(n_bins);
    for (int b = 0; b < n_bins; ++b) {
      out[b].center = (b + 0.5) * width;
      out[b].pair_count = count[b];
      if (count[b] > 0) out[b].semivariance = sum[b] / (2.0 * count[b]);
    }
    return out;
  }

}  // namespace spenv

#endif  // SPENV_SPATIALCOV_HPP
