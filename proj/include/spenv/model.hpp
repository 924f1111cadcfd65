#ifndef SPENV_MODEL_HPP
#define SPENV_MODEL_HPP

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "spenv/matalg.hpp"
#include "spenv/spatialcov.hpp"

namespace spenv {

  /*! Observed sites, responses Y (n x r) and covariates X (n x p). */
  struct SpatialDataset {
    Locations loc;
    Matrix Y;
    Matrix X;
    std::vector<std::string> response_names;
    std::vector<std::string> covariate_names;

    Index n() const { return Y.rows(); }
    Index r() const { return Y.cols(); }
    Index p() const { return X.cols(); }

    /// Fills in default names (Y1.., X1..) where none were given.
    void default_names() {
      if (response_names.empty())
        for (Index j = 0; j < r(); ++j) response_names.push_back("Y" + std::to_string(j + 1));
      if (covariate_names.empty())
        for (Index j = 0; j < p(); ++j) covariate_names.push_back("X" + std::to_string(j + 1));
    }

    void validate() const {
      if (Y.cols() < 1) throw invalid_argument("dataset needs at least one response");
      if (loc.size() != Y.rows() || X.rows() != Y.rows())
        throw invalid_argument("dataset: locations, Y and X must have the same row count");
      if (!(Y.rows() > X.cols()))
        throw invalid_argument("dataset: need more sites than covariates");
      if (!Y.allFinite() || !X.allFinite())
        throw invalid_argument("dataset: non-finite entries");
      if (!response_names.empty() && static_cast<Index>(response_names.size()) != r())
        throw invalid_argument("dataset: response name count mismatch");
      if (!covariate_names.empty() && static_cast<Index>(covariate_names.size()) != p())
        throw invalid_argument("dataset: covariate name count mismatch");
    }

    SpatialDataset subset(const std::vector<Index>& rows) const {
      SpatialDataset out;
      out.loc = loc.subset(rows);
      out.Y.resize(static_cast<Index>(rows.size()), r());
      out.X.resize(static_cast<Index>(rows.size()), p());
      for (std::size_t k = 0; k < rows.size(); ++k) {
        out.Y.row(static_cast<Index>(k)) = Y.row(rows[k]);
        out.X.row(static_cast<Index>(k)) = X.row(rows[k]);
      }
      out.response_names = response_names;
      out.covariate_names = covariate_names;
      return out;
    }
  };

  /*! Column-centered responses H and covariates G with the removed means. */
  struct CenteredData {
    Matrix H;
    Matrix G;
    Vector ybar;
    Vector xbar;

    Index n() const { return H.rows(); }
    Index r() const { return H.cols(); }
    Index p() const { return G.cols(); }
  };

  inline CenteredData center(const SpatialDataset& ds) {
    CenteredData cd;
    cd.ybar = ds.Y.colwise().mean().transpose();
    cd.xbar = ds.X.cols() ? Vector(ds.X.colwise().mean().transpose()) : Vector(0);
    cd.H = ds.Y.rowwise() - cd.ybar.transpose();
    cd.G = ds.X.rowwise() - cd.xbar.transpose();
    return cd;
  }

  namespace detail {
    /// Indices of columns that are (numerically) linear combinations of
    /// earlier columns.
    inline std::vector<int> dependent_columns(const Matrix& a, double tol = 1e-10) {
      std::vector<int> dep;
      Matrix basis(a.rows(), 0);
      const double scale = std::max(1.0, matalg::max_abs(a));
      for (Index j = 0; j < a.cols(); ++j) {
        Vector c = a.col(j);
        if (basis.cols() > 0) c -= basis * (basis.transpose() * c);
        if (basis.cols() > 0) c -= basis * (basis.transpose() * c);
        const double nrm = c.norm();
        if (nrm <= tol * scale * std::sqrt(static_cast<double>(a.rows()))) {
          dep.push_back(static_cast<int>(j));
        } else {
          basis.conservativeResize(Eigen::NoChange, basis.cols() + 1);
          basis.col(basis.cols() - 1) = c / nrm;
        }
      }
      return dep;
    }

    /// Whitened design and response together with the GLS solve.
    struct Whitened {
      Matrix Ht;     // L^{-1} H
      Matrix Gt;     // L^{-1} G
      Matrix coef;   // p x r, (Gt^T Gt)^{-1} Gt^T Ht
      Matrix resid;  // Ht - Gt coef
    };

    inline Whitened whiten_and_solve(const CenteredData& cd, const CorrelationMatrix& c) {
      if (c.size() != cd.n())
        throw invalid_argument("correlation matrix size does not match the data");
      Whitened w;
      w.Ht = c.whiten(cd.H);
      if (cd.p() == 0) {
        w.Gt = Matrix(cd.n(), 0);
        w.coef = Matrix(0, cd.r());
        w.resid = w.Ht;
        return w;
      }
      w.Gt = c.whiten(cd.G);
      Eigen::ColPivHouseholderQR<Matrix> qr(w.Gt);
      qr.setThreshold(1e-10);
      if (qr.rank() < cd.p()) {
        auto dep = dependent_columns(w.Gt);
        if (dep.empty()) dep.push_back(static_cast<int>(cd.p() - 1));
        throw rank_deficient("covariate matrix", std::move(dep));
      }
      w.coef = qr.solve(w.Ht);
      w.resid = w.Ht - w.Gt * w.coef;
      return w;
    }
  }  // namespace detail

  /// GLS coefficients beta (r x p): beta^T = (G^T rho^{-1} G)^{-1} G^T rho^{-1} H.
  inline Matrix gls_beta(const CenteredData& cd, const CorrelationMatrix& c) {
    return detail::whiten_and_solve(cd, c).coef.transpose();
  }

  /*! sigma_Y = H^T rho^{-1} H / n and the GLS residual covariance
   *  sigma_res = H^T rho^{-1/2} Q rho^{-1/2} H / n. */
  struct MomentMatrices {
    Matrix sigma_Y;
    Matrix sigma_res;
  };

  inline MomentMatrices moments_from(const detail::Whitened& w) {
    const double n = static_cast<double>(w.Ht.rows());
    MomentMatrices m;
    m.sigma_Y = matalg::symmetrize(w.Ht.transpose() * w.Ht) / n;
    m.sigma_res = matalg::symmetrize(w.resid.transpose() * w.resid) / n;
    return m;
  }

  inline MomentMatrices moments(const CenteredData& cd, const CorrelationMatrix& c) {
    return moments_from(detail::whiten_and_solve(cd, c));
  }

  /*! Unreduced model at a fixed correlation: GLS beta, V = sigma_res. */
  struct FullModelFit {
    Vector alpha;
    Matrix beta;
    Matrix V;
    MaternModel theta;
    double loglik = 0;
  };

  inline constexpr double log_two_pi = 1.8378770664093454836;

  /*! Gaussian log-likelihood of vec(Y - 1 alpha^T - X beta^T) ~ N(0, V (x) rho).
   *  The -nr/2 log(2 pi) constant is included unless with_constant = false. */
  inline double loglik_full(const SpatialDataset& ds, const Vector& alpha,
                            const Matrix& beta, const Matrix& V,
                            const CorrelationMatrix& c, bool with_constant = true) {
    const Index n = ds.n(), r = ds.r();
    if (alpha.size() != r || beta.rows() != r || beta.cols() != ds.p() ||
        V.rows() != r || V.cols() != r)
      throw invalid_argument("loglik_full: parameter shapes do not match the data");
    if (c.size() != n) throw invalid_argument("loglik_full: correlation size mismatch");
    matalg::require_symmetric(V);
    Matrix resid = ds.Y.rowwise() - alpha.transpose();
    if (ds.p() > 0) resid -= ds.X * beta.transpose();
    const Matrix rt = c.whiten(resid);
    const double logdet_v = matalg::log_det_spd(V, "V");
    const Matrix vinv = matalg::spd_inverse(V, "V");
    const double quad = (vinv * (rt.transpose() * rt)).trace();
    double ll = -0.5 * n * logdet_v - 0.5 * r * c.log_det() - 0.5 * quad;
    if (with_constant) ll -= 0.5 * n * r * log_two_pi;
    return ll;
  }

  /*! Log of the two factors of the likelihood under the envelope
   *  constraints: the material part (V1 = G1 O1 G1^T, beta = G1 eta) and the
   *  immaterial part (V0 = G0 O0 G0^T). Each factor uses det0 and the
   *  Moore-Penrose inverse of its rank-deficient covariance; the exponent of
   *  det(rho) is the rank of that covariance. */
  struct FactoredLoglik {
    double logL1 = 0;
    double logL2 = 0;
    double total() const { return logL1 + logL2; }
  };

  inline FactoredLoglik loglik_factored(const SpatialDataset& ds, const Vector& alpha,
                                        const Matrix& eta, const Matrix& Gamma1,
                                        const Matrix& Omega1, const Matrix& Omega0,
                                        const CorrelationMatrix& c,
                                        bool with_constant = true) {
    const Index n = ds.n(), r = ds.r(), u = Gamma1.cols();
    if (Gamma1.rows() != r || u < 1 || u > r)
      throw invalid_argument("loglik_factored: Gamma1 must be r x u with 0 < u <= r");
    if (eta.rows() != u || eta.cols() != ds.p() || Omega1.rows() != u ||
        Omega0.rows() != r - u || alpha.size() != r)
      throw invalid_argument("loglik_factored: parameter shapes do not match");
    if (!matalg::is_semi_orthogonal(Gamma1))
      throw invalid_argument("loglik_factored: Gamma1 is not semi-orthogonal");
    matalg::log_det_spd(Omega1, "Omega1");
    if (r - u > 0) matalg::log_det_spd(Omega0, "Omega0");

    const Matrix Gamma0 = matalg::orth_complement(Gamma1);
    const Matrix V1 = matalg::symmetrize(Gamma1 * Omega1 * Gamma1.transpose());
    const Matrix V0 = r - u > 0 ? Matrix(matalg::symmetrize(Gamma0 * Omega0 * Gamma0.transpose()))
                                : Matrix(Matrix::Zero(r, r));

    Matrix centered = ds.Y.rowwise() - alpha.transpose();
    Matrix resid = centered;
    if (ds.p() > 0) resid -= ds.X * (Gamma1 * eta).transpose();
    const Matrix rt = c.whiten(resid);
    const Matrix ct = c.whiten(centered);

    FactoredLoglik out;
    const auto d1 = matalg::det0_full(V1);
    out.logL1 = -0.5 * n * d1.log_value - 0.5 * u * c.log_det() -
                0.5 * (matalg::pinv(V1) * (rt.transpose() * rt)).trace();
    if (r - u > 0) {
      const auto d0 = matalg::det0_full(V0);
      out.logL2 = -0.5 * n * d0.log_value - 0.5 * (r - u) * c.log_det() -
                  0.5 * (matalg::pinv(V0) * (ct.transpose() * ct)).trace();
    }
    if (with_constant) {
      out.logL1 -= 0.5 * n * u * log_two_pi;
      out.logL2 -= 0.5 * n * (r - u) * log_two_pi;
    }
    return out;
  }

  /// Intercept alpha = ybar - beta xbar that goes with centered estimation.
  inline Vector intercept(const CenteredData& cd, const Matrix& beta) {
    if (cd.p() == 0) return cd.ybar;
    return cd.ybar - beta * cd.xbar;
  }

  /// Unreduced GLS fit at a fixed correlation.
  inline FullModelFit fit_full(const SpatialDataset& ds, const CorrelationMatrix& c,
                               const MaternModel& theta) {
    ds.validate();
    const CenteredData cd = center(ds);
    const auto w = detail::whiten_and_solve(cd, c);
    FullModelFit f;
    f.beta = w.coef.transpose();
    f.V = moments_from(w).sigma_res;
    f.alpha = intercept(cd, f.beta);
    f.theta = theta;
    f.loglik = loglik_full(ds, f.alpha, f.beta, f.V, c);
    return f;
  }

}  // namespace spenv

#endif  // SPENV_MODEL_HPP
