#ifndef SPENV_INFERENCE_HPP
#define SPENV_INFERENCE_HPP

#include <cmath>

#include "spenv/envopt.hpp"
#include "spenv/matalg.hpp"
#include "spenv/model.hpp"

/*
 * Parameter ordering used throughout:
 *   full model:     h = (vec(beta^T), vech(V))          length pr + r(r+1)/2
 *   envelope model: phi = (vec(eta), vec(Gamma1), vech(Omega1), vech(Omega0))
 * vec(beta^T) = K_rp vec(beta), so entry j*p + k is beta(j, k).
 */

namespace spenv {

  struct FisherInfo {
    Matrix J;
    Index r = 0, p = 0;

    Index beta_size() const { return r * p; }
    Index cov_size() const { return r * (r + 1) / 2; }
  };

  /// Expected information per observation:
  /// blockdiag(V^{-1} (x) G^T rho^{-1} G / n, 1/2 E_r^T (V^{-1} (x) V^{-1}) E_r).
  inline FisherInfo fisher_info(const Matrix& V, const Matrix& G, const CorrelationMatrix& c) {
    matalg::require_symmetric(V);
    const Index r = V.rows(), p = G.cols();
    const double n = static_cast<double>(G.rows());
    if (c.size() != G.rows()) throw invalid_argument("fisher_info: correlation size mismatch");
    const Matrix vinv = matalg::spd_inverse(V, "V");
    const Matrix gt = p ? c.whiten(G) : Matrix(G.rows(), 0);
    const Matrix a = matalg::symmetrize(gt.transpose() * gt) / n;
    const Matrix e = matalg::expansion(r);
    FisherInfo out;
    out.r = r;
    out.p = p;
    const Index nb = r * p, nc = r * (r + 1) / 2;
    out.J = Matrix::Zero(nb + nc, nb + nc);
    if (nb) out.J.topLeftCorner(nb, nb) = matalg::kron(vinv, a);
    out.J.bottomRightCorner(nc, nc) =
        matalg::symmetrize(0.5 * e.transpose() * matalg::kron(vinv, vinv) * e);
    return out;
  }

  inline FisherInfo fisher_info(const EnvelopeFit& f, const SpatialDataset& ds,
                                const CorrelationMatrix& c) {
    return fisher_info(matalg::symmetrize(f.V()), center(ds).G, c);
  }

  inline FisherInfo fisher_info(const FullModelFit& f, const SpatialDataset& ds,
                                const CorrelationMatrix& c) {
    return fisher_info(f.V, center(ds).G, c);
  }

  struct PsiMatrix {
    Matrix Psi;
    Index r = 0, p = 0, u = 0;
  };

  /// Jacobian of h = (vec(beta^T), vech(V)) with respect to phi.
  inline PsiMatrix psi_matrix(const EnvelopeParams& ps) {
    ps.validate();
    const Index r = ps.r(), p = ps.p(), u = ps.u, ru = r - u;
    const Index rows = p * r + r * (r + 1) / 2;
    const Index c1 = p * u, c2 = r * u, c3 = u * (u + 1) / 2, c4 = ru * (ru + 1) / 2;
    PsiMatrix out;
    out.r = r;
    out.p = p;
    out.u = u;
    out.Psi = Matrix::Zero(rows, c1 + c2 + c3 + c4);
    const Matrix Ir = Matrix::Identity(r, r);
    const Matrix cr = matalg::contraction(r);
    if (p > 0) {
      const Matrix k = matalg::commutation(r, p);
      out.Psi.block(0, 0, p * r, c1) = k * matalg::kron(Matrix::Identity(p, p), ps.Gamma1);
      out.Psi.block(0, c1, p * r, c2) = k * matalg::kron(ps.eta.transpose(), Ir);
    }
    Matrix d2 = matalg::kron(ps.Gamma1 * ps.Omega1, Ir);
    if (ru > 0)
      d2 -= matalg::kron(ps.Gamma1, ps.Gamma0 * ps.Omega0 * ps.Gamma0.transpose());
    out.Psi.block(p * r, c1, r * (r + 1) / 2, c2) = 2.0 * cr * d2;
    out.Psi.block(p * r, c1 + c2, r * (r + 1) / 2, c3) =
        cr * matalg::kron(ps.Gamma1, ps.Gamma1) * matalg::expansion(u);
    if (ru > 0)
      out.Psi.block(p * r, c1 + c2 + c3, r * (r + 1) / 2, c4) =
          cr * matalg::kron(ps.Gamma0, ps.Gamma0) * matalg::expansion(ru);
    return out;
  }

  struct InferenceReport {
    Matrix Lambda;     // J^+
    Matrix Lambda0;    // Psi (Psi^T J Psi)^+ Psi^T
    Matrix avar_beta;  // rp x rp block for vec(beta^T)
    Matrix se_beta;    // r x p, sqrt(diag(avar_beta) / n)
    double dominance_min_eig = 0;  // smallest eigenvalue of Lambda - Lambda0
  };

  inline InferenceReport envelope_avar(const FisherInfo& J, const PsiMatrix& psi,
                                       double rank_tol = default_rank_tol) {
    if (J.J.rows() != psi.Psi.rows())
      throw invalid_argument("envelope_avar: J and Psi are not conformable");
    InferenceReport out;
    out.Lambda = matalg::symmetrize(matalg::pinv(J.J, rank_tol));
    const Matrix inner = matalg::symmetrize(psi.Psi.transpose() * J.J * psi.Psi);
    out.Lambda0 =
        matalg::symmetrize(psi.Psi * matalg::pinv(inner, rank_tol) * psi.Psi.transpose());
    out.dominance_min_eig = matalg::min_eigenvalue(out.Lambda - out.Lambda0);
    const Index nb = J.beta_size();
    out.avar_beta = out.Lambda0.topLeftCorner(nb, nb);
    return out;
  }

  /*! Closed form of the vec(beta^T) block of the envelope asymptotic
   *  covariance:
   *    K_rp { A^{-1} (x) G1 O1 G1^T + (eta^T (x) G0) M^{-1} (eta (x) G0^T) } K_rp^T
   *  with A = G^T rho^{-1} G / n and
   *    M = eta A eta^T (x) O0^{-1} + O1 (x) O0^{-1} + O1^{-1} (x) O0 - 2 I,
   *  the information for the Gamma1 directions left after the other
   *  parameters are accounted for. */
  inline Matrix avar_beta(const EnvelopeParams& ps, const Matrix& G,
                          const CorrelationMatrix& c) {
    ps.validate();
    const Index r = ps.r(), p = ps.p(), u = ps.u, ru = r - u;
    if (p < 1) throw invalid_argument("avar_beta requires p >= 1");
    if (G.cols() != p) throw invalid_argument("avar_beta: covariate count mismatch");
    const double n = static_cast<double>(G.rows());
    const Matrix gt = c.whiten(G);
    const Matrix a = matalg::symmetrize(gt.transpose() * gt) / n;
    Matrix inner = matalg::kron(matalg::spd_inverse(a, "G^T rho^-1 G"), ps.V1());
    if (ru > 0) {
      const Matrix o0inv = matalg::spd_inverse(ps.Omega0, "Omega0");
      const Matrix o1inv = matalg::spd_inverse(ps.Omega1, "Omega1");
      const Matrix m = matalg::kron(ps.eta * a * ps.eta.transpose(), o0inv) +
                       matalg::kron(ps.Omega1, o0inv) + matalg::kron(o1inv, ps.Omega0) -
                       2.0 * Matrix::Identity(u * ru, u * ru);
      const Matrix left = matalg::kron(ps.eta.transpose(), ps.Gamma0);
      inner += left * matalg::pinv(matalg::symmetrize(m)) * left.transpose();
    }
    const Matrix k = matalg::commutation(r, p);
    return matalg::symmetrize(k * inner * k.transpose());
  }

  inline Matrix avar_beta(const EnvelopeFit& f, const SpatialDataset& ds,
                          const CorrelationMatrix& c) {
    return avar_beta(f.params, center(ds).G, c);
  }

  /*! One covariate, Omega1 = s1 I_u, Omega0 = s0 I_{r-u}:
   *    n s1 / q G1 G1^T + n s0 s1 |b|^2 / (q s1 |b|^2 + n (s0 - s1)^2) G0 G0^T
   *  with q = X^T rho^{-1} X and s0, s1 the variances. X is used as given. */
  inline Matrix avar_beta_simplified(double sigma1_sq, double sigma0_sq, const Vector& beta,
                                     const Vector& X, const CorrelationMatrix& c,
                                     const Matrix& Gamma1, const Matrix& Gamma0) {
    if (X.size() != c.size()) throw invalid_argument("avar_beta_simplified: X length mismatch");
    if (beta.size() != Gamma1.rows() || Gamma0.rows() != Gamma1.rows())
      throw invalid_argument("avar_beta_simplified: dimension mismatch");
    const double n = static_cast<double>(X.size());
    const Vector xt = c.whiten(X);
    const double q = xt.squaredNorm();
    const double b2 = beta.squaredNorm();
    const double d = sigma0_sq - sigma1_sq;
    Matrix out = n * sigma1_sq / q * Gamma1 * Gamma1.transpose();
    if (Gamma0.cols() > 0)
      out += n * sigma0_sq * sigma1_sq * b2 / (q * sigma1_sq * b2 + n * d * d) * Gamma0 *
             Gamma0.transpose();
    return matalg::symmetrize(out);
  }

  /*! Normalized comparison of the plain and spatial envelope variances:
   *    I_r + (s0 - s1)^2 (n sX / q - 1) / ((s0 - s1)^2 + s1 sX |b|^2) G0 G0^T. */
  inline Matrix variance_ratio(double sigma1_sq, double sigma0_sq, const Vector& beta,
                               double sigmaX_sq, const Vector& X, const CorrelationMatrix& c,
                               const Matrix& Gamma0) {
    if (X.size() != c.size()) throw invalid_argument("variance_ratio: X length mismatch");
    const Index r = Gamma0.rows();
    const double n = static_cast<double>(X.size());
    const double q = c.whiten(X).squaredNorm();
    const double d2 = std::pow(sigma0_sq - sigma1_sq, 2);
    const double coef = d2 * (n * sigmaX_sq / q - 1.0) / (d2 + sigma1_sq * sigmaX_sq * beta.squaredNorm());
    Matrix out = Matrix::Identity(r, r);
    if (Gamma0.cols() > 0 && coef != 0.0) out += coef * Gamma0 * Gamma0.transpose();
    return out;
  }

  /// Full inference for a fitted model: J at V = V0 + V1, Psi, Lambda0 and
  /// standard errors for beta.
  inline InferenceReport infer(const EnvelopeFit& f, const SpatialDataset& ds) {
    const auto c = fitted_correlation(f, ds.loc);
    const CenteredData cd = center(ds);
    const FisherInfo J = fisher_info(matalg::symmetrize(f.V()), cd.G, c);
    InferenceReport rep = envelope_avar(J, psi_matrix(f.params));
    const Index r = ds.r(), p = ds.p();
    rep.se_beta = Matrix::Zero(r, p);
    const double n = static_cast<double>(ds.n());
    for (Index j = 0; j < r; ++j)
      for (Index k = 0; k < p; ++k)
        rep.se_beta(j, k) = std::sqrt(std::max(0.0, rep.avar_beta(j * p + k, j * p + k)) / n);
    return rep;
  }

}  // namespace spenv

#endif  // SPENV_INFERENCE_HPP
