#ifndef SPENV_ENVOPT_HPP
#define SPENV_ENVOPT_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "spenv/detail/optim.hpp"
#include "spenv/matalg.hpp"
#include "spenv/model.hpp"
#include "spenv/spatialcov.hpp"

namespace spenv {

  /*! Envelope parameterization: beta = Gamma1 eta and
   *  V = Gamma1 Omega1 Gamma1^T + Gamma0 Omega0 Gamma0^T. */
  struct EnvelopeParams {
    Index u = 0;
    Matrix Gamma1;
    Matrix Gamma0;
    Matrix eta;
    Matrix Omega1;
    Matrix Omega0;
    MaternModel theta;
    bool spatial = true;  // false: rho = I (theta unused)

    Index r() const { return Gamma1.rows(); }
    Index p() const { return eta.cols(); }
    Matrix beta() const { return Gamma1 * eta; }
    Matrix V1() const { return matalg::symmetrize(Gamma1 * Omega1 * Gamma1.transpose()); }
    Matrix V0() const {
      if (Gamma0.cols() == 0) return Matrix::Zero(r(), r());
      return matalg::symmetrize(Gamma0 * Omega0 * Gamma0.transpose());
    }
    Matrix V() const { return V1() + V0(); }

    void validate() const {
      const Index rr = Gamma1.rows();
      if (u < 1 || u > rr || Gamma1.cols() != u)
        throw invalid_argument("envelope dimension must satisfy 0 < u <= r");
      if (Gamma0.rows() != rr || Gamma0.cols() != rr - u)
        throw invalid_argument("Gamma0 must be r x (r-u)");
      if (eta.rows() != u) throw invalid_argument("eta must have u rows");
      if (Omega1.rows() != u || Omega1.cols() != u || Omega0.rows() != rr - u ||
          Omega0.cols() != rr - u)
        throw invalid_argument("Omega shapes do not match u");
      if (!matalg::is_semi_orthogonal(Gamma1) || !matalg::is_semi_orthogonal(Gamma0) ||
          (rr - u > 0 && matalg::max_abs(Gamma1.transpose() * Gamma0) > 1e-8))
        throw invalid_argument("Gamma1, Gamma0 must form an orthogonal basis");
    }
  };

  struct TraceEntry {
    double objective = 0;  // negative log-likelihood, profiled over V and beta
    double change = 0;     // ||Theta^{m+1} - Theta^m||
    double range = 0;
    double smoothness = 0;
  };

  struct EnvelopeFit {
    EnvelopeParams params;
    Vector alpha;
    Matrix beta;  // r x p
    Matrix V0;
    Matrix V1;
    double loglik = 0;
    std::vector<TraceEntry> trace;
    bool converged = false;
    int n_iter = 0;
    bool theta_at_boundary = false;
    bool line_search_warning = false;
    std::string method = "SPENV";

    Index u() const { return params.u; }
    Matrix V() const { return V0 + V1; }
  };

  enum class ThetaUpdate {
    alternating,  // minimize over theta with V0, V1 held at their current values
    profiled      // minimize over theta with V0, V1 profiled out at the current Gamma
  };

  struct OptimizerConfig {
    double delta = 1e-6;
    int max_outer = 200;
    int max_grassmann = 100;
    double grad_tol = 1e-6;
    double armijo_c1 = 1e-4;
    double armijo_shrink = 0.5;
    int max_backtrack = 50;
    int n_restarts = 5;
    std::uint64_t rng_seed = 1;

    // Range bounds default to [lower_factor * min distance, upper_factor * max distance].
    double range_lower_factor = 0.01;
    double range_upper_factor = 100.0;
    std::optional<double> range_lower;
    std::optional<double> range_upper;
    double smoothness_lower = 0.1;
    double smoothness_upper = 3.0;
    std::optional<double> fixed_smoothness;
    std::optional<MaternModel> initial_theta;
    double nugget = 1e-10;
    ThetaUpdate theta_update = ThetaUpdate::profiled;
    int theta_bits = 30;

    void validate() const {
      if (!(delta > 0) || max_outer < 1 || max_grassmann < 1 || !(grad_tol > 0) ||
          !(armijo_c1 > 0 && armijo_c1 < 1) || !(armijo_shrink > 0 && armijo_shrink < 1) ||
          max_backtrack < 1 || n_restarts < 0)
        throw invalid_argument("optimizer configuration: tolerances must be positive");
      if (!(range_lower_factor > 0) || !(range_upper_factor > 0))
        throw invalid_argument("optimizer configuration: range factors must be positive");
      if (!(smoothness_lower > 0) || !(smoothness_upper >= smoothness_lower))
        throw invalid_argument("optimizer configuration: bad smoothness bounds");
      if (fixed_smoothness && !(*fixed_smoothness > 0))
        throw invalid_argument("optimizer configuration: fixed smoothness must be positive");
      if (!(nugget >= 0)) throw invalid_argument("optimizer configuration: negative nugget");
    }
  };

  // -----------------------------------------------------------------------
  // Grassmann objective

  namespace detail {
    struct LogDetResult {
      bool ok = false;
      double value = 0;
    };

    inline LogDetResult try_log_det(const Matrix& a) {
      if (a.rows() == 0) return {true, 0.0};
      Eigen::LLT<Matrix> llt(matalg::symmetrize(a));
      if (llt.info() != Eigen::Success) return {};
      const Vector d = Matrix(llt.matrixL()).diagonal();
      if ((d.array() <= 0).any()) return {};
      return {true, 2.0 * d.array().log().sum()};
    }

    /// Subspace objective logdet(G^T M G) + logdet(G^T N^{-1} G) + logdet N,
    /// equal to the coordinate form for orthonormal G.
    struct GrassmannProblem {
      Matrix M;
      Matrix Ninv;
      double logdetN = 0;

      explicit GrassmannProblem(const MomentMatrices& m) : M(m.sigma_res) {
        const auto ld = try_log_det(m.sigma_Y);
        if (!ld.ok) throw singular_objective();
        logdetN = ld.value;
        Ninv = matalg::spd_inverse(m.sigma_Y, "sigma_Y");
      }

      std::optional<double> value(const Matrix& g) const {
        const auto a = try_log_det(g.transpose() * M * g);
        const auto b = try_log_det(g.transpose() * Ninv * g);
        if (!a.ok || !b.ok) return std::nullopt;
        return a.value + b.value + logdetN;
      }

      Matrix gradient(const Matrix& g) const {
        const Index r = g.rows();
        if (g.cols() == r) return Matrix::Zero(r, r);
        const Matrix a = g.transpose() * M * g;
        const Matrix b = g.transpose() * Ninv * g;
        const Matrix eg = 2.0 * M * g * matalg::spd_inverse(a, "Gamma1^T sigma_res Gamma1") +
                          2.0 * Ninv * g * matalg::spd_inverse(b, "Gamma1^T sigma_Y^-1 Gamma1");
        return eg - g * (g.transpose() * eg);
      }
    };
  }  // namespace detail

  /// log det(G1^T sigma_res G1) + log det(G0^T sigma_Y G0).
  inline double objective_logD(const Matrix& Gamma1, const MomentMatrices& m) {
    if (!matalg::is_semi_orthogonal(Gamma1))
      throw invalid_argument("objective_logD: Gamma1 is not semi-orthogonal");
    if (Gamma1.rows() != m.sigma_Y.rows())
      throw invalid_argument("objective_logD: dimension mismatch");
    const Matrix Gamma0 = matalg::orth_complement(Gamma1);
    const auto a = detail::try_log_det(Gamma1.transpose() * m.sigma_res * Gamma1);
    const auto b = detail::try_log_det(Gamma0.transpose() * m.sigma_Y * Gamma0);
    if (!a.ok || !b.ok) throw singular_objective();
    return a.value + b.value;
  }

  inline double objective_logD(const Matrix& Gamma1, const CenteredData& cd,
                               const CorrelationMatrix& c) {
    return objective_logD(Gamma1, moments(cd, c));
  }

  /// Riemannian (horizontal) gradient (I - G1 G1^T) * Euclidean gradient.
  inline Matrix grad_logD(const Matrix& Gamma1, const MomentMatrices& m) {
    if (!matalg::is_semi_orthogonal(Gamma1))
      throw invalid_argument("grad_logD: Gamma1 is not semi-orthogonal");
    return detail::GrassmannProblem(m).gradient(Gamma1);
  }

  inline Matrix grad_logD(const Matrix& Gamma1, const CenteredData& cd,
                          const CorrelationMatrix& c) {
    return grad_logD(Gamma1, moments(cd, c));
  }

  struct GrassmannResult {
    Matrix Gamma1;
    double objective = 0;
    double grad_norm = 0;
    int iterations = 0;
    bool line_search_failed = false;
  };

  namespace detail {
    inline Matrix random_orthonormal(Index r, Index u, std::mt19937_64& rng) {
      std::normal_distribution<double> z(0.0, 1.0);
      Matrix a(r, u);
      for (Index j = 0; j < u; ++j)
        for (Index i = 0; i < r; ++i) a(i, j) = z(rng);
      return matalg::qf(a);
    }

    inline GrassmannResult descend(const GrassmannProblem& prob, const Matrix& start,
                                   const OptimizerConfig& cfg) {
      GrassmannResult res;
      Matrix g = matalg::qf(start);
      const auto f0 = prob.value(g);
      if (!f0) throw singular_objective();
      double f = *f0;
      Matrix grad = prob.gradient(g);
      double t = 1.0 / std::max(1.0, grad.norm());
      Matrix prev_g, prev_grad;
      int it = 0;
      for (; it < cfg.max_grassmann; ++it) {
        const double gn2 = grad.squaredNorm();
        if (std::sqrt(gn2) <= cfg.grad_tol) break;
        if (prev_g.size()) {
          const Matrix s = g - prev_g;
          const Matrix y = grad - prev_grad;
          const double sy = std::abs((s.array() * y.array()).sum());
          if (sy > 1e-300) t = std::clamp(s.squaredNorm() / sy, 1e-10, 1e3);
        }
        bool accepted = false;
        for (int k = 0; k < cfg.max_backtrack; ++k) {
          const Matrix trial = matalg::qf(g - t * grad);
          const auto ft = prob.value(trial);
          if (ft && *ft <= f - cfg.armijo_c1 * t * gn2) {
            prev_g = g;
            prev_grad = grad;
            g = trial;
            f = *ft;
            grad = prob.gradient(g);
            accepted = true;
            break;
          }
          t *= cfg.armijo_shrink;
        }
        if (!accepted) {
          // no sufficient decrease even for tiny steps: at round-off level
          res.line_search_failed = std::sqrt(gn2) > 1e3 * cfg.grad_tol;
          break;
        }
      }
      res.Gamma1 = g;
      res.objective = f;
      res.grad_norm = grad.norm();
      res.iterations = it;
      return res;
    }

    inline Matrix regression_directions(const MomentMatrices& m, Index u) {
      const auto es = matalg::sym_eigen(matalg::symmetrize(m.sigma_Y - m.sigma_res));
      return es.vectors.rightCols(u);
    }
  }  // namespace detail

  /*! Projected gradient descent on the Grassmannian with QR retraction,
   *  Barzilai-Borwein initial steps and Armijo backtracking. `extra_starts`
   *  seeded random orthonormal starts are added; the best local solution is
   *  returned. */
  inline GrassmannResult optimize_grassmann(const Matrix& start, const MomentMatrices& m,
                                            const OptimizerConfig& cfg,
                                            int extra_starts = 0,
                                            std::uint64_t seed = 0) {
    if (!matalg::is_semi_orthogonal(start))
      throw invalid_argument("optimize_grassmann: start is not semi-orthogonal");
    const Index r = start.rows(), u = start.cols();
    if (r != m.sigma_Y.rows()) throw invalid_argument("optimize_grassmann: dimension mismatch");
    const detail::GrassmannProblem prob(m);
    if (u == r) {
      GrassmannResult res;
      res.Gamma1 = Matrix::Identity(r, r);
      const auto v = prob.value(res.Gamma1);
      if (!v) throw singular_objective();
      res.objective = *v;
      return res;
    }
    GrassmannResult best = detail::descend(prob, start, cfg);
    std::mt19937_64 rng(seed ? seed : cfg.rng_seed);
    for (int k = 0; k < extra_starts; ++k) {
      const Matrix s = detail::random_orthonormal(r, u, rng);
      if (!prob.value(s)) continue;
      GrassmannResult cand = detail::descend(prob, s, cfg);
      if (cand.objective < best.objective - 1e-12) best = std::move(cand);
    }
    return best;
  }

  inline GrassmannResult optimize_grassmann(const Matrix& start, const CenteredData& cd,
                                            const CorrelationMatrix& c,
                                            const OptimizerConfig& cfg) {
    return optimize_grassmann(start, moments(cd, c), cfg, cfg.n_restarts);
  }

  // -----------------------------------------------------------------------
  // Correlation parameter step

  struct ThetaBounds {
    double range_lo = 0, range_hi = 0;
    double smooth_lo = 0, smooth_hi = 0;
  };

  inline ThetaBounds theta_bounds(const Matrix& dist, const OptimizerConfig& cfg) {
    double dmin = std::numeric_limits<double>::infinity(), dmax = 0;
    for (Index j = 0; j < dist.cols(); ++j)
      for (Index i = j + 1; i < dist.rows(); ++i) {
        const double d = dist(i, j);
        if (d > 0) dmin = std::min(dmin, d);
        dmax = std::max(dmax, d);
      }
    if (!std::isfinite(dmin)) dmin = 1.0;
    if (dmax <= 0) dmax = 1.0;
    ThetaBounds b;
    b.range_lo = cfg.range_lower.value_or(cfg.range_lower_factor * dmin);
    b.range_hi = cfg.range_upper.value_or(cfg.range_upper_factor * dmax);
    if (!(b.range_lo > 0) || !(b.range_hi > b.range_lo))
      throw invalid_argument("range bounds must satisfy 0 < lower < upper");
    b.smooth_lo = cfg.fixed_smoothness.value_or(cfg.smoothness_lower);
    b.smooth_hi = cfg.fixed_smoothness.value_or(cfg.smoothness_upper);
    return b;
  }

  inline double median_distance(const Matrix& dist) {
    std::vector<double> d;
    for (Index j = 0; j < dist.cols(); ++j)
      for (Index i = j + 1; i < dist.rows(); ++i)
        if (dist(i, j) > 0) d.push_back(dist(i, j));
    if (d.empty()) return 1.0;
    std::nth_element(d.begin(), d.begin() + d.size() / 2, d.end());
    return d[d.size() / 2];
  }

  struct ThetaResult {
    MaternModel theta;
    double objective = 0;
    bool at_boundary = false;
    int evaluations = 0;
  };

  namespace detail {
    inline MaternModel make_theta(double range, double smooth, double nugget) {
      MaternModel m;
      m.range = range;
      m.smoothness = smooth;
      m.scale = 1.0;
      m.nugget = nugget;
      return m;
    }

    /// Minimizes obj(theta) over the log-parameterized box.
    template <class Obj>
    ThetaResult minimize_theta(const Obj& obj, const ThetaBounds& b, const MaternModel& start,
                               const OptimizerConfig& cfg) {
      ThetaResult out;
      const double lr0 = std::log(b.range_lo), lr1 = std::log(b.range_hi);
      auto safe = [&](double range, double smooth) {
        try {
          return obj(make_theta(range, smooth, cfg.nugget));
        } catch (const numerical_error&) {
          return std::numeric_limits<double>::infinity();
        }
      };
      if (b.smooth_lo == b.smooth_hi) {
        const double nu = b.smooth_lo;
        const auto m = brent_minimize([&](double lr) { return safe(std::exp(lr), nu); },
                                      lr0, lr1, cfg.theta_bits);
        out.theta = make_theta(std::exp(m.x), nu, cfg.nugget);
        out.objective = m.f;
        out.evaluations = m.evaluations;
        out.at_boundary = std::min(m.x - lr0, lr1 - m.x) < 1e-3;
      } else {
        const double ls0 = std::log(b.smooth_lo), ls1 = std::log(b.smooth_hi);
        const std::array<double, 2> x0{
            std::clamp(std::log(start.range), lr0, lr1),
            std::clamp(std::log(start.smoothness), ls0, ls1)};
        const auto m = nelder_mead2(
            [&](const std::array<double, 2>& x) { return safe(std::exp(x[0]), std::exp(x[1])); },
            x0, {0.5, 0.3}, {lr0, ls0}, {lr1, ls1}, 1e-7, 1e-12, 600);
        out.theta = make_theta(std::exp(m.x[0]), std::exp(m.x[1]), cfg.nugget);
        out.objective = m.f;
        out.evaluations = m.evaluations;
        out.at_boundary = std::min(m.x[0] - lr0, lr1 - m.x[0]) < 1e-3 ||
                          std::min(m.x[1] - ls0, ls1 - m.x[1]) < 1e-3;
      }
      if (!std::isfinite(out.objective))
        throw numerical_error("correlation step: every evaluation failed");
      // A flat objective near a range bound (e.g. no spatial correlation)
      // is reported as the bound itself.
      const double flat = 1e-9 * (1.0 + std::abs(out.objective));
      for (double bound : {b.range_lo, b.range_hi}) {
        const double fb = safe(bound, out.theta.smoothness);
        if (fb <= out.objective + flat && std::abs(std::log(out.theta.range / bound)) >= 1e-3) {
          out.theta.range = bound;
          out.objective = fb;
          out.at_boundary = true;
          break;
        }
      }
      return out;
    }

    /// -2 log-likelihood (without constants) with V0, V1 held fixed.
    inline double theta_objective_fixed_v(const MaternModel& th, const Matrix& V0pinv,
                                          const Matrix& V1pinv, const CenteredData& cd,
                                          const Matrix& dist) {
      const auto c = CorrelationMatrix::from_distances(dist, th);
      const auto w = whiten_and_solve(cd, c);
      return cd.r() * c.log_det() + (V1pinv * (w.resid.transpose() * w.resid)).trace() +
             (V0pinv * (w.Ht.transpose() * w.Ht)).trace();
    }

    /// -2 log-likelihood (without constants) with V0, V1 profiled at Gamma.
    inline double theta_objective_profiled(const MaternModel& th, const Matrix& Gamma1,
                                           const Matrix& Gamma0, const CenteredData& cd,
                                           const Matrix& dist) {
      const auto c = CorrelationMatrix::from_distances(dist, th);
      const auto w = whiten_and_solve(cd, c);
      const double n = static_cast<double>(cd.n());
      const Matrix a = w.resid * Gamma1;
      const Matrix b = w.Ht * Gamma0;
      const auto la = try_log_det(a.transpose() * a / n);
      const auto lb = try_log_det(b.transpose() * b / n);
      if (!la.ok || !lb.ok) return std::numeric_limits<double>::infinity();
      return cd.r() * c.log_det() + n * (la.value + lb.value);
    }
  }  // namespace detail

  /*! Correlation step with V0, V1 held fixed: minimizes
   *  r log det rho + tr(A V1^+ A^T) + tr(rho^{-1/2} H V0^+ H^T rho^{-1/2}),
   *  A = Q rho^{-1/2} H, over log(range) and log(smoothness). */
  inline ThetaResult profile_theta(const Matrix& V0, const Matrix& V1, const CenteredData& cd,
                                   const Matrix& dist, const OptimizerConfig& cfg,
                                   std::optional<MaternModel> start = std::nullopt) {
    cfg.validate();
    if (dist.rows() != cd.n()) throw invalid_argument("profile_theta: distance size mismatch");
    const Matrix p0 = matalg::pinv(V0), p1 = matalg::pinv(V1);
    const auto b = theta_bounds(dist, cfg);
    const MaternModel s =
        start.value_or(detail::make_theta(median_distance(dist), 0.5, cfg.nugget));
    return detail::minimize_theta(
        [&](const MaternModel& th) {
          return detail::theta_objective_fixed_v(th, p0, p1, cd, dist);
        },
        b, s, cfg);
  }

  inline ThetaResult profile_theta(const Matrix& V0, const Matrix& V1, const CenteredData& cd,
                                   const Locations& loc, const OptimizerConfig& cfg) {
    return profile_theta(V0, V1, cd, pairwise_dist(loc), cfg);
  }

  // -----------------------------------------------------------------------
  // Full estimator

  namespace detail {
    /// Assembles the estimates at fixed Gamma1 and correlation.
    inline EnvelopeFit finalize(const SpatialDataset& ds, const CenteredData& cd,
                                const Matrix& Gamma1, const CorrelationMatrix& c,
                                const MaternModel& theta, bool spatial) {
      const auto w = whiten_and_solve(cd, c);
      const MomentMatrices m = moments_from(w);
      const Index r = cd.r(), u = Gamma1.cols();
      EnvelopeFit f;
      EnvelopeParams& ps = f.params;
      ps.u = u;
      ps.Gamma1 = Gamma1;
      ps.Gamma0 = matalg::orth_complement(Gamma1);
      ps.Omega1 = matalg::symmetrize(Gamma1.transpose() * m.sigma_res * Gamma1);
      ps.Omega0 = matalg::symmetrize(ps.Gamma0.transpose() * m.sigma_Y * ps.Gamma0);
      ps.theta = theta;
      ps.theta.nugget = c.nugget_used();
      ps.spatial = spatial;
      const Matrix beta_mle = w.coef.transpose();
      ps.eta = Gamma1.transpose() * beta_mle;
      f.beta = Gamma1 * ps.eta;
      f.alpha = intercept(cd, f.beta);
      f.V1 = ps.V1();
      f.V0 = r - u > 0 ? ps.V0() : Matrix(Matrix::Zero(r, r));
      const double n = static_cast<double>(cd.n());
      f.loglik = -(0.5 * n * objective_logD(Gamma1, m) + 0.5 * r * c.log_det() +
                   0.5 * n * r * (1.0 + log_two_pi));
      (void)ds;
      return f;
    }

    inline double neg_loglik(const Matrix& Gamma1, const MomentMatrices& m,
                             const CorrelationMatrix& c) {
      const Index r = Gamma1.rows();
      const double n = static_cast<double>(c.size());
      return 0.5 * n * objective_logD(Gamma1, m) + 0.5 * r * c.log_det() +
             0.5 * n * r * (1.0 + log_two_pi);
    }

    inline double frob2(const Matrix& a, const Matrix& b) { return (a - b).squaredNorm(); }

    inline Matrix initial_gamma(const MomentMatrices& m, Index u, const OptimizerConfig& cfg,
                                bool* warn) {
      const Index r = m.sigma_Y.rows();
      if (u == r) return Matrix::Identity(r, r);
      Matrix start = regression_directions(m, u);
      const auto g = optimize_grassmann(start, m, cfg, cfg.n_restarts, cfg.rng_seed);
      if (warn) *warn = *warn || g.line_search_failed;
      return g.Gamma1;
    }

    inline void check_fit_inputs(const SpatialDataset& ds, Index u) {
      ds.validate();
      if (u < 1 || u > ds.r())
        throw invalid_argument("envelope dimension must satisfy 0 < u <= r");
      if (!(ds.n() > ds.p() + ds.r()))
        throw invalid_argument("fit requires n > p + r");
    }
  }  // namespace detail

  /// Non-spatial envelope estimator (rho = I).
  inline EnvelopeFit fit_independent(const SpatialDataset& ds, Index u,
                                     const OptimizerConfig& cfg = {}) {
    cfg.validate();
    detail::check_fit_inputs(ds, u);
    const CenteredData cd = center(ds);
    const auto c = CorrelationMatrix::identity(ds.n());
    const MomentMatrices m = moments(cd, c);
    bool warn = false;
    const Matrix g = detail::initial_gamma(m, u, cfg, &warn);
    EnvelopeFit f = detail::finalize(ds, cd, g, c, MaternModel{}, false);
    f.method = "ENV";
    f.converged = true;
    f.n_iter = 1;
    f.line_search_warning = warn;
    f.trace.push_back({-f.loglik, 0.0, 0.0, 0.0});
    return f;
  }

  /// Ordinary multivariate least squares (u = r, rho = I).
  inline EnvelopeFit fit_mlr(const SpatialDataset& ds) {
    EnvelopeFit f = fit_independent(ds, ds.r());
    f.method = "MLR";
    return f;
  }

  /*! Spatial envelope estimator: alternates a Grassmann step for span(V1),
   *  closed-form V0 and V1, and a correlation-parameter step until the
   *  change in (P_V1, V0, V1, theta) falls below cfg.delta. */
  inline EnvelopeFit fit(const SpatialDataset& ds, Index u, const OptimizerConfig& cfg = {}) {
    cfg.validate();
    detail::check_fit_inputs(ds, u);
    const CenteredData cd = center(ds);
    const Index r = ds.r();
    const Matrix dist = pairwise_dist(ds.loc);
    const ThetaBounds bounds = theta_bounds(dist, cfg);

    MaternModel theta = cfg.initial_theta.value_or(detail::make_theta(
        std::clamp(median_distance(dist), bounds.range_lo, bounds.range_hi),
        std::clamp(0.5, bounds.smooth_lo, bounds.smooth_hi), cfg.nugget));
    theta.nugget = cfg.nugget;
    if (cfg.fixed_smoothness) theta.smoothness = *cfg.fixed_smoothness;

    bool warn = false;
    const MomentMatrices m_iid = moments(cd, CorrelationMatrix::identity(ds.n()));
    Matrix gamma = detail::initial_gamma(m_iid, u, cfg, &warn);

    auto c = CorrelationMatrix::from_distances(dist, theta);
    MomentMatrices m = moments(cd, c);

    EnvelopeFit out;
    Matrix p1_old = gamma * gamma.transpose();
    Matrix v0_old = Matrix::Zero(r, r), v1_old = Matrix::Zero(r, r);
    bool converged = false, at_boundary = false;
    int iter = 0;
    double prev_obj = std::numeric_limits<double>::infinity();

    for (iter = 1; iter <= cfg.max_outer; ++iter) {
      // Grassmann step at the current correlation
      if (u < r) {
        Matrix start = gamma;
        auto g = optimize_grassmann(start, m, cfg, iter == 1 ? cfg.n_restarts : 0,
                                    cfg.rng_seed + static_cast<std::uint64_t>(iter));
        if (iter == 1) {
          const auto alt = optimize_grassmann(detail::regression_directions(m, u), m, cfg);
          if (alt.objective < g.objective) g = alt;
        }
        warn = warn || g.line_search_failed;
        gamma = g.Gamma1;
      }
      const Matrix gamma0 = matalg::orth_complement(gamma);
      const Matrix p1 = gamma * gamma.transpose();
      Matrix v1 = matalg::symmetrize(p1 * m.sigma_res * p1);
      Matrix v0 = matalg::symmetrize((Matrix::Identity(r, r) - p1) * m.sigma_Y *
                                     (Matrix::Identity(r, r) - p1));

      // correlation step, accepted only if it does not increase the objective
      {
        ThetaResult tr;
        double current;
        if (cfg.theta_update == ThetaUpdate::profiled) {
          auto obj = [&](const MaternModel& th) {
            return detail::theta_objective_profiled(th, gamma, gamma0, cd, dist);
          };
          tr = detail::minimize_theta(obj, bounds, theta, cfg);
          current = obj(theta);
        } else {
          const Matrix p0i = matalg::pinv(v0), p1i = matalg::pinv(v1);
          auto obj = [&](const MaternModel& th) {
            return detail::theta_objective_fixed_v(th, p0i, p1i, cd, dist);
          };
          tr = detail::minimize_theta(obj, bounds, theta, cfg);
          current = obj(theta);
        }
        if (tr.objective <= current) {
          theta = tr.theta;
          at_boundary = tr.at_boundary;
        }
      }
      c = CorrelationMatrix::from_distances(dist, theta);
      m = moments(cd, c);
      v1 = matalg::symmetrize(p1 * m.sigma_res * p1);
      v0 = matalg::symmetrize((Matrix::Identity(r, r) - p1) * m.sigma_Y *
                              (Matrix::Identity(r, r) - p1));

      const double obj = detail::neg_loglik(gamma, m, c);
      const double dth = std::pow(theta.range - out.params.theta.range, 2) +
                         std::pow(theta.smoothness - out.params.theta.smoothness, 2);
      const double change = iter == 1 ? std::numeric_limits<double>::infinity()
                                      : std::sqrt(detail::frob2(p1, p1_old) +
                                                  detail::frob2(v0, v0_old) +
                                                  detail::frob2(v1, v1_old) + dth);
      out.trace.push_back({obj, change, theta.range, theta.smoothness});
      out.params.theta = theta;
      p1_old = p1;
      v0_old = v0;
      v1_old = v1;
      // stop on parameter convergence or when the objective has stalled at round-off
      if (change < cfg.delta ||
          (iter > 1 && std::abs(prev_obj - obj) <= 1e-13 * (1.0 + std::abs(obj)) &&
           change < 1e3 * cfg.delta)) {
        converged = true;
        break;
      }
      prev_obj = obj;
    }

    EnvelopeFit f = detail::finalize(ds, cd, gamma, c, theta, true);
    f.trace = std::move(out.trace);
    f.converged = converged;
    f.n_iter = std::min(iter, cfg.max_outer);
    f.theta_at_boundary = at_boundary;
    f.line_search_warning = warn;
    f.method = "SPENV";
    return f;
  }

  enum class Method { MLR, ENV, SPENV };

  inline const char* method_name(Method m) {
    switch (m) {
      case Method::MLR: return "MLR";
      case Method::ENV: return "ENV";
      case Method::SPENV: return "SPENV";
    }
    return "?";
  }

  inline Method parse_method(const std::string& s) {
    if (s == "MLR" || s == "mlr") return Method::MLR;
    if (s == "ENV" || s == "env") return Method::ENV;
    if (s == "SPENV" || s == "spenv") return Method::SPENV;
    throw invalid_argument("unknown method '" + s + "' (expected MLR, ENV or SPENV)");
  }

  inline EnvelopeFit fit_method(Method method, const SpatialDataset& ds, Index u,
                                const OptimizerConfig& cfg = {}) {
    switch (method) {
      case Method::MLR: return fit_mlr(ds);
      case Method::ENV: return fit_independent(ds, u, cfg);
      case Method::SPENV: return fit(ds, u, cfg);
    }
    throw invalid_argument("unknown method");
  }

  /// Site correlation implied by a fitted model (identity for non-spatial fits).
  inline CorrelationMatrix fitted_correlation(const EnvelopeFit& f, const Locations& loc) {
    if (!f.params.spatial) return CorrelationMatrix::identity(loc.size());
    return CorrelationMatrix::from_locations(loc, f.params.theta);
  }

}  // namespace spenv

#endif  // SPENV_ENVOPT_HPP
