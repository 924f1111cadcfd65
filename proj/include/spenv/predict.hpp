#ifndef SPENV_PREDICT_HPP
#define SPENV_PREDICT_HPP

#include <cmath>
#include <functional>
#include <vector>

#include "spenv/detail/parallel.hpp"
#include "spenv/envopt.hpp"
#include "spenv/matalg.hpp"
#include "spenv/model.hpp"
#include "spenv/spatialcov.hpp"

/*
 * Plug-in Gaussian conditioning under vec(Y) ~ N(vec(1 alpha^T + X beta^T), V (x) rho).
 * With the separable covariance, V cancels from the conditional mean:
 *   E[Y_new | Y] = 1 alpha^T + X_new beta^T + rho_nY rho_YY^{-1} (Y - 1 alpha^T - X beta^T)
 *   Cov[vec(Y_new) | Y] = V (x) (rho_nn - rho_nY rho_YY^{-1} rho_Yn)
 */

namespace spenv {

  struct PredictionResult {
    Matrix mean;  // n_new x r
    Matrix sd;    // n_new x r
    Matrix cov;   // (n_new r) x (n_new r) in vec order, only when requested
  };

  /*! Observed-site quantities shared by every prediction from one fit. */
  class Predictor {
  public:
    Predictor(const EnvelopeFit& f, const SpatialDataset& ds)
      : fit_(f), ds_(ds), corr_(fitted_correlation(f, ds.loc)) {
      if (f.beta.rows() != ds.r() || f.beta.cols() != ds.p())
        throw invalid_argument("predict: fit does not match the dataset");
      Matrix resid = ds.Y.rowwise() - f.alpha.transpose();
      if (ds.p() > 0) resid -= ds.X * f.beta.transpose();
      resid_ = resid;
      if (f.params.spatial) z_ = corr_.solve(resid);
      V_ = matalg::symmetrize(f.V());
    }

    PredictionResult predict(const Locations& new_loc, const Matrix& new_X,
                             bool want_cov = false) const {
      const Index m = new_loc.size(), r = ds_.r();
      if (new_X.rows() != m || new_X.cols() != ds_.p())
        throw invalid_argument("predict: new covariates must be n_new x p");
      PredictionResult out;
      out.mean = Matrix::Ones(m, 1) * fit_.alpha.transpose();
      if (ds_.p() > 0) out.mean += new_X * fit_.beta.transpose();

      Matrix cond;  // conditional site correlation (full or diagonal only)
      Vector cond_diag(m);
      const MaternModel& th = fit_.params.theta;
      if (fit_.params.spatial) {
        const Matrix cross = matern_correlation(cross_dist(new_loc, ds_.loc), th);  // m x n
        out.mean += cross * z_;
        const Matrix w = corr_.whiten(cross.transpose());  // n x m
        if (want_cov) {
          cond = matern_correlation(pairwise_dist(new_loc), th);
          cond.diagonal().array() += th.nugget;
          cond = matalg::symmetrize(cond - w.transpose() * w);
          cond_diag = cond.diagonal();
        } else {
          cond_diag = Vector::Constant(m, 1.0 + th.nugget) - w.colwise().squaredNorm().transpose();
        }
      } else {
        cond_diag = Vector::Ones(m);
        if (want_cov) cond = Matrix::Identity(m, m);
      }
      out.sd.resize(m, r);
      for (Index j = 0; j < r; ++j)
        for (Index i = 0; i < m; ++i)
          out.sd(i, j) = std::sqrt(std::max(0.0, V_(j, j) * cond_diag(i)));
      if (want_cov) out.cov = matalg::kron(V_, cond);
      return out;
    }

  private:
    EnvelopeFit fit_;
    SpatialDataset ds_;
    CorrelationMatrix corr_;
    Matrix resid_;
    Matrix z_;
    Matrix V_;
  };

  inline PredictionResult predict(const EnvelopeFit& f, const SpatialDataset& ds,
                                  const Locations& new_loc, const Matrix& new_X,
                                  bool want_cov = false) {
    return Predictor(f, ds).predict(new_loc, new_X, want_cov);
  }

  struct GridSpec {
    double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
    int nx = 2, ny = 2;

    void validate() const {
      if (nx < 2 || ny < 2) throw invalid_argument("grid resolution must be >= 2 per axis");
      if (!(xmax >= xmin) || !(ymax >= ymin)) throw invalid_argument("grid bbox is inverted");
    }

    /// Nodes in row-major order: index = iy * nx + ix.
    Locations nodes() const {
      Matrix c(static_cast<Index>(nx) * ny, 2);
      for (int iy = 0; iy < ny; ++iy)
        for (int ix = 0; ix < nx; ++ix) {
          const Index k = static_cast<Index>(iy) * nx + ix;
          c(k, 0) = xmin + (xmax - xmin) * ix / (nx - 1);
          c(k, 1) = ymin + (ymax - ymin) * iy / (ny - 1);
        }
      return Locations(std::move(c));
    }
  };

  /// Supplies covariates at a set of grid nodes (n_nodes x p).
  using CovariateProvider = std::function<Matrix(const Locations&)>;

  struct GridPrediction {
    Locations nodes;
    Matrix mean;
    Matrix sd;
    std::vector<char> failed;  // 1 where the covariate provider failed
  };

  /*! Predicts on a regular grid in tiles. Without a provider, covariates are
   *  held at their training means. */
  inline GridPrediction predict_grid(const EnvelopeFit& f, const SpatialDataset& ds,
                                     const GridSpec& grid,
                                     const CovariateProvider& provider = nullptr,
                                     int tile_size = 1024, int threads = 0) {
    grid.validate();
    const Predictor pred(f, ds);
    GridPrediction out;
    out.nodes = grid.nodes();
    const Index total = out.nodes.size(), r = ds.r();
    out.mean = Matrix::Constant(total, r, std::nan(""));
    out.sd = Matrix::Constant(total, r, std::nan(""));
    out.failed.assign(static_cast<std::size_t>(total), 0);
    const Vector xbar = ds.p() ? Vector(ds.X.colwise().mean().transpose()) : Vector(0);
    const int tiles = static_cast<int>((total + tile_size - 1) / tile_size);
    detail::parallel_for(
        tiles,
        [&](int t) {
          const Index lo = static_cast<Index>(t) * tile_size;
          const Index hi = std::min<Index>(total, lo + tile_size);
          std::vector<Index> rows;
          for (Index k = lo; k < hi; ++k) rows.push_back(k);
          const Locations tile = out.nodes.subset(rows);
          Matrix x;
          try {
            x = provider ? provider(tile)
                         : Matrix(Matrix::Ones(tile.size(), 1) * xbar.transpose());
            if (x.rows() != tile.size() || x.cols() != ds.p())
              throw invalid_argument("covariate provider returned the wrong shape");
          } catch (const std::exception&) {
            for (Index k = lo; k < hi; ++k) out.failed[static_cast<std::size_t>(k)] = 1;
            return;
          }
          const PredictionResult pr = pred.predict(tile, x, false);
          out.mean.middleRows(lo, hi - lo) = pr.mean;
          out.sd.middleRows(lo, hi - lo) = pr.sd;
        },
        threads);
    return out;
  }

}  // namespace spenv

#endif  // SPENV_PREDICT_HPP
