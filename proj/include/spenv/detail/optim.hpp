#ifndef SPENV_DETAIL_OPTIM_HPP
#define SPENV_DETAIL_OPTIM_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <utility>

#include <boost/math/tools/minima.hpp>

namespace spenv::detail {

  struct Minimum1 {
    double x = 0;
    double f = 0;
    int evaluations = 0;
  };

  /// Brent minimization of f on [lo, hi].
  inline Minimum1 brent_minimize(const std::function<double(double)>& f, double lo,
                                 double hi, int bits = 30, int max_iter = 200) {
    int evals = 0;
    auto wrapped = [&](double x) {
      ++evals;
      const double v = f(x);
      return std::isfinite(v) ? v : std::numeric_limits<double>::max();
    };
    std::uintmax_t it = static_cast<std::uintmax_t>(max_iter);
    const auto res = boost::math::tools::brent_find_minima(wrapped, lo, hi, bits, it);
    return {res.first, res.second, evals};
  }

  struct Minimum2 {
    std::array<double, 2> x{};
    double f = 0;
    int evaluations = 0;
  };

  /*! Nelder-Mead simplex in two dimensions with box constraints enforced by
   *  clamping trial points. Terminates when both the simplex diameter and the
   *  spread of function values fall below the tolerances. */
  inline Minimum2 nelder_mead2(const std::function<double(const std::array<double, 2>&)>& f,
                               std::array<double, 2> start, std::array<double, 2> step,
                               std::array<double, 2> lo, std::array<double, 2> hi,
                               double xtol = 1e-8, double ftol = 1e-10,
                               int max_eval = 400) {
    using P = std::array<double, 2>;
    int evals = 0;
    auto clamp = [&](P p) {
      for (int k = 0; k < 2; ++k) p[k] = std::clamp(p[k], lo[k], hi[k]);
      return p;
    };
    auto eval = [&](const P& p) {
      ++evals;
      const double v = f(p);
      return std::isfinite(v) ? v : std::numeric_limits<double>::max();
    };

    std::array<P, 3> s;
    s[0] = clamp(start);
    s[1] = s[0];
    s[2] = s[0];
    for (int k = 0; k < 2; ++k) {
      s[k + 1][k] += step[k];
      if (s[k + 1][k] > hi[k]) s[k + 1][k] = s[0][k] - step[k];
      s[k + 1] = clamp(s[k + 1]);
    }
    std::array<double, 3> fv{eval(s[0]), eval(s[1]), eval(s[2])};

    auto combine = [](const P& a, const P& b, double t) {
      return P{a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])};
    };

    while (evals < max_eval) {
      std::array<int, 3> idx{0, 1, 2};
      std::sort(idx.begin(), idx.end(), [&](int a, int b) { return fv[a] < fv[b]; });
      const std::array<P, 3> ss{s[idx[0]], s[idx[1]], s[idx[2]]};
      const std::array<double, 3> ff{fv[idx[0]], fv[idx[1]], fv[idx[2]]};
      s = ss;
      fv = ff;

      double diam = 0;
      for (int i = 1; i < 3; ++i)
        diam = std::max(diam, std::max(std::abs(s[i][0] - s[0][0]),
                                       std::abs(s[i][1] - s[0][1])));
      if (diam < xtol && std::abs(fv[2] - fv[0]) < ftol * (1.0 + std::abs(fv[0]))) break;

      const P centroid{0.5 * (s[0][0] + s[1][0]), 0.5 * (s[0][1] + s[1][1])};
      const P xr = clamp(combine(centroid, s[2], -1.0));
      const double fr = eval(xr);
      if (fr < fv[0]) {
        const P xe = clamp(combine(centroid, s[2], -2.0));
        const double fe = eval(xe);
        if (fe < fr) { s[2] = xe; fv[2] = fe; }
        else { s[2] = xr; fv[2] = fr; }
      } else if (fr < fv[1]) {
        s[2] = xr;
        fv[2] = fr;
      } else {
        const bool outside = fr < fv[2];
        const P xc = outside ? clamp(combine(centroid, xr, 0.5))
                             : clamp(combine(centroid, s[2], 0.5));
        const double fc = eval(xc);
        if (fc < std::min(fr, fv[2])) {
          s[2] = xc;
          fv[2] = fc;
        } else {
          for (int i = 1; i < 3; ++i) {
            s[i] = combine(s[0], s[i], 0.5);
            fv[i] = eval(s[i]);
          }
        }
      }
    }
    const int best = static_cast<int>(std::min_element(fv.begin(), fv.end()) - fv.begin());
    return {s[best], fv[best], evals};
  }

}  // namespace spenv::detail

#endif  // SPENV_DETAIL_OPTIM_HPP
