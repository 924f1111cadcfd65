#ifndef SPENV_ERRORS_HPP
#define SPENV_ERRORS_HPP

#include <stdexcept>
#include <string>
#include <vector>

namespace spenv {

  /*! Base class for every error raised by the library. */
  class error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
  };

  /*! Bad shapes, out-of-range settings, malformed input. */
  class invalid_argument : public error {
  public:
    using error::error;
  };

  /*! Ingestion / configuration schema problems (CLI exit code 2). */
  class schema_error : public invalid_argument {
  public:
    using invalid_argument::invalid_argument;
  };

  /*! Failures of the numerics proper (CLI exit code 3). */
  class numerical_error : public error {
  public:
    using error::error;
  };

  class symmetry_error : public numerical_error {
  public:
    symmetry_error(double asym, double scale)
      : numerical_error("matrix is not symmetric: max|A-A^T| = " +
                        std::to_string(asym) + " (scale " +
                        std::to_string(scale) + ")"),
        asymmetry(asym) { }
    double asymmetry;
  };

  class not_positive_definite : public numerical_error {
  public:
    not_positive_definite(const std::string& what, double min_eig)
      : numerical_error(what + " is not positive definite (smallest eigenvalue " +
                        std::to_string(min_eig) + ")"),
        smallest_eigenvalue(min_eig) { }
    double smallest_eigenvalue;
  };

  class rank_deficient : public numerical_error {
  public:
    rank_deficient(const std::string& what, std::vector<int> cols)
      : numerical_error(describe(what, cols)), columns(std::move(cols)) { }
    std::vector<int> columns;  // zero-based indices of dependent columns

  private:
    static std::string describe(const std::string& what,
                                const std::vector<int>& cols) {
      std::string s = what + " is rank deficient; dependent column(s):";
      for (int c : cols) s += " " + std::to_string(c);
      return s;
    }
  };

  /*! An inner matrix of the envelope objective is singular. */
  class singular_objective : public numerical_error {
  public:
    singular_objective()
      : numerical_error("envelope objective is singular; "
                        "use more observations or a smaller envelope dimension") { }
  };

  class degenerate_variance : public numerical_error {
  public:
    using numerical_error::numerical_error;
  };

}  // namespace spenv

#endif  // SPENV_ERRORS_HPP
