#ifndef SPENV_MATALG_HPP
#define SPENV_MATALG_HPP

#include <algorithm>
#include <cmath>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <Eigen/QR>
#include <Eigen/SVD>
#include <unsupported/Eigen/KroneckerProduct>

#include "spenv/errors.hpp"

/*
 * Dense matrix kernels shared by the rest of the library.
 *
 * Storage convention: Eigen column-major. vec(A) stacks columns, so entry
 * (i, j) of an m x n matrix lands at position j*m + i. vech(A) stacks the
 * lower triangle column by column: (0,0),(1,0),...,(r-1,0),(1,1),...
 */

namespace spenv {

  using Matrix = Eigen::MatrixXd;
  using Vector = Eigen::VectorXd;
  using Index = Eigen::Index;

  inline constexpr double default_rank_tol = 1e-10;

  namespace matalg {

    inline double max_abs(const Matrix& a) {
      return a.size() == 0 ? 0.0 : a.cwiseAbs().maxCoeff();
    }

    /// Throws symmetry_error unless max|A - A^T| <= 1e-10 * max(1, max|A|).
    inline void require_symmetric(const Matrix& a) {
      if (a.rows() != a.cols())
        throw invalid_argument("symmetric operation on a non-square matrix");
      const double asym = max_abs(a - a.transpose());
      const double scale = std::max(1.0, max_abs(a));
      if (asym > 1e-10 * scale) throw symmetry_error(asym, scale);
    }

    inline Matrix symmetrize(const Matrix& a) {
      return 0.5 * (a + a.transpose());
    }

    inline Vector vec(const Matrix& a) {
      return Eigen::Map<const Vector>(a.data(), a.size());
    }

    inline Matrix unvec(const Vector& v, Index rows, Index cols) {
      if (v.size() != rows * cols)
        throw invalid_argument("unvec: length does not match rows*cols");
      return Eigen::Map<const Matrix>(v.data(), rows, cols);
    }

    inline Vector vech(const Matrix& a) {
      require_symmetric(a);
      const Index r = a.rows();
      Vector out(r * (r + 1) / 2);
      Index k = 0;
      for (Index j = 0; j < r; ++j)
        for (Index i = j; i < r; ++i) out(k++) = a(i, j);
      return out;
    }

    inline Matrix unvech(const Vector& v, Index r) {
      if (v.size() != r * (r + 1) / 2)
        throw invalid_argument("unvech: length does not match r(r+1)/2");
      Matrix a(r, r);
      Index k = 0;
      for (Index j = 0; j < r; ++j)
        for (Index i = j; i < r; ++i) {
          a(i, j) = v(k);
          a(j, i) = v(k);
          ++k;
        }
      return a;
    }

    /// Expansion (duplication) matrix E_r: E_r vech(A) = vec(A), A symmetric.
    inline Matrix expansion(Index r) {
      Matrix e = Matrix::Zero(r * r, r * (r + 1) / 2);
      Index k = 0;
      for (Index j = 0; j < r; ++j)
        for (Index i = j; i < r; ++i) {
          e(j * r + i, k) = 1.0;
          e(i * r + j, k) = 1.0;
          ++k;
        }
      return e;
    }

    /// Contraction matrix C_r = (E_r^T E_r)^{-1} E_r^T, the Moore-Penrose
    /// inverse of E_r. C_r vec(A) = vech(A) for symmetric A, and for general
    /// A it returns vech of the symmetric part.
    inline Matrix contraction(Index r) {
      Matrix c = Matrix::Zero(r * (r + 1) / 2, r * r);
      Index k = 0;
      for (Index j = 0; j < r; ++j)
        for (Index i = j; i < r; ++i) {
          if (i == j) {
            c(k, j * r + i) = 1.0;
          } else {
            c(k, j * r + i) = 0.5;
            c(k, i * r + j) = 0.5;
          }
          ++k;
        }
      return c;
    }

    /// Elimination matrix L_r: L_r vec(A) = vech(A) for every r x r A
    /// (reads the lower triangle, ignores the upper one).
    inline Matrix elimination(Index r) {
      Matrix l = Matrix::Zero(r * (r + 1) / 2, r * r);
      Index k = 0;
      for (Index j = 0; j < r; ++j)
        for (Index i = j; i < r; ++i) l(k++, j * r + i) = 1.0;
      return l;
    }

    /// Commutation matrix K_mn: K_mn vec(A) = vec(A^T) for A of size m x n.
    inline Matrix commutation(Index m, Index n) {
      Matrix k = Matrix::Zero(m * n, m * n);
      for (Index i = 0; i < m; ++i)
        for (Index j = 0; j < n; ++j)
          k(i * n + j, j * m + i) = 1.0;
      return k;
    }

    struct StructuralMatrices {
      Index r = 0;
      Matrix E_r;
      Matrix C_r;
      Matrix K_mn;
    };

    inline StructuralMatrices structural(Index r, Index m, Index n) {
      if (r < 1 || m < 1 || n < 1)
        throw invalid_argument("structural: dimensions must be >= 1");
      return {r, expansion(r), contraction(r), commutation(m, n)};
    }

    inline Matrix kron(const Matrix& a, const Matrix& b) {
      return Eigen::kroneckerProduct(a, b).eval();
    }

    struct SymEigen {
      Vector values;   // ascending
      Matrix vectors;  // columns; first nonzero entry of each is positive
    };

    inline SymEigen sym_eigen(const Matrix& a) {
      require_symmetric(a);
      Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(a));
      if (es.info() != Eigen::Success)
        throw numerical_error("symmetric eigendecomposition failed");
      SymEigen out{es.eigenvalues(), es.eigenvectors()};
      for (Index j = 0; j < out.vectors.cols(); ++j) {
        for (Index i = 0; i < out.vectors.rows(); ++i) {
          const double x = out.vectors(i, j);
          if (std::abs(x) > 1e-12) {
            if (x < 0) out.vectors.col(j) *= -1.0;
            break;
          }
        }
      }
      return out;
    }

    struct Det0 {
      double value = 1.0;
      double log_value = 0.0;
      Index rank = 0;  // rank 0 means the empty-product convention applied
    };

    /// Product of the eigenvalues with |lambda| > rank_tol * max|lambda|.
    inline Det0 det0_full(const Matrix& a, double rank_tol = default_rank_tol) {
      const SymEigen es = sym_eigen(a);
      Det0 out;
      if (es.values.size() == 0) return out;
      const double top = es.values.cwiseAbs().maxCoeff();
      if (top == 0.0) return out;
      double sign = 1.0;
      for (Index i = 0; i < es.values.size(); ++i) {
        const double lam = es.values(i);
        if (std::abs(lam) > rank_tol * top) {
          out.log_value += std::log(std::abs(lam));
          if (lam < 0) sign = -sign;
          ++out.rank;
        }
      }
      out.value = sign * std::exp(out.log_value);
      return out;
    }

    inline double det0(const Matrix& a, double rank_tol = default_rank_tol) {
      return det0_full(a, rank_tol).value;
    }

    inline Matrix pinv(const Matrix& a, double rank_tol = default_rank_tol) {
      if (a.size() == 0) return Matrix::Zero(a.cols(), a.rows());
      Eigen::JacobiSVD<Matrix> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
      const Vector& s = svd.singularValues();
      const double cut = rank_tol * (s.size() ? s(0) : 0.0);
      Vector inv = Vector::Zero(s.size());
      for (Index i = 0; i < s.size(); ++i)
        if (s(i) > cut && s(i) > 0) inv(i) = 1.0 / s(i);
      return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
    }

    /// Orthogonal projection onto span(B); zero matrix for B = 0.
    inline Matrix proj(const Matrix& b, double rank_tol = default_rank_tol) {
      const Index m = b.rows();
      if (b.cols() == 0 || max_abs(b) == 0.0) return Matrix::Zero(m, m);
      Eigen::JacobiSVD<Matrix> svd(b, Eigen::ComputeThinU);
      const Vector& s = svd.singularValues();
      Index rank = 0;
      for (Index i = 0; i < s.size(); ++i)
        if (s(i) > rank_tol * s(0)) ++rank;
      const Matrix u = svd.matrixU().leftCols(rank);
      return symmetrize(u * u.transpose());
    }

    inline Matrix qproj(const Matrix& b, double rank_tol = default_rank_tol) {
      return Matrix::Identity(b.rows(), b.rows()) - proj(b, rank_tol);
    }

    /// Orthonormal factor of the thin QR decomposition with R having a
    /// non-negative diagonal. This is the QR retraction on the Grassmannian.
    inline Matrix qf(const Matrix& a) {
      Eigen::HouseholderQR<Matrix> qr(a);
      Matrix q = qr.householderQ() * Matrix::Identity(a.rows(), a.cols());
      const Matrix& rr = qr.matrixQR();
      for (Index j = 0; j < a.cols(); ++j)
        if (rr(j, j) < 0) q.col(j) *= -1.0;
      return q;
    }

    inline bool is_semi_orthogonal(const Matrix& g, double tol = 1e-8) {
      const Matrix gtg = g.transpose() * g;
      return max_abs(gtg - Matrix::Identity(g.cols(), g.cols())) <= tol;
    }

    /// Basis of span(Gamma)^perp. Requires Gamma^T Gamma = I.
    inline Matrix orth_complement(const Matrix& gamma) {
      const Index r = gamma.rows(), u = gamma.cols();
      if (!is_semi_orthogonal(gamma))
        throw invalid_argument("orth_complement: input is not semi-orthogonal");
      if (u == r) return Matrix(r, 0);
      Eigen::HouseholderQR<Matrix> qr(gamma);
      Matrix full = qr.householderQ();
      Matrix g0 = full.rightCols(r - u);
      // Deterministic orientation: first nonzero entry of each column positive.
      for (Index j = 0; j < g0.cols(); ++j)
        for (Index i = 0; i < r; ++i)
          if (std::abs(g0(i, j)) > 1e-12) {
            if (g0(i, j) < 0) g0.col(j) *= -1.0;
            break;
          }
      return g0;
    }

    /// log det of a symmetric positive definite matrix; throws otherwise.
    inline double log_det_spd(const Matrix& a, const char* what = "matrix") {
      if (a.rows() == 0) return 0.0;
      Eigen::LLT<Matrix> llt(a);
      if (llt.info() != Eigen::Success) {
        Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(a),
                                                 Eigen::EigenvaluesOnly);
        throw not_positive_definite(what, es.eigenvalues()(0));
      }
      return 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    }

    inline Matrix spd_inverse(const Matrix& a, const char* what = "matrix") {
      if (a.rows() == 0) return a;
      Eigen::LLT<Matrix> llt(a);
      if (llt.info() != Eigen::Success) {
        Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(a),
                                                 Eigen::EigenvaluesOnly);
        throw not_positive_definite(what, es.eigenvalues()(0));
      }
      return symmetrize(llt.solve(Matrix::Identity(a.rows(), a.cols())));
    }

    /// Smallest eigenvalue of a symmetric matrix (no symmetry check).
    inline double min_eigenvalue(const Matrix& a) {
      if (a.rows() == 0) return 0.0;
      Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(a),
                                               Eigen::EigenvaluesOnly);
      return es.eigenvalues()(0);
    }

    /// Largest principal angle (radians) between span(A) and span(B).
    inline double max_principal_angle(const Matrix& a, const Matrix& b) {
      const Matrix qa = qf(a), qb = qf(b);
      Eigen::JacobiSVD<Matrix> svd(qa.transpose() * qb);
      const double smin = svd.singularValues().minCoeff();
      return std::acos(std::clamp(smin, -1.0, 1.0));
    }

  }  // namespace matalg
}  // namespace spenv

#endif  // SPENV_MATALG_HPP
