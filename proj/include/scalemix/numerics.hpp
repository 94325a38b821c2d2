#pragma once

// Special functions and small dense SPD linear algebra used by every density
// and update formula.

#include <cstddef>
#include <utility>

#include "scalemix/types.hpp"

namespace scalemix {

/// Natural log of the gamma function for x > 0.
double log_gamma(double x);

/// Derivative of log_gamma, x > 0.
double digamma(double x);

/// ln Gamma_D(a) = D(D-1)/4 ln(pi) + sum_{j=1..D} ln Gamma(a + (1-j)/2).
/// Requires a > (dims - 1) / 2.
double multivariate_log_gamma(double a, int dims);

/// Symmetric matrix that has been checked to admit a Cholesky factorization.
class PsdMatrix {
 public:
  /// Symmetrizes `m` after checking asymmetry is within 1e-12 relative,
  /// then verifies positive definiteness.
  explicit PsdMatrix(Matrix m);

  static PsdMatrix identity(int dim) { return PsdMatrix(Matrix::Identity(dim, dim)); }

  int dim() const noexcept { return static_cast<int>(m_.rows()); }
  const Matrix& matrix() const noexcept { return m_; }

 private:
  Matrix m_;
};

/// Lower-triangular L with L L^T equal to the source matrix.
class CholeskyFactor {
 public:
  CholeskyFactor() = default;
  explicit CholeskyFactor(Matrix lower) : lower_(std::move(lower)) {}

  int dim() const noexcept { return static_cast<int>(lower_.rows()); }
  const Matrix& lower() const noexcept { return lower_; }

  /// Solves L y = v in place.
  void forward_solve(Eigen::Ref<Vector> v) const;

 private:
  Matrix lower_;
};

/// Factorizes (m + m^T)/2. Throws NotPositiveDefinite naming the first
/// non-positive pivot.
CholeskyFactor cholesky(const Matrix& m);
CholeskyFactor cholesky(const PsdMatrix& m);

/// Factorization with the training-time jitter policy: on failure, add
/// 1e-8 * trace(m) / D to the diagonal once and retry.
CholeskyFactor cholesky_with_jitter(const Matrix& m);

/// Diagonal loading added by the jitter policy (never zero).
double jitter_amount(const Matrix& m);

/// 2 * sum(ln diag(L)).
double log_det(const CholeskyFactor& f);

/// (x - center)^T M^{-1} (x - center) with M = L L^T.
double mahalanobis_sq(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& center,
                      const CholeskyFactor& f);

/// Inverse of L L^T, computed from the factor.
Matrix inverse_from_cholesky(const CholeskyFactor& f);

/// Numerically stable ln(sum(exp(v))). Returns -inf for an empty or all -inf input.
double log_sum_exp(const Eigen::Ref<const Vector>& v);

}  // namespace scalemix
