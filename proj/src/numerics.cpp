#include "scalemix/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

namespace scalemix {

double log_gamma(double x) {
  if (!(x > 0.0) || !std::isfinite(x)) {
    throw DomainError("log_gamma: argument must be positive and finite, got " + std::to_string(x));
  }
  return std::lgamma(x);
}

double digamma(double x) {
  if (!(x > 0.0) || !std::isfinite(x)) {
    throw DomainError("digamma: argument must be positive and finite, got " + std::to_string(x));
  }
  // Shift into the asymptotic region with psi(x) = psi(x + 1) - 1/x.
  double acc = 0.0;
  while (x < 6.0) {
    acc -= 1.0 / x;
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  // Bernoulli-number tail: sum B_2k / (2k x^2k), k = 1..7.
  const double tail =
      inv2 * (1.0 / 12.0 -
              inv2 * (1.0 / 120.0 -
                      inv2 * (1.0 / 252.0 -
                              inv2 * (1.0 / 240.0 -
                                      inv2 * (1.0 / 132.0 -
                                              inv2 * (691.0 / 32760.0 - inv2 / 12.0))))));
  return acc + std::log(x) - 0.5 * inv - tail;
}

double multivariate_log_gamma(double a, int dims) {
  if (dims < 1) {
    throw DomainError("multivariate_log_gamma: dims must be >= 1");
  }
  if (!(a > 0.5 * (dims - 1))) {
    throw DomainError("multivariate_log_gamma: requires a > (dims - 1)/2, got a=" +
                      std::to_string(a) + " dims=" + std::to_string(dims));
  }
  double out = 0.25 * dims * (dims - 1) * std::log(std::numbers::pi);
  for (int j = 1; j <= dims; ++j) {
    out += log_gamma(a + 0.5 * (1 - j));
  }
  return out;
}

namespace {

void check_square(const Matrix& m, const char* who) {
  if (m.rows() != m.cols() || m.rows() == 0) {
    throw DimensionMismatch(std::string(who) + ": expected a non-empty square matrix");
  }
}

// Returns the failing pivot index, or -1 on success.
long try_cholesky(const Matrix& sym, Matrix& lower) {
  const long n = sym.rows();
  lower = Matrix::Zero(n, n);
  for (long j = 0; j < n; ++j) {
    double diag = sym(j, j);
    for (long k = 0; k < j; ++k) diag -= lower(j, k) * lower(j, k);
    // A pivot lost to cancellation is rank deficiency, not a tiny variance.
    const double floor = 4.0 * static_cast<double>(n) * std::numeric_limits<double>::epsilon() * sym(j, j);
    if (!(diag > floor) || !std::isfinite(diag)) return j;
    const double ljj = std::sqrt(diag);
    lower(j, j) = ljj;
    for (long i = j + 1; i < n; ++i) {
      double s = sym(i, j);
      for (long k = 0; k < j; ++k) s -= lower(i, k) * lower(j, k);
      lower(i, j) = s / ljj;
    }
  }
  return -1;
}

}  // namespace

PsdMatrix::PsdMatrix(Matrix m) : m_(std::move(m)) {
  check_square(m_, "PsdMatrix");
  const double scale = std::max(m_.cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());
  const double asym = (m_ - m_.transpose()).cwiseAbs().maxCoeff();
  if (!(asym <= 1e-12 * scale)) {
    throw DomainError("PsdMatrix: matrix is not symmetric within 1e-12 relative");
  }
  m_ = (0.5 * (m_ + m_.transpose())).eval();
  Matrix lower;
  if (const long pivot = try_cholesky(m_, lower); pivot >= 0) {
    throw NotPositiveDefinite(static_cast<std::size_t>(pivot));
  }
}

void CholeskyFactor::forward_solve(Eigen::Ref<Vector> v) const {
  const long n = lower_.rows();
  for (long i = 0; i < n; ++i) {
    double s = v[i];
    for (long k = 0; k < i; ++k) s -= lower_(i, k) * v[k];
    v[i] = s / lower_(i, i);
  }
}

CholeskyFactor cholesky(const Matrix& m) {
  check_square(m, "cholesky");
  const Matrix sym = 0.5 * (m + m.transpose());
  Matrix lower;
  if (const long pivot = try_cholesky(sym, lower); pivot >= 0) {
    throw NotPositiveDefinite(static_cast<std::size_t>(pivot));
  }
  return CholeskyFactor(std::move(lower));
}

CholeskyFactor cholesky(const PsdMatrix& m) { return cholesky(m.matrix()); }

double jitter_amount(const Matrix& m) {
  const double per_dim = m.trace() / static_cast<double>(m.rows());
  // An all-zero matrix has zero trace; fall back to an absolute loading.
  return 1e-8 * (per_dim > 0.0 && std::isfinite(per_dim) ? per_dim : 1.0);
}

CholeskyFactor cholesky_with_jitter(const Matrix& m) {
  check_square(m, "cholesky_with_jitter");
  try {
    return cholesky(m);
  } catch (const NotPositiveDefinite&) {
    Matrix loaded = m;
    loaded.diagonal().array() += jitter_amount(m);
    return cholesky(loaded);
  }
}

double log_det(const CholeskyFactor& f) {
  return 2.0 * f.lower().diagonal().array().log().sum();
}

double mahalanobis_sq(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& center,
                      const CholeskyFactor& f) {
  if (x.size() != center.size() || x.size() != f.dim()) {
    throw DimensionMismatch("mahalanobis_sq: dimensions disagree (x=" + std::to_string(x.size()) +
                            ", center=" + std::to_string(center.size()) +
                            ", factor=" + std::to_string(f.dim()) + ")");
  }
  Vector diff = x - center;
  f.forward_solve(diff);
  return diff.squaredNorm();
}

Matrix inverse_from_cholesky(const CholeskyFactor& f) {
  const int n = f.dim();
  Matrix inv_lower = Matrix::Identity(n, n);
  for (int j = 0; j < n; ++j) {
    f.forward_solve(inv_lower.col(j));
  }
  Matrix out = inv_lower.transpose() * inv_lower;
  return 0.5 * (out + out.transpose());
}

double log_sum_exp(const Eigen::Ref<const Vector>& v) {
  if (v.size() == 0) return -std::numeric_limits<double>::infinity();
  const double mx = v.maxCoeff();
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) s += std::exp(v[i] - mx);
  return mx + std::log(s);
}

}  // namespace scalemix
