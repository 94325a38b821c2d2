#include "scalemix/density.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include <boost/math/quadrature/gauss_kronrod.hpp>

namespace scalemix {

namespace {

void check_params(const Eigen::Ref<const Vector>& x, const StudentParams& p, const char* who) {
  if (x.size() != p.mu.size() || p.sigma.rows() != p.mu.size() || p.sigma.cols() != p.mu.size()) {
    throw DimensionMismatch(std::string(who) + ": x, mu and sigma dimensions disagree");
  }
  if (!(p.nu > 0.0)) {
    throw DomainError(std::string(who) + ": nu must be positive");
  }
}

}  // namespace

double log_student_normalizer(int dim, double log_det_sigma, double nu) {
  const double d = static_cast<double>(dim);
  return log_gamma(0.5 * (nu + d)) - log_gamma(0.5 * nu) - 0.5 * d * std::log(std::numbers::pi * nu) -
         0.5 * log_det_sigma;
}

double log_student_density(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& mu,
                           const CholeskyFactor& chol, double log_det_sigma, double nu) {
  const double delta_sq = mahalanobis_sq(x, mu, chol);
  const double d = static_cast<double>(x.size());
  return log_student_normalizer(static_cast<int>(x.size()), log_det_sigma, nu) -
         0.5 * (nu + d) * std::log1p(delta_sq / nu);
}

double log_marginal_density(const Eigen::Ref<const Vector>& x, const StudentParams& p) {
  check_params(x, p, "log_marginal_density");
  const auto chol = cholesky(p.sigma);
  return log_student_density(x, p.mu, chol, log_det(chol), p.nu);
}

double log_normal_density(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& mu,
                          const Matrix& sigma) {
  const auto chol = cholesky(sigma);
  const double d = static_cast<double>(x.size());
  return -0.5 * d * std::log(2.0 * std::numbers::pi) - 0.5 * log_det(chol) -
         0.5 * mahalanobis_sq(x, mu, chol);
}

double quadrature_log_marginal_density(const Eigen::Ref<const Vector>& x, const StudentParams& p,
                                       const QuadratureOptions& opts) {
  check_params(x, p, "quadrature_marginal_density");
  const auto chol = cholesky(p.sigma);
  const double d = static_cast<double>(x.size());
  const double ld = log_det(chol);
  const double delta_sq = mahalanobis_sq(x, p.mu, chol);
  const double half_nu = 0.5 * p.nu;

  // ln[ N(x | mu, u Sigma) IG(u | nu/2, nu/2) u ] at u = e^t; the trailing u
  // is the Jacobian of the substitution.
  auto log_integrand = [&](double t) {
    const double inv_u = std::exp(-t);
    const double log_gauss = -0.5 * d * std::log(2.0 * std::numbers::pi) - 0.5 * (d * t + ld) -
                             0.5 * inv_u * delta_sq;
    const double log_ig = half_nu * std::log(half_nu) - std::lgamma(half_nu) -
                          (half_nu + 1.0) * t - half_nu * inv_u;
    return log_gauss + log_ig + t;
  };

  const double t_mode = std::log((delta_sq + p.nu) / (d + p.nu));
  const double peak = log_integrand(t_mode);

  // Around the mode the t-dependent part of the log integrand is
  // -A t - C e^{-t} with A = (D + nu)/2, C = (delta^2 + nu)/2 and
  // e^{-t_mode} = A/C, so log f(t_mode + s) - peak = -A (s + expm1(-s)).
  // Evaluating that form avoids cancelling terms of size nu when nu is huge.
  const double a_coef = 0.5 * (d + p.nu);
  auto log_shape = [&](double s) { return -a_coef * (s + std::expm1(-s)); };

  // Integration limits where the integrand has fallen by e^-60 from its peak.
  constexpr double kDrop = 60.0;
  auto bracket = [&](double direction) {
    double step = 1e-6;
    while (-log_shape(direction * step) < kDrop) step *= 2.0;
    double lo = 0.0, hi = step;
    for (int i = 0; i < 100; ++i) {
      const double mid = 0.5 * (lo + hi);
      (-log_shape(direction * mid) < kDrop ? lo : hi) = mid;
    }
    return hi;
  };
  const double left = -bracket(-1.0);
  const double right = bracket(1.0);

  auto f = [&](double s) { return std::exp(log_shape(s)); };
  using Integrator = boost::math::quadrature::gauss_kronrod<double, 61>;
  double err_left = 0.0, err_right = 0.0;
  const double left_part = Integrator::integrate(f, left, 0.0, opts.max_depth, opts.rel_tol, &err_left);
  const double right_part = Integrator::integrate(f, 0.0, right, opts.max_depth, opts.rel_tol, &err_right);
  const double total = left_part + right_part;
  const double rel_err = (err_left + err_right) / total;
  if (!std::isfinite(total) || !(total > 0.0) || rel_err > 1e-8) {
    throw NumericError("quadrature_marginal_density: no convergence (estimated relative error " +
                       std::to_string(rel_err) + ")");
  }
  return peak + std::log(total);
}

double quadrature_marginal_density(const Eigen::Ref<const Vector>& x, const StudentParams& p,
                                   const QuadratureOptions& opts) {
  return std::exp(quadrature_log_marginal_density(x, p, opts));
}

}  // namespace scalemix
