#pragma once

// Multivariate scale-mixture (Student-t) density: a Gaussian whose covariance
// is scaled by an inverse-gamma(nu/2, nu/2) latent variable.

#include "scalemix/numerics.hpp"
#include "scalemix/types.hpp"

namespace scalemix {

struct StudentParams {
  Vector mu;
  Matrix sigma;
  double nu = 1.0;
};

/// ln of Gamma((nu+D)/2) / Gamma(nu/2) * |Sigma|^{-1/2} / (pi nu)^{D/2}
///       * (1 + Delta^2 / nu)^{-(nu+D)/2}.
double log_marginal_density(const Eigen::Ref<const Vector>& x, const StudentParams& p);

/// Same density with the scale already factorized. `log_det_sigma` must be
/// log_det(chol).
double log_student_density(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& mu,
                           const CholeskyFactor& chol, double log_det_sigma, double nu);

/// The part of the log density that does not depend on x:
/// lnGamma((nu+D)/2) - lnGamma(nu/2) - D/2 ln(pi nu) - 1/2 ln|Sigma|.
double log_student_normalizer(int dim, double log_det_sigma, double nu);

/// Multivariate normal log density; used for the large-nu limit.
double log_normal_density(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& mu,
                          const Matrix& sigma);

struct QuadratureOptions {
  double rel_tol = 1e-10;
  unsigned max_depth = 20;
};

/// Density (not log) obtained by integrating N(x | mu, u Sigma) IG(u | nu/2,
/// nu/2) over u numerically, after substituting u = e^t and centring the
/// integrand on its mode. Intended as a reference for the closed form.
/// Throws NumericError when the requested tolerance is not reached.
double quadrature_marginal_density(const Eigen::Ref<const Vector>& x, const StudentParams& p,
                                   const QuadratureOptions& opts = {});

/// Log of the quadrature result, usable where the density underflows.
double quadrature_log_marginal_density(const Eigen::Ref<const Vector>& x, const StudentParams& p,
                                       const QuadratureOptions& opts = {});

}  // namespace scalemix
