#pragma once

// Prior and posterior parameter records, the trained classifier and its
// persisted form.

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "scalemix/data.hpp"
#include "scalemix/numerics.hpp"
#include "scalemix/types.hpp"

namespace scalemix {

/// Conjugate prior shared by every component of every class:
/// Dir(alpha0) on the mixing weights, N(m0, Sigma / beta0) IW(Sigma | W0, eta0)
/// on each component, plus the shared degrees of freedom and the initial
/// number of components.
struct PriorHyperparameters {
  double alpha0 = 0.001;
  double beta0 = 1.0;
  Vector m0;
  Matrix W0;
  double eta0 = 0.0;
  double nu_fixed = 5.0;
  int k_init = 1;

  int dim() const noexcept { return static_cast<int>(m0.size()); }

  /// Throws DomainError on any violated invariant (including a W0 that does
  /// not factorize).
  void validate() const;
};

/// Variational posterior of one component: Dir weight alpha and
/// N(m, Sigma / beta) IW(Sigma | W, eta), with degrees of freedom nu.
struct ComponentPosterior {
  double alpha = 0.0;
  double beta = 0.0;
  Vector m;
  Matrix W;
  double eta = 0.0;
  double nu = 0.0;
};

struct ClassModel {
  int class_id = 0;
  std::vector<ComponentPosterior> components;
  double alpha_hat = 0.0;
  std::vector<double> elbo_trace;
  int n_pruned = 0;
  int iterations = 0;
  bool converged = false;

  /// Sum of component alphas.
  void refresh_alpha_hat();
};

/// Responsibility-weighted sufficient statistics of one class:
/// N_k = sum r, omega_k = sum r <1/u>, xbar_k and S_k the omega-weighted
/// mean and scatter (S_k normalized by omega_k).
struct LatentStatistics {
  Vector N;
  Vector omega;
  std::vector<Vector> xbar;
  std::vector<Matrix> S;
};

/// Plug-in predictive for one component, cached for fast evaluation:
/// weight alpha/alpha_hat, mean m, scale W / (eta - D - 1).
struct PredictiveComponent {
  double log_weight = 0.0;
  Vector mean;
  CholeskyFactor chol;
  double log_det = 0.0;
  double nu = 0.0;
  /// log_weight plus the Student-t normalizer at `nu`.
  double log_const = 0.0;
};

/// Builds the cached predictive. Throws DomainError naming the component when
/// eta <= D + 1 (the posterior mean of Sigma does not exist).
PredictiveComponent make_predictive_component(const ComponentPosterior& c, double alpha_hat,
                                              int dim, int index = 0);

enum class ClassPriorPolicy { kUniform, kEmpirical };

/// ln p(c) for c = 1..num_classes.
Vector make_class_log_prior(const std::vector<int>& labels, int num_classes,
                            ClassPriorPolicy policy);

/// All per-class models plus ln p(c). Immutable once built; the predictive
/// cache is computed on construction.
class TrainedClassifier {
 public:
  TrainedClassifier(std::vector<ClassModel> classes, Vector class_log_prior,
                    PriorHyperparameters prior);

  const std::vector<ClassModel>& classes() const noexcept { return classes_; }
  const Vector& class_log_prior() const noexcept { return class_log_prior_; }
  const PriorHyperparameters& prior() const noexcept { return prior_; }
  int dim() const noexcept { return prior_.dim(); }
  int num_classes() const noexcept { return static_cast<int>(classes_.size()); }

  const std::vector<std::vector<PredictiveComponent>>& predictive() const noexcept {
    return predictive_;
  }

  /// True when every class reached the convergence tolerance.
  bool converged() const;

 private:
  std::vector<ClassModel> classes_;
  Vector class_log_prior_;
  PriorHyperparameters prior_;
  std::vector<std::vector<PredictiveComponent>> predictive_;
};

/// Data-driven prior: beta0 = 1, eta0 = D + 1, m0 = sample mean and W0 =
/// unbiased sample covariance of all rows (jittered once when singular).
PriorHyperparameters build_default_prior(const FeatureDataset& data, double nu_fixed, int k_init,
                                         double alpha0);

// ---- Persistence ------------------------------------------------------------

inline constexpr int kModelFormatVersion = 1;

std::string to_json(const TrainedClassifier& tc);
TrainedClassifier from_json(std::string_view text);
void save_model(const std::filesystem::path& path, const TrainedClassifier& tc);
TrainedClassifier load_model(const std::filesystem::path& path);

}  // namespace scalemix
