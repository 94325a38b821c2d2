#pragma once

// Variational Bayesian learning of a finite mixture of scale mixtures, one
// class at a time: joint E-step over (z, u), conjugate M-step over
// (pi, mu, Sigma), evidence lower bound and pruning of empty components.

#include <cstdint>
#include <functional>
#include <vector>

#include "scalemix/data.hpp"
#include "scalemix/model.hpp"
#include "scalemix/types.hpp"

namespace scalemix {

/// q(z, u) for one class: responsibilities r (rows sum to 1) and the
/// inverse-gamma parameters (a, b) of q(u | z = 1). All N x K.
struct Responsibilities {
  Matrix r;
  Matrix a;
  Matrix b;

  Eigen::Index rows() const noexcept { return r.rows(); }
  Eigen::Index components() const noexcept { return r.cols(); }
};

enum class InitStrategy { kRandomResponsibility, kKmeansLike };

/// How the degrees of freedom are handled during fitting. kMaximumLikelihood
/// is experimental: each component's nu is re-estimated every iteration by
/// maximizing the bound over nu.
enum class NuMode { kFixed, kMaximumLikelihood };

struct VbConfig {
  int max_iters = 500;
  double elbo_rel_tol = 1e-6;
  double prune_threshold = 1e-3;
  std::uint64_t seed = 0;
  InitStrategy init = InitStrategy::kRandomResponsibility;
  NuMode nu_mode = NuMode::kFixed;
  ClassPriorPolicy class_prior = ClassPriorPolicy::kUniform;
  int threads = 1;

  void validate() const;
};

struct ComponentExpectations {
  /// <ln |Sigma|>
  double log_sigma_tilde = 0.0;
  /// <(x - mu)^T Sigma^{-1} (x - mu)>
  double delta_sq_expect = 0.0;
  /// <ln pi>
  double log_pi_tilde = 0.0;
};

ComponentExpectations expectations(const ComponentPosterior& c, const Eigen::Ref<const Vector>& x,
                                   double alpha_hat);

/// Responsibilities of every row of `x` (rows of one class) under the
/// current posteriors, normalized in log space.
Responsibilities e_step(const RowMatrix& x, const std::vector<ComponentPosterior>& posteriors);

/// N_k, omega_k, xbar_k, S_k with <z> = r and <1/u> = a / b.
LatentStatistics compute_statistics(const RowMatrix& x, const Responsibilities& resp);

/// Conjugate posterior update. `nus` gives each component's degrees of
/// freedom (carried through unchanged). A component with omega = 0 keeps
/// the prior's beta, m and W.
std::vector<ComponentPosterior> m_step(const RowMatrix& x, const Responsibilities& resp,
                                       const PriorHyperparameters& prior,
                                       const std::vector<double>& nus);

/// Evidence lower bound of one class: <ln p(X|Z,U,mu,Sigma)> + <ln p(Z,U|pi)>
/// + <ln p(theta)> - <ln q(Z,U)> - <ln q(theta)>. Throws NumericError naming
/// the first non-finite term.
double elbo(const RowMatrix& x, const Responsibilities& resp,
            const std::vector<ComponentPosterior>& posteriors, const PriorHyperparameters& prior);

struct PruneResult {
  std::vector<ComponentPosterior> posteriors;
  Responsibilities resp;
  int removed = 0;
};

/// Drops components whose effective count sum_n r_nk is below `threshold`
/// and renormalizes the remaining responsibilities. Throws DomainError if no
/// component would survive.
PruneResult prune(const std::vector<ComponentPosterior>& posteriors, const Responsibilities& resp,
                  double threshold);

/// Starting responsibilities for `k` components (a = b, so <1/u> = 1).
Responsibilities initial_responsibilities(const RowMatrix& x, int k, double nu,
                                          InitStrategy strategy, std::uint64_t seed);

/// Maximizer over nu of the bound's nu-dependent terms for one component,
/// searched on [1e-3, 1e6].
double ml_nu_update(const Responsibilities& resp, Eigen::Index component, double current_nu);

struct IterationRecord {
  int class_id = 0;
  int iteration = 0;
  double elbo = 0.0;
  int live_components = 0;
};

using TrainingLog = std::function<void(const IterationRecord&)>;

/// Algorithm for one class: initialize, then repeat E-step, M-step, optional
/// nu update, pruning and bound evaluation until the relative change of the
/// bound falls below config.elbo_rel_tol or max_iters is reached.
ClassModel fit_class(const RowMatrix& x, int class_id, const PriorHyperparameters& prior,
                     const VbConfig& config, const TrainingLog& log = {});

/// One ClassModel per label 1..C. Classes train independently (in parallel
/// when config.threads > 1) with per-class seeds derived from config.seed,
/// so the result does not depend on the thread count.
TrainedClassifier fit(const FeatureDataset& data, const PriorHyperparameters& prior,
                      const VbConfig& config, const TrainingLog& log = {});

/// Seed used for class `class_id`'s initialization.
std::uint64_t class_seed(std::uint64_t seed, int class_id);

}  // namespace scalemix
