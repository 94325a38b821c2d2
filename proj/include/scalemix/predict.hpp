#pragma once

// Plug-in posterior predictive per class, class posteriors, hard decisions
// and ancestral sampling from a trained class model.

#include <cstdint>
#include <optional>
#include <vector>

#include "scalemix/model.hpp"
#include "scalemix/types.hpp"

namespace scalemix {

struct ClassPosterior {
  /// ln p(c | x) for c = 1..C.
  Vector log_probs;
  /// Zero-based index of the largest entry; ties go to the lowest index.
  int argmax = 0;

  /// One-based class label.
  int label() const noexcept { return argmax + 1; }
};

/// ln p_c(x) = logsumexp_k [ ln(alpha_k / alpha_hat) + ln St(x | m_k, W_k / (eta_k - D - 1), nu_k) ].
/// Computed directly from the posteriors (no cache). Throws DomainError
/// naming the component when eta_k <= D + 1.
double class_log_predictive(const Eigen::Ref<const Vector>& x, const ClassModel& cm);

/// Same quantity from a classifier's cached predictive. `nu_override`
/// replaces every component's nu while leaving all other posteriors fixed.
double class_log_predictive(const Eigen::Ref<const Vector>& x,
                            const std::vector<PredictiveComponent>& comps,
                            std::optional<double> nu_override = std::nullopt);

ClassPosterior class_posterior(const Eigen::Ref<const Vector>& x, const TrainedClassifier& tc,
                               std::optional<double> nu_override = std::nullopt);

/// One-based label with the maximum posterior probability.
int classify(const Eigen::Ref<const Vector>& x, const TrainedClassifier& tc);

/// Labels for every row.
std::vector<int> classify_batch(const RowMatrix& x, const TrainedClassifier& tc);

/// ln p(c | x) for every row: N x C.
Matrix posterior_batch(const RowMatrix& x, const TrainedClassifier& tc,
                       std::optional<double> nu_override = std::nullopt);

struct SampleResult {
  RowMatrix x;
  /// Zero-based component index each row was drawn from.
  std::vector<int> component;
};

/// Ancestral sampling: k ~ Cat(alpha / alpha_hat), u ~ IG(nu/2, nu/2),
/// x ~ N(m_k, u W_k / (eta_k - D - 1)). Deterministic for a given seed.
SampleResult sample(const ClassModel& cm, int n, std::uint64_t seed);

}  // namespace scalemix
