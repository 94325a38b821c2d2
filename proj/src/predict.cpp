#include "scalemix/predict.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <string>

#include "scalemix/density.hpp"
#include "scalemix/rng.hpp"

namespace scalemix {

namespace {

constexpr int kStackDim = 64;

// (nu + D)/2 * log1p(Delta^2 / nu) without heap allocation for D <= 64.
double log_kernel(const double* x, const PredictiveComponent& pc, double nu) {
  const auto& lower = pc.chol.lower();
  const int d = static_cast<int>(lower.rows());
  std::array<double, kStackDim> stack;
  std::vector<double> heap;
  double* z = stack.data();
  if (d > kStackDim) {
    heap.resize(static_cast<std::size_t>(d));
    z = heap.data();
  }
  const double* mean = pc.mean.data();
  double dsq = 0.0;
  for (int i = 0; i < d; ++i) {
    double s = x[i] - mean[i];
    for (int k = 0; k < i; ++k) s -= lower(i, k) * z[k];
    z[i] = s / lower(i, i);
    dsq += z[i] * z[i];
  }
  return 0.5 * (nu + d) * std::log1p(dsq / nu);
}

double mixture_log_density(const double* x, const std::vector<PredictiveComponent>& comps,
                           std::optional<double> nu_override) {
  std::array<double, 16> stack;
  std::vector<double> heap;
  double* terms = stack.data();
  if (comps.size() > stack.size()) {
    heap.resize(comps.size());
    terms = heap.data();
  }
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < comps.size(); ++k) {
    const auto& pc = comps[k];
    double t;
    if (nu_override) {
      const int d = static_cast<int>(pc.mean.size());
      t = pc.log_weight + log_student_normalizer(d, pc.log_det, *nu_override) -
          log_kernel(x, pc, *nu_override);
    } else {
      t = pc.log_const - log_kernel(x, pc, pc.nu);
    }
    terms[k] = t;
    if (t > mx) mx = t;
  }
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (std::size_t k = 0; k < comps.size(); ++k) s += std::exp(terms[k] - mx);
  return mx + std::log(s);
}

void fill_posterior(const double* x, const TrainedClassifier& tc, std::optional<double> nu_override,
                    double* log_probs) {
  const auto& pred = tc.predictive();
  const auto& log_prior = tc.class_log_prior();
  const int c = tc.num_classes();
  double mx = -std::numeric_limits<double>::infinity();
  for (int j = 0; j < c; ++j) {
    log_probs[j] = mixture_log_density(x, pred[static_cast<std::size_t>(j)], nu_override) + log_prior[j];
    if (log_probs[j] > mx) mx = log_probs[j];
  }
  if (!std::isfinite(mx)) {
    throw NumericError("class_posterior: every class density is zero or non-finite");
  }
  double s = 0.0;
  for (int j = 0; j < c; ++j) s += std::exp(log_probs[j] - mx);
  const double norm = mx + std::log(s);
  for (int j = 0; j < c; ++j) log_probs[j] -= norm;
}

int argmax_lowest(const double* v, int n) {
  int best = 0;
  for (int j = 1; j < n; ++j) {
    if (v[j] > v[best]) best = j;
  }
  return best;
}

void check_dim(Eigen::Index got, int want) {
  if (got != want) {
    throw DimensionMismatch("prediction: input has " + std::to_string(got) +
                            " features, model expects " + std::to_string(want));
  }
}

}  // namespace

double class_log_predictive(const Eigen::Ref<const Vector>& x, const ClassModel& cm) {
  if (cm.components.empty()) throw DomainError("class_log_predictive: model has no components");
  const int d = static_cast<int>(x.size());
  double alpha_hat = 0.0;
  for (const auto& c : cm.components) alpha_hat += c.alpha;
  Vector terms(static_cast<Eigen::Index>(cm.components.size()));
  for (std::size_t k = 0; k < cm.components.size(); ++k) {
    const auto& c = cm.components[k];
    check_dim(c.m.size(), d);
    const double dof = c.eta - d - 1.0;
    if (!(dof > 0.0)) {
      throw DomainError("class_log_predictive: component " + std::to_string(k) +
                        " has eta <= D + 1");
    }
    const StudentParams params{c.m, c.W / dof, c.nu};
    terms[static_cast<Eigen::Index>(k)] =
        std::log(c.alpha / alpha_hat) + log_marginal_density(x, params);
  }
  return log_sum_exp(terms);
}

double class_log_predictive(const Eigen::Ref<const Vector>& x,
                            const std::vector<PredictiveComponent>& comps,
                            std::optional<double> nu_override) {
  if (comps.empty()) throw DomainError("class_log_predictive: no components");
  check_dim(x.size(), static_cast<int>(comps.front().mean.size()));
  if (nu_override && !(*nu_override > 0.0)) throw DomainError("nu override must be positive");
  const Vector xc = x;
  return mixture_log_density(xc.data(), comps, nu_override);
}

ClassPosterior class_posterior(const Eigen::Ref<const Vector>& x, const TrainedClassifier& tc,
                               std::optional<double> nu_override) {
  check_dim(x.size(), tc.dim());
  if (nu_override && !(*nu_override > 0.0)) throw DomainError("nu override must be positive");
  ClassPosterior out;
  out.log_probs.resize(tc.num_classes());
  const Vector xc = x;
  fill_posterior(xc.data(), tc, nu_override, out.log_probs.data());
  out.argmax = argmax_lowest(out.log_probs.data(), tc.num_classes());
  return out;
}

int classify(const Eigen::Ref<const Vector>& x, const TrainedClassifier& tc) {
  return class_posterior(x, tc).label();
}

std::vector<int> classify_batch(const RowMatrix& x, const TrainedClassifier& tc) {
  check_dim(x.cols(), tc.dim());
  const int c = tc.num_classes();
  std::vector<double> buf(static_cast<std::size_t>(c));
  std::vector<int> out(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    fill_posterior(x.row(i).data(), tc, std::nullopt, buf.data());
    out[static_cast<std::size_t>(i)] = argmax_lowest(buf.data(), c) + 1;
  }
  return out;
}

Matrix posterior_batch(const RowMatrix& x, const TrainedClassifier& tc,
                       std::optional<double> nu_override) {
  check_dim(x.cols(), tc.dim());
  if (nu_override && !(*nu_override > 0.0)) throw DomainError("nu override must be positive");
  const int c = tc.num_classes();
  RowMatrix out(x.rows(), c);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    fill_posterior(x.row(i).data(), tc, nu_override, out.row(i).data());
  }
  return out;
}

SampleResult sample(const ClassModel& cm, int n, std::uint64_t seed) {
  if (n < 1) throw DomainError("sample: n must be >= 1");
  if (cm.components.empty()) throw DomainError("sample: model has no components");
  const int d = static_cast<int>(cm.components.front().m.size());
  double alpha_hat = 0.0;
  for (const auto& c : cm.components) alpha_hat += c.alpha;

  std::vector<PredictiveComponent> comps;
  std::vector<double> cumulative;
  double acc = 0.0;
  for (std::size_t k = 0; k < cm.components.size(); ++k) {
    comps.push_back(make_predictive_component(cm.components[k], alpha_hat, d, static_cast<int>(k)));
    acc += cm.components[k].alpha / alpha_hat;
    cumulative.push_back(acc);
  }

  Rng rng(seed);
  SampleResult out{RowMatrix(n, d), std::vector<int>(static_cast<std::size_t>(n))};
  Vector z(d);
  for (int i = 0; i < n; ++i) {
    const double pick = rng.uniform() * acc;
    std::size_t k = 0;
    while (k + 1 < cumulative.size() && pick > cumulative[k]) ++k;
    const auto& pc = comps[k];
    const double half_nu = 0.5 * pc.nu;
    // u ~ IG(nu/2, nu/2) is the reciprocal of Gamma(nu/2, rate nu/2).
    const double u = half_nu / rng.gamma(half_nu);
    for (int j = 0; j < d; ++j) z[j] = rng.normal();
    out.x.row(i) = (pc.mean + std::sqrt(u) * (pc.chol.lower() * z)).transpose();
    out.component[static_cast<std::size_t>(i)] = static_cast<int>(k);
  }
  return out;
}

}  // namespace scalemix
