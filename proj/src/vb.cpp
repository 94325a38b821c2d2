#include "scalemix/vb.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <mutex>
#include <numbers>
#include <string>
#include <thread>

#include "scalemix/numerics.hpp"
#include "scalemix/rng.hpp"

namespace scalemix {

namespace {

constexpr double kLn2 = std::numbers::ln2;

// Quantities of q(mu_k, Sigma_k) and q(pi) that every row shares.
struct ComponentCache {
  CholeskyFactor chol_w;
  double log_det_w = 0.0;
  double log_sigma_tilde = 0.0;
  double log_pi_tilde = 0.0;
};

double expected_log_det_sigma(double eta, int dim, double log_det_w) {
  double s = 0.0;
  for (int d = 1; d <= dim; ++d) {
    const double arg = 0.5 * (eta + 1.0 - d);
    if (!(arg > 0.0)) {
      throw DomainError("expectations: eta + 1 - D must be positive (eta = " + std::to_string(eta) + ")");
    }
    s += digamma(arg);
  }
  return -s - dim * kLn2 + log_det_w;
}

double sum_alpha(const std::vector<ComponentPosterior>& posteriors) {
  double s = 0.0;
  for (const auto& c : posteriors) s += c.alpha;
  return s;
}

std::vector<ComponentCache> build_cache(const std::vector<ComponentPosterior>& posteriors) {
  const double alpha_hat = sum_alpha(posteriors);
  const double psi_hat = digamma(alpha_hat);
  std::vector<ComponentCache> out;
  out.reserve(posteriors.size());
  for (const auto& c : posteriors) {
    ComponentCache cc;
    cc.chol_w = cholesky_with_jitter(c.W);
    cc.log_det_w = log_det(cc.chol_w);
    cc.log_sigma_tilde = expected_log_det_sigma(c.eta, static_cast<int>(c.m.size()), cc.log_det_w);
    cc.log_pi_tilde = digamma(c.alpha) - psi_hat;
    out.push_back(std::move(cc));
  }
  return out;
}

double delta_sq_expect(const ComponentPosterior& c, const ComponentCache& cc,
                       const Eigen::Ref<const Vector>& x) {
  return static_cast<double>(x.size()) / c.beta + c.eta * mahalanobis_sq(x, c.m, cc.chol_w);
}

void check_finite(double v, const char* term) {
  if (!std::isfinite(v)) {
    throw NumericError(std::string("elbo: non-finite term '") + term + "'");
  }
}

// splitmix64 finalizer.
std::uint64_t mix(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace

void VbConfig::validate() const {
  if (max_iters < 1) throw DomainError("vb config: max_iters must be >= 1");
  if (!(elbo_rel_tol > 0.0)) throw DomainError("vb config: elbo_rel_tol must be positive");
  if (!(prune_threshold > 0.0)) throw DomainError("vb config: prune_threshold must be positive");
  if (threads < 1) throw DomainError("vb config: threads must be >= 1");
}

std::uint64_t class_seed(std::uint64_t seed, int class_id) {
  return mix(seed ^ mix(static_cast<std::uint64_t>(class_id)));
}

ComponentExpectations expectations(const ComponentPosterior& c, const Eigen::Ref<const Vector>& x,
                                   double alpha_hat) {
  if (x.size() != c.m.size()) throw DimensionMismatch("expectations: x and m dimensions differ");
  const auto chol = cholesky_with_jitter(c.W);
  ComponentExpectations e;
  e.log_sigma_tilde = expected_log_det_sigma(c.eta, static_cast<int>(c.m.size()), log_det(chol));
  e.delta_sq_expect = static_cast<double>(x.size()) / c.beta + c.eta * mahalanobis_sq(x, c.m, chol);
  e.log_pi_tilde = digamma(c.alpha) - digamma(alpha_hat);
  return e;
}

Responsibilities e_step(const RowMatrix& x, const std::vector<ComponentPosterior>& posteriors) {
  if (posteriors.empty()) throw DomainError("e_step: no components");
  const auto n = x.rows();
  const auto k = static_cast<Eigen::Index>(posteriors.size());
  const double d = static_cast<double>(x.cols());
  const auto cache = build_cache(posteriors);

  Responsibilities out{Matrix(n, k), Matrix(n, k), Matrix(n, k)};
  // Row-independent part of ln(integral of rho over u).
  Vector base(k);
  for (Eigen::Index j = 0; j < k; ++j) {
    const double nu = posteriors[static_cast<std::size_t>(j)].nu;
    const auto& cc = cache[static_cast<std::size_t>(j)];
    base[j] = cc.log_pi_tilde + log_gamma(0.5 * (nu + d)) - log_gamma(0.5 * nu) -
              0.5 * d * std::log(std::numbers::pi * nu) - 0.5 * cc.log_sigma_tilde;
  }
  Vector log_rho(k);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vector xi = x.row(i).transpose();
    for (Eigen::Index j = 0; j < k; ++j) {
      const auto& c = posteriors[static_cast<std::size_t>(j)];
      const double dsq = delta_sq_expect(c, cache[static_cast<std::size_t>(j)], xi);
      const double a = 0.5 * (c.nu + d);
      out.a(i, j) = a;
      out.b(i, j) = 0.5 * dsq + 0.5 * c.nu;
      log_rho[j] = base[j] - a * std::log1p(dsq / c.nu);
    }
    const double mx = log_rho.maxCoeff();
    if (!std::isfinite(mx)) {
      throw NumericError("e_step: every component has zero weight at row " + std::to_string(i));
    }
    double total = 0.0;
    for (Eigen::Index j = 0; j < k; ++j) {
      out.r(i, j) = std::exp(log_rho[j] - mx);
      total += out.r(i, j);
    }
    out.r.row(i) /= total;
  }
  return out;
}

LatentStatistics compute_statistics(const RowMatrix& x, const Responsibilities& resp) {
  if (resp.rows() != x.rows()) {
    throw DimensionMismatch("statistics: responsibilities have " + std::to_string(resp.rows()) +
                            " rows, data has " + std::to_string(x.rows()));
  }
  const auto n = x.rows();
  const auto k = resp.components();
  const auto d = x.cols();
  LatentStatistics s;
  s.N = Vector::Zero(k);
  s.omega = Vector::Zero(k);
  s.xbar.assign(static_cast<std::size_t>(k), Vector::Zero(d));
  s.S.assign(static_cast<std::size_t>(k), Matrix::Zero(d, d));
  for (Eigen::Index j = 0; j < k; ++j) {
    auto& xbar = s.xbar[static_cast<std::size_t>(j)];
    auto& scatter = s.S[static_cast<std::size_t>(j)];
    double nk = 0.0, omega = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double w = resp.r(i, j) * resp.a(i, j) / resp.b(i, j);
      nk += resp.r(i, j);
      omega += w;
      xbar.noalias() += w * x.row(i).transpose();
    }
    s.N[j] = nk;
    s.omega[j] = omega;
    if (omega > 0.0) {
      xbar /= omega;
      for (Eigen::Index i = 0; i < n; ++i) {
        const double w = resp.r(i, j) * resp.a(i, j) / resp.b(i, j);
        const Vector diff = x.row(i).transpose() - xbar;
        scatter.noalias() += w * diff * diff.transpose();
      }
      scatter /= omega;
    }
  }
  return s;
}

std::vector<ComponentPosterior> m_step(const RowMatrix& x, const Responsibilities& resp,
                                       const PriorHyperparameters& prior,
                                       const std::vector<double>& nus) {
  if (static_cast<Eigen::Index>(nus.size()) != resp.components()) {
    throw DimensionMismatch("m_step: one nu per component required");
  }
  if (x.cols() != prior.dim()) throw DimensionMismatch("m_step: data and prior dimensions differ");
  const auto stats = compute_statistics(x, resp);
  std::vector<ComponentPosterior> out;
  out.reserve(nus.size());
  for (std::size_t j = 0; j < nus.size(); ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    const double nk = stats.N[jj];
    const double omega = stats.omega[jj];
    ComponentPosterior c;
    c.alpha = prior.alpha0 + nk;
    c.eta = prior.eta0 + nk;
    c.nu = nus[j];
    if (omega > 0.0) {
      const Vector& xbar = stats.xbar[j];
      c.beta = prior.beta0 + omega;
      c.m = (omega * xbar + prior.beta0 * prior.m0) / c.beta;
      const Vector dm = xbar - prior.m0;
      Matrix w = prior.W0 + omega * stats.S[j] + (prior.beta0 * omega / c.beta) * (dm * dm.transpose());
      c.W = 0.5 * (w + w.transpose());
    } else {
      c.beta = prior.beta0;
      c.m = prior.m0;
      c.W = prior.W0;
    }
    out.push_back(std::move(c));
  }
  return out;
}

double elbo(const RowMatrix& x, const Responsibilities& resp,
            const std::vector<ComponentPosterior>& posteriors, const PriorHyperparameters& prior) {
  const auto k = static_cast<Eigen::Index>(posteriors.size());
  if (resp.components() != k || resp.rows() != x.rows()) {
    throw DimensionMismatch("elbo: responsibilities do not match data and components");
  }
  const auto n = x.rows();
  const int dim = static_cast<int>(x.cols());
  const double d = dim;
  const auto cache = build_cache(posteriors);
  const double ln2pi = std::log(2.0 * std::numbers::pi);

  double lik = 0.0;        // <ln p(X | Z, U, mu, Sigma)>
  double latent = 0.0;     // <ln p(Z, U | pi)>
  double q_latent = 0.0;   // <ln q(Z, U)>
  for (Eigen::Index j = 0; j < k; ++j) {
    const auto& c = posteriors[static_cast<std::size_t>(j)];
    const auto& cc = cache[static_cast<std::size_t>(j)];
    const double half_nu = 0.5 * c.nu;
    const double ig_const = half_nu * std::log(half_nu) - log_gamma(half_nu);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double r = resp.r(i, j);
      if (r == 0.0) continue;
      const double a = resp.a(i, j);
      const double b = resp.b(i, j);
      const double e_inv_u = a / b;
      const double e_log_u = std::log(b) - digamma(a);
      const double dsq = delta_sq_expect(c, cc, x.row(i).transpose());
      lik += r * (-0.5 * d * ln2pi - 0.5 * d * e_log_u - 0.5 * cc.log_sigma_tilde -
                  0.5 * e_inv_u * dsq);
      latent += r * (cc.log_pi_tilde + ig_const - (half_nu + 1.0) * e_log_u - half_nu * e_inv_u);
      q_latent += r * (std::log(r) - log_gamma(a) - std::log(b) + (a + 1.0) * digamma(a) - a);
    }
  }

  // <ln p(theta)> and <ln q(theta)>.
  const double kd = static_cast<double>(k);
  const double alpha_hat = sum_alpha(posteriors);
  double p_theta = log_gamma(kd * prior.alpha0) - kd * log_gamma(prior.alpha0);
  double q_theta = log_gamma(alpha_hat);
  const auto chol_w0 = cholesky(prior.W0);
  const double log_det_w0 = log_det(chol_w0);
  const double mvlg0 = multivariate_log_gamma(0.5 * prior.eta0, dim);
  for (Eigen::Index j = 0; j < k; ++j) {
    const auto& c = posteriors[static_cast<std::size_t>(j)];
    const auto& cc = cache[static_cast<std::size_t>(j)];
    const double lst = cc.log_sigma_tilde;
    p_theta += (prior.alpha0 - 1.0) * cc.log_pi_tilde;
    q_theta += -log_gamma(c.alpha) + (c.alpha - 1.0) * cc.log_pi_tilde;

    const double quad_m0 = mahalanobis_sq(c.m, prior.m0, cc.chol_w);
    const Matrix w_inv = inverse_from_cholesky(cc.chol_w);
    const double tr_w0_winv = (prior.W0.cwiseProduct(w_inv)).sum();
    p_theta += -0.5 * d * ln2pi + 0.5 * d * std::log(prior.beta0) - 0.5 * lst -
               0.5 * prior.beta0 * (d / c.beta + c.eta * quad_m0);
    p_theta += 0.5 * prior.eta0 * log_det_w0 - 0.5 * prior.eta0 * d * kLn2 - mvlg0 -
               0.5 * (prior.eta0 + d + 1.0) * lst - 0.5 * c.eta * tr_w0_winv;

    q_theta += -0.5 * d * ln2pi + 0.5 * d * std::log(c.beta) - 0.5 * lst - 0.5 * d;
    q_theta += 0.5 * c.eta * cc.log_det_w - 0.5 * c.eta * d * kLn2 -
               multivariate_log_gamma(0.5 * c.eta, dim) - 0.5 * (c.eta + d + 1.0) * lst -
               0.5 * c.eta * d;
  }
  check_finite(lik, "<ln p(X|Z,U,mu,Sigma)>");
  check_finite(latent, "<ln p(Z,U|pi)>");
  check_finite(p_theta, "<ln p(theta)>");
  check_finite(q_latent, "<ln q(Z,U)>");
  check_finite(q_theta, "<ln q(theta)>");
  return lik + latent + p_theta - q_latent - q_theta;
}

PruneResult prune(const std::vector<ComponentPosterior>& posteriors, const Responsibilities& resp,
                  double threshold) {
  const auto k = resp.components();
  if (static_cast<Eigen::Index>(posteriors.size()) != k) {
    throw DimensionMismatch("prune: posteriors and responsibilities disagree");
  }
  std::vector<Eigen::Index> keep;
  for (Eigen::Index j = 0; j < k; ++j) {
    if (resp.r.col(j).sum() >= threshold) keep.push_back(j);
  }
  if (keep.empty()) {
    throw DomainError("prune: refusing to remove the last component");
  }
  PruneResult out;
  out.removed = static_cast<int>(k - static_cast<Eigen::Index>(keep.size()));
  if (out.removed == 0) {
    out.posteriors = posteriors;
    out.resp = resp;
    return out;
  }
  const auto n = resp.rows();
  const auto kk = static_cast<Eigen::Index>(keep.size());
  out.resp = {Matrix(n, kk), Matrix(n, kk), Matrix(n, kk)};
  for (Eigen::Index c = 0; c < kk; ++c) {
    out.resp.r.col(c) = resp.r.col(keep[static_cast<std::size_t>(c)]);
    out.resp.a.col(c) = resp.a.col(keep[static_cast<std::size_t>(c)]);
    out.resp.b.col(c) = resp.b.col(keep[static_cast<std::size_t>(c)]);
    out.posteriors.push_back(posteriors[static_cast<std::size_t>(keep[static_cast<std::size_t>(c)])]);
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    const double s = out.resp.r.row(i).sum();
    if (s > 0.0) {
      out.resp.r.row(i) /= s;
    } else {
      // All of this row's mass sat on removed components.
      out.resp.r.row(i).setConstant(1.0 / static_cast<double>(kk));
    }
  }
  return out;
}

Responsibilities initial_responsibilities(const RowMatrix& x, int k, double nu,
                                          InitStrategy strategy, std::uint64_t seed) {
  if (k < 1) throw DomainError("initialization: need at least one component");
  const auto n = x.rows();
  const double a = 0.5 * (nu + static_cast<double>(x.cols()));
  Responsibilities out{Matrix::Zero(n, k), Matrix::Constant(n, k, a), Matrix::Constant(n, k, a)};
  Rng rng(seed);
  if (strategy == InitStrategy::kRandomResponsibility) {
    // Symmetric Dirichlet(1) rows via normalized exponentials.
    for (Eigen::Index i = 0; i < n; ++i) {
      for (int j = 0; j < k; ++j) out.r(i, j) = rng.exponential();
      out.r.row(i) /= out.r.row(i).sum();
    }
    return out;
  }
  // Hard assignment to the nearest of k distinct random rows.
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  shuffle(order.begin(), order.end(), rng);
  const auto centers = std::min<Eigen::Index>(k, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Index best = 0;
    double best_dist = std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < centers; ++c) {
      const double dist = (x.row(i) - x.row(order[static_cast<std::size_t>(c)])).squaredNorm();
      if (dist < best_dist) {
        best_dist = dist;
        best = c;
      }
    }
    out.r(i, best) = 1.0;
  }
  return out;
}

double ml_nu_update(const Responsibilities& resp, Eigen::Index component, double current_nu) {
  double nk = 0.0, weighted = 0.0;
  for (Eigen::Index i = 0; i < resp.rows(); ++i) {
    const double r = resp.r(i, component);
    if (r == 0.0) continue;
    const double a = resp.a(i, component);
    const double b = resp.b(i, component);
    nk += r;
    weighted += r * (std::log(b) - digamma(a) + a / b);
  }
  if (!(nk > 1e-8)) return current_nu;
  const double c = weighted / nk;
  // Stationarity: ln(nu/2) - psi(nu/2) + 1 - c = 0, decreasing in nu.
  auto g = [c](double nu) { return std::log(0.5 * nu) - digamma(0.5 * nu) + 1.0 - c; };
  constexpr double kLo = 1e-3, kHi = 1e6;
  if (g(kHi) >= 0.0) return kHi;
  if (g(kLo) <= 0.0) return kLo;
  double lo = std::log(kLo), hi = std::log(kHi);
  for (int it = 0; it < 200 && hi - lo > 1e-13; ++it) {
    const double mid = 0.5 * (lo + hi);
    (g(std::exp(mid)) > 0.0 ? lo : hi) = mid;
  }
  return std::exp(0.5 * (lo + hi));
}

ClassModel fit_class(const RowMatrix& x, int class_id, const PriorHyperparameters& prior,
                     const VbConfig& config, const TrainingLog& log) {
  config.validate();
  prior.validate();
  if (x.rows() == 0) {
    throw DataError("fit: class " + std::to_string(class_id) + " has no training rows");
  }
  if (x.cols() != prior.dim()) {
    throw DimensionMismatch("fit: data dimension " + std::to_string(x.cols()) +
                            " differs from prior dimension " + std::to_string(prior.dim()));
  }

  ClassModel model;
  model.class_id = class_id;
  std::vector<double> nus(static_cast<std::size_t>(prior.k_init), prior.nu_fixed);
  auto resp = initial_responsibilities(x, prior.k_init, prior.nu_fixed, config.init,
                                       class_seed(config.seed, class_id));
  auto posteriors = m_step(x, resp, prior, nus);

  double previous = std::numeric_limits<double>::quiet_NaN();
  for (int it = 1; it <= config.max_iters; ++it) {
    resp = e_step(x, posteriors);
    posteriors = m_step(x, resp, prior, nus);
    if (config.nu_mode == NuMode::kMaximumLikelihood) {
      for (std::size_t j = 0; j < posteriors.size(); ++j) {
        nus[j] = ml_nu_update(resp, static_cast<Eigen::Index>(j), nus[j]);
        posteriors[j].nu = nus[j];
      }
    }
    auto pruned = prune(posteriors, resp, config.prune_threshold);
    if (pruned.removed > 0) {
      model.n_pruned += pruned.removed;
      resp = std::move(pruned.resp);
      nus.clear();
      for (const auto& c : pruned.posteriors) nus.push_back(c.nu);
      posteriors = m_step(x, resp, prior, nus);
    }
    const double bound = elbo(x, resp, posteriors, prior);
    model.elbo_trace.push_back(bound);
    model.iterations = it;
    if (log) log({class_id, it, bound, static_cast<int>(posteriors.size())});
    if (std::isfinite(previous) && pruned.removed == 0 &&
        std::abs(bound - previous) <= config.elbo_rel_tol * std::abs(bound)) {
      model.converged = true;
      break;
    }
    previous = bound;
  }
  model.components = std::move(posteriors);
  model.refresh_alpha_hat();
  return model;
}

TrainedClassifier fit(const FeatureDataset& data, const PriorHyperparameters& prior,
                      const VbConfig& config, const TrainingLog& log) {
  config.validate();
  prior.validate();
  if (data.dim() != prior.dim()) {
    throw DimensionMismatch("fit: data dimension " + std::to_string(data.dim()) +
                            " differs from prior dimension " + std::to_string(prior.dim()));
  }
  const int num_classes = data.num_classes();
  if (num_classes < 1) throw DataError("fit: dataset has no labelled rows");
  std::vector<RowMatrix> per_class;
  for (int c = 1; c <= num_classes; ++c) {
    per_class.push_back(data.class_rows(c));
    if (per_class.back().rows() == 0) {
      throw DataError("fit: class " + std::to_string(c) + " has no training rows");
    }
  }

  std::vector<ClassModel> models(static_cast<std::size_t>(num_classes));
  std::mutex log_mutex;
  TrainingLog guarded;
  if (log) {
    guarded = [&](const IterationRecord& rec) {
      std::lock_guard<std::mutex> lock(log_mutex);
      log(rec);
    };
  }
  auto train_one = [&](int c) {
    models[static_cast<std::size_t>(c - 1)] = fit_class(per_class[static_cast<std::size_t>(c - 1)], c, prior, config, guarded);
  };

  const int workers = std::min(config.threads, num_classes);
  if (workers <= 1) {
    for (int c = 1; c <= num_classes; ++c) train_one(c);
  } else {
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(num_classes));
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (int c = 1 + w; c <= num_classes; c += workers) {
          try {
            train_one(c);
          } catch (...) {
            errors[static_cast<std::size_t>(c - 1)] = std::current_exception();
          }
        }
      });
    }
    for (auto& t : pool) t.join();
    for (const auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  Vector log_prior = make_class_log_prior(data.labels, num_classes, config.class_prior);
  return TrainedClassifier(std::move(models), std::move(log_prior), prior);
}

}  // namespace scalemix
