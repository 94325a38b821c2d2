#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <cmath>
#include <numbers>
#include <vector>

#include "doctest.h"
#include "scalemix/numerics.hpp"
#include "scalemix/vb.hpp"
#include "support.hpp"

using namespace scalemix;

namespace {

using ld = long double;

PriorHyperparameters unit_prior(int dim, double nu = 5.0, int k = 1) {
  PriorHyperparameters p;
  p.alpha0 = 0.001;
  p.beta0 = 1.0;
  p.m0 = Vector::Zero(dim);
  p.W0 = Matrix::Identity(dim, dim);
  p.eta0 = dim + 1.0;
  p.nu_fixed = nu;
  p.k_init = k;
  return p;
}

// Draws n rows from a K-component Student-t mixture.
RowMatrix sample_mixture(int dim, int k, int n, double nu, Rng& rng) {
  std::vector<Vector> centers;
  std::vector<Matrix> factors;
  for (int j = 0; j < k; ++j) {
    centers.push_back(testing::random_vector(dim, rng, 4.0));
    factors.push_back(Eigen::LLT<Matrix>(testing::random_spd(dim, rng)).matrixL());
  }
  RowMatrix x(n, dim);
  for (int i = 0; i < n; ++i) {
    const int j = static_cast<int>(rng.below(static_cast<std::uint64_t>(k)));
    const double u = 1.0 / (rng.gamma(0.5 * nu) / (0.5 * nu));
    x.row(i) = (centers[j] + std::sqrt(u) * factors[j] * testing::random_vector(dim, rng)).transpose();
  }
  return x;
}

std::vector<ComponentPosterior> random_posteriors(int dim, int k, Rng& rng, double nu) {
  std::vector<ComponentPosterior> out;
  for (int j = 0; j < k; ++j) {
    ComponentPosterior c;
    c.alpha = 1.0 + 20 * rng.uniform();
    c.beta = 1.0 + 20 * rng.uniform();
    c.m = testing::random_vector(dim, rng, 2.0);
    c.eta = dim + 2.0 + 20 * rng.uniform();
    c.W = c.eta * testing::random_spd(dim, rng);
    c.nu = nu;
    out.push_back(c);
  }
  return out;
}

ld ld_digamma(ld x) { return boost::math::digamma(x); }
ld ld_lgamma(ld x) { return boost::math::lgamma(x); }

Eigen::Matrix<ld, Eigen::Dynamic, Eigen::Dynamic> to_ld(const Matrix& m) { return m.cast<ld>(); }

// ln of the integral over u of exp(<ln p(x, z = k, u | theta)>), evaluated
// in long double from the inverse-gamma integral identity.
ld reference_log_rho(const ComponentPosterior& c, const Vector& x, double alpha_hat) {
  const int dim = static_cast<int>(x.size());
  const auto w = to_ld(c.W);
  const auto w_inv = w.inverse();
  const auto diff = (x - c.m).cast<ld>();
  const ld dsq = static_cast<ld>(dim) / c.beta + static_cast<ld>(c.eta) * diff.dot(w_inv * diff);
  ld log_sigma = std::log(w.determinant()) - dim * std::log(2.0L);
  for (int d = 1; d <= dim; ++d) log_sigma -= ld_digamma((c.eta + 1.0L - d) / 2);
  const ld nu = c.nu;
  const ld log_pi = ld_digamma(c.alpha) - ld_digamma(alpha_hat);
  const ld a = (nu + dim) / 2;
  return log_pi - dim / 2.0L * std::log(2 * std::numbers::pi_v<ld>) - log_sigma / 2 +
         nu / 2 * std::log(nu / 2) - ld_lgamma(nu / 2) + ld_lgamma(a) - a * std::log((dsq + nu) / 2);
}

ld mv_lgamma(ld a, int dim) {
  ld s = dim * (dim - 1) / 4.0L * std::log(std::numbers::pi_v<ld>);
  for (int d = 1; d <= dim; ++d) s += ld_lgamma(a + (1.0L - d) / 2);
  return s;
}

// Bound after an exact E-step: sum_n ln sum_k rho~ minus KL(q(pi)||p(pi))
// and the per-component KL(q(mu, Sigma)||p(mu, Sigma)).
ld collapsed_bound(const RowMatrix& x, const std::vector<ComponentPosterior>& post,
                   const PriorHyperparameters& prior) {
  const int dim = static_cast<int>(x.cols());
  const auto k = post.size();
  ld alpha_hat = 0;
  for (const auto& c : post) alpha_hat += c.alpha;
  ld total = 0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    std::vector<ld> terms;
    for (const auto& c : post) terms.push_back(reference_log_rho(c, x.row(i).transpose(), static_cast<double>(alpha_hat)));
    ld mx = terms[0];
    for (ld t : terms) mx = std::max(mx, t);
    ld s = 0;
    for (ld t : terms) s += std::exp(t - mx);
    total += mx + std::log(s);
  }
  ld kl_dir = ld_lgamma(alpha_hat) - ld_lgamma(k * static_cast<ld>(prior.alpha0)) +
              k * ld_lgamma(prior.alpha0);
  for (const auto& c : post) {
    kl_dir += -ld_lgamma(c.alpha) + (c.alpha - static_cast<ld>(prior.alpha0)) * (ld_digamma(c.alpha) - ld_digamma(alpha_hat));
  }
  ld kl_niw = 0;
  const auto w0 = to_ld(prior.W0);
  for (const auto& c : post) {
    const auto w = to_ld(c.W);
    const auto w_inv = w.inverse();
    const auto dm = (c.m - prior.m0).cast<ld>();
    const ld b0 = prior.beta0, b = c.beta, e0 = prior.eta0, e = c.eta;
    kl_niw += 0.5L * (dim * b0 / b - dim + dim * std::log(b / b0) + b0 * e * dm.dot(w_inv * dm));
    ld psi_sum = 0;
    for (int d = 1; d <= dim; ++d) psi_sum += ld_digamma((e + 1 - d) / 2);
    kl_niw += e0 / 2 * (std::log(w.determinant()) - std::log(w0.determinant())) +
              e / 2 * ((w0 * w_inv).trace() - dim) + mv_lgamma(e0 / 2, dim) - mv_lgamma(e / 2, dim) +
              (e - e0) / 2 * psi_sum;
  }
  return total - kl_dir - kl_niw;
}

}  // namespace

TEST_CASE("expectations at reference posteriors") {
  ComponentPosterior c;
  c.alpha = 3.0;
  c.beta = 2.0;
  c.m = Vector::Zero(2);
  c.W = Matrix::Identity(2, 2);
  c.eta = 5.0;
  c.nu = 5.0;
  const Vector x = Vector::Zero(2);
  const auto e = expectations(c, x, 3.0);
  CHECK(e.log_sigma_tilde ==
        doctest::Approx(-boost::math::digamma(2.5) - boost::math::digamma(2.0) - 2 * std::numbers::ln2).epsilon(1e-13));
  CHECK(e.delta_sq_expect == doctest::Approx(1.0));
  CHECK(e.log_pi_tilde == 0.0);

  Vector y(2);
  y << 1.0, 2.0;
  CHECK(expectations(c, y, 6.0).delta_sq_expect == doctest::Approx(1.0 + 5.0 * 5.0));
  CHECK(expectations(c, y, 6.0).log_pi_tilde ==
        doctest::Approx(boost::math::digamma(3.0) - boost::math::digamma(6.0)));
  CHECK_THROWS_AS(expectations(c, Vector::Zero(3), 3.0), DimensionMismatch);
}

TEST_CASE("e_step matches a long-double reference") {
  Rng rng(3);
  for (int dim : {1, 2, 4}) {
    for (double nu : {0.7, 5.0, 300.0}) {
      const auto post = random_posteriors(dim, 3, rng, nu);
      RowMatrix x(12, dim);
      for (int i = 0; i < 12; ++i) x.row(i) = testing::random_vector(dim, rng, 3.0).transpose();
      const auto resp = e_step(x, post);
      double alpha_hat = 0;
      for (const auto& c : post) alpha_hat += c.alpha;
      for (Eigen::Index i = 0; i < x.rows(); ++i) {
        std::vector<ld> lr;
        ld mx = -INFINITY;
        for (const auto& c : post) {
          lr.push_back(reference_log_rho(c, x.row(i).transpose(), alpha_hat));
          mx = std::max(mx, lr.back());
        }
        ld s = 0;
        for (ld v : lr) s += std::exp(v - mx);
        for (std::size_t j = 0; j < post.size(); ++j) {
          const double want = static_cast<double>(std::exp(lr[j] - mx) / s);
          CHECK(std::abs(resp.r(i, static_cast<Eigen::Index>(j)) - want) < 1e-12);
        }
        CHECK(resp.r.row(i).sum() == doctest::Approx(1.0).epsilon(1e-14));
      }
      CHECK((resp.a.array() == 0.5 * (nu + dim)).all());
    }
  }
}

TEST_CASE("e_step with one component and with identical components") {
  Rng rng(4);
  const auto one = random_posteriors(2, 1, rng, 3.0);
  RowMatrix x(5, 2);
  x.setRandom();
  CHECK((e_step(x, one).r.array() == 1.0).all());
  auto two = one;
  two.push_back(one[0]);
  const auto r = e_step(x, two).r;
  CHECK((r.array() - 0.5).abs().maxCoeff() < 1e-15);
}

TEST_CASE("m_step on a hand-checked example") {
  // D = 1, four points, two components with known responsibilities and
  // <1/u>; the expected values below were worked out by hand.
  RowMatrix x(4, 1);
  x << 0.0, 1.0, 2.0, 4.0;
  Responsibilities resp{Matrix(4, 2), Matrix(4, 2), Matrix(4, 2)};
  resp.r << 1.0, 0.0, 0.5, 0.5, 0.5, 0.5, 0.0, 1.0;
  resp.a.setConstant(2.0);
  resp.b << 2.0, 1.0, 1.0, 4.0, 4.0, 2.0, 1.0, 1.0;  // <1/u> = a / b
  auto prior = unit_prior(1);
  prior.m0 << 1.0;
  const auto post = m_step(x, resp, prior, {5.0, 5.0});
  // Component 1: weights r<1/u> = 1, 1, 0.25, 0 -> omega 2.25,
  // xbar = (0 + 1 + 0.5) / 2.25 = 2/3.
  CHECK(post[0].alpha == doctest::Approx(2.001));
  CHECK(post[0].eta == doctest::Approx(4.0));
  CHECK(post[0].beta == doctest::Approx(3.25));
  const double xbar = 1.5 / 2.25;
  CHECK(post[0].m[0] == doctest::Approx((2.25 * xbar + 1.0) / 3.25));
  const double scatter = 1.0 * xbar * xbar + 1.0 * (1 - xbar) * (1 - xbar) + 0.25 * (2 - xbar) * (2 - xbar);
  CHECK(post[0].W(0, 0) ==
        doctest::Approx(1.0 + scatter + (2.25 / 3.25) * (xbar - 1.0) * (xbar - 1.0)).epsilon(1e-14));
  // Component 2: weights 0, 0.25, 0.5, 2 -> omega 2.75.
  CHECK(post[1].beta == doctest::Approx(3.75));
  CHECK(post[1].m[0] == doctest::Approx((0.25 + 1.0 + 8.0 + 1.0) / 3.75));
}

TEST_CASE("m_step count identities") {
  // N = 500 rows in one component, alpha0 = 0.001, eta0 = D + 1 = 3.
  Rng rng(5);
  const RowMatrix x = sample_mixture(2, 1, 500, 5.0, rng);
  const auto prior = unit_prior(2);
  Responsibilities resp{Matrix::Ones(500, 1), Matrix::Constant(500, 1, 3.5), Matrix::Constant(500, 1, 3.5)};
  const auto post = m_step(x, resp, prior, {5.0});
  CHECK(post[0].alpha == doctest::Approx(500.001));
  CHECK(post[0].eta == doctest::Approx(503.0));
  CHECK(post[0].beta == doctest::Approx(501.0));
  // With <1/u> = 1 the scale matrix is W0 + sum (x - m0)(x - m0)^T - beta m m^T.
  Matrix raw = prior.W0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) raw += x.row(i).transpose() * x.row(i);
  raw -= post[0].beta * post[0].m * post[0].m.transpose();
  CHECK((post[0].W - raw).norm() < 1e-9 * raw.norm());
  CHECK((post[0].W - post[0].W.transpose()).norm() == 0.0);
}

TEST_CASE("m_step keeps the prior for an empty component") {
  RowMatrix x(3, 2);
  x.setRandom();
  const auto prior = unit_prior(2);
  Responsibilities resp{Matrix(3, 2), Matrix::Constant(3, 2, 2.0), Matrix::Constant(3, 2, 2.0)};
  resp.r.col(0).setOnes();
  resp.r.col(1).setZero();
  const auto post = m_step(x, resp, prior, {5.0, 5.0});
  CHECK(post[1].beta == prior.beta0);
  CHECK(post[1].m == prior.m0);
  CHECK(post[1].W == prior.W0);
  CHECK(post[1].alpha == prior.alpha0);
  CHECK_THROWS_AS(m_step(x, resp, prior, {5.0}), DimensionMismatch);
}

TEST_CASE("elbo of the prior with no data is zero") {
  const auto prior = unit_prior(3);
  ComponentPosterior c{prior.alpha0, prior.beta0, prior.m0, prior.W0, prior.eta0, 5.0};
  const RowMatrix x(0, 3);
  const Responsibilities resp{Matrix(0, 1), Matrix(0, 1), Matrix(0, 1)};
  CHECK(std::abs(elbo(x, resp, {c}, prior)) < 1e-10);
}

TEST_CASE("elbo agrees with the collapsed bound after an E-step") {
  Rng rng(6);
  for (int dim : {1, 2, 3}) {
    for (double nu : {0.8, 4.0, 60.0}) {
      for (int k : {1, 3}) {
        const RowMatrix x = sample_mixture(dim, 2, 80, nu, rng);
        auto prior = unit_prior(dim, nu, k);
        prior.m0 = testing::random_vector(dim, rng);
        prior.W0 = testing::random_spd(dim, rng);
        const auto init = initial_responsibilities(x, k, nu, InitStrategy::kRandomResponsibility, 9);
        std::vector<double> nus(static_cast<std::size_t>(k), nu);
        auto post = m_step(x, init, prior, nus);
        const auto resp = e_step(x, post);
        const double got = elbo(x, resp, post, prior);
        const double want = static_cast<double>(collapsed_bound(x, post, prior));
        CHECK(testing::rel_err(got, want) < 1e-9);
      }
    }
  }
}

TEST_CASE("elbo never decreases during fitting") {
  Rng rng(7);
  for (int run = 0; run < 12; ++run) {
    const int dim = 1 + run % 4;
    const int k = 1 + run % 3;
    const RowMatrix x = sample_mixture(dim, k, 300, 3.0, rng);
    auto prior = unit_prior(dim, 3.0, 4);
    prior.m0 = x.colwise().mean().transpose();
    VbConfig cfg;
    cfg.seed = static_cast<std::uint64_t>(run);
    cfg.nu_mode = run % 2 == 0 ? NuMode::kFixed : NuMode::kMaximumLikelihood;
    const auto model = fit_class(x, 1, prior, cfg);
    for (std::size_t i = 1; i < model.elbo_trace.size(); ++i) {
      CHECK(model.elbo_trace[i] - model.elbo_trace[i - 1] >= -1e-8);
    }
  }
}

TEST_CASE("fit conserves counts and normalizes weights") {
  Rng rng(8);
  const RowMatrix x = sample_mixture(2, 2, 400, 5.0, rng);
  const auto prior = unit_prior(2, 5.0, 5);
  const auto model = fit_class(x, 1, prior, VbConfig{});
  double counts = 0.0, weights = 0.0;
  for (const auto& c : model.components) {
    counts += c.alpha - prior.alpha0;
    weights += c.alpha / model.alpha_hat;
    CHECK(c.eta - prior.eta0 == doctest::Approx(c.alpha - prior.alpha0).epsilon(1e-9));
  }
  CHECK(counts == doctest::Approx(400.0).epsilon(1e-9));
  CHECK(weights == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(model.components.size() + static_cast<std::size_t>(model.n_pruned) == 5);
}

TEST_CASE("a single row gives a convex combination of the row and the prior mean") {
  auto prior = unit_prior(2, 5.0, 1);
  RowMatrix x(1, 2);
  x << 3.0, -1.0;
  const auto model = fit_class(x, 1, prior, VbConfig{});
  REQUIRE(model.components.size() == 1);
  const Vector& m = model.components[0].m;
  const double t = m[0] / 3.0;
  CHECK(t > 0.0);
  CHECK(t < 1.0);
  CHECK(m[1] == doctest::Approx(-t));
}

TEST_CASE("prune") {
  const auto prior = unit_prior(1);
  std::vector<ComponentPosterior> post(3, ComponentPosterior{1.0, 1.0, prior.m0, prior.W0, 3.0, 5.0});
  post[1].alpha = 7.0;
  Responsibilities resp{Matrix(3, 3), Matrix::Constant(3, 3, 3.0), Matrix::Constant(3, 3, 3.0)};
  resp.r << 0.5, 0.0002, 0.4998, 0.5, 0.0002, 0.4998, 0.0, 0.0001, 0.9999;
  const auto out = prune(post, resp, 1e-3);
  CHECK(out.removed == 1);
  REQUIRE(out.posteriors.size() == 2);
  CHECK(out.posteriors[0].alpha == 1.0);
  for (Eigen::Index i = 0; i < 3; ++i) CHECK(out.resp.r.row(i).sum() == doctest::Approx(1.0));
  CHECK(out.resp.r(2, 1) == doctest::Approx(1.0));

  const auto none = prune(post, resp, 1e-5);
  CHECK(none.removed == 0);
  CHECK(none.resp.r == resp.r);
  CHECK_THROWS_AS(prune(post, resp, 10.0), DomainError);
}

TEST_CASE("redundant components are pruned on unimodal data") {
  Rng rng(9);
  const RowMatrix x = sample_mixture(2, 1, 500, 5.0, rng);
  auto prior = unit_prior(2, 5.0, 8);
  prior.m0 = x.colwise().mean().transpose();
  const auto model = fit_class(x, 1, prior, VbConfig{});
  CHECK(model.components.size() <= 3);
  CHECK(model.n_pruned >= 5);
}

TEST_CASE("initial responsibilities") {
  RowMatrix x(6, 2);
  x << 0, 0, 0.1, 0, 10, 10, 10.1, 10, -10, 5, -10.1, 5;
  const auto r = initial_responsibilities(x, 3, 4.0, InitStrategy::kRandomResponsibility, 1);
  CHECK((r.r.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-14);
  CHECK((r.r.array() > 0.0).all());
  CHECK((r.a.array() == r.b.array()).all());
  const auto h = initial_responsibilities(x, 3, 4.0, InitStrategy::kKmeansLike, 1);
  for (Eigen::Index i = 0; i < 6; ++i) CHECK(h.r.row(i).maxCoeff() == 1.0);
  CHECK_THROWS_AS(initial_responsibilities(x, 0, 4.0, InitStrategy::kKmeansLike, 1), DomainError);
}

TEST_CASE("ml_nu_update solves its stationarity condition") {
  Rng rng(10);
  const RowMatrix x = sample_mixture(1, 1, 2000, 2.0, rng);
  const auto prior = unit_prior(1, 2.0, 1);
  auto post = m_step(x, initial_responsibilities(x, 1, 2.0, InitStrategy::kKmeansLike, 0), prior, {2.0});
  const auto resp = e_step(x, post);
  const double nu = ml_nu_update(resp, 0, 2.0);
  ld c = 0;
  for (Eigen::Index i = 0; i < resp.rows(); ++i) {
    c += std::log(static_cast<ld>(resp.b(i, 0))) - ld_digamma(resp.a(i, 0)) + resp.a(i, 0) / resp.b(i, 0);
  }
  c /= resp.rows();
  const double g = static_cast<double>(std::log(nu / 2.0L) - ld_digamma(nu / 2.0L) + 1 - c);
  CHECK(std::abs(g) < 1e-9);
  CHECK(nu > 0.5);
  CHECK(nu < 10.0);
}

TEST_CASE("fit is invariant to the thread count and permutes with the labels") {
  Rng rng(11);
  FeatureDataset d(2);
  for (int c = 1; c <= 3; ++c) {
    const RowMatrix x = sample_mixture(2, 1, 60, 5.0, rng);
    for (Eigen::Index i = 0; i < x.rows(); ++i) d.append(x.row(i).transpose(), c, 1, 1);
  }
  auto prior = unit_prior(2, 5.0, 2);
  VbConfig one, many;
  many.threads = 3;
  const auto a = fit(d, prior, one);
  const auto b = fit(d, prior, many);
  for (int c = 0; c < 3; ++c) {
    const auto& ca = a.classes()[static_cast<std::size_t>(c)];
    const auto& cb = b.classes()[static_cast<std::size_t>(c)];
    CHECK(ca.elbo_trace == cb.elbo_trace);
    REQUIRE(ca.components.size() == cb.components.size());
    for (std::size_t j = 0; j < ca.components.size(); ++j) CHECK(ca.components[j].W == cb.components[j].W);
  }
  CHECK_THROWS_AS(fit(d, unit_prior(3), one), DimensionMismatch);
}

TEST_CASE("row permutation leaves the fitted posteriors unchanged up to relabeling") {
  Rng rng(12);
  RowMatrix x(400, 2);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    x.row(i) = (testing::random_vector(2, rng, 0.5) + Vector::Constant(2, i % 2 ? 6.0 : -6.0)).transpose();
  }
  RowMatrix shuffled(x.rows(), 2);
  for (Eigen::Index i = 0; i < x.rows(); ++i) shuffled.row(i) = x.row((i * 37) % x.rows());
  for (int k : {1, 2}) {
    auto prior = unit_prior(2, 5.0, k);
    prior.m0 = x.colwise().mean().transpose();
    VbConfig cfg;
    cfg.elbo_rel_tol = 1e-12;
    const auto a = fit_class(x, 1, prior, cfg);
    const auto b = fit_class(shuffled, 1, prior, cfg);
    REQUIRE(a.components.size() == b.components.size());
    for (const auto& ca : a.components) {
      double best = INFINITY;
      for (const auto& cb : b.components) best = std::min(best, (ca.m - cb.m).norm());
      CHECK(best < 1e-6);
    }
  }
}
