#include <cmath>
#include <numbers>

#include "doctest.h"
#include "scalemix/density.hpp"
#include "scalemix/predict.hpp"
#include "support.hpp"

using namespace scalemix;

namespace {

using ld = long double;

PriorHyperparameters prior_for(int dim) {
  PriorHyperparameters p;
  p.m0 = Vector::Zero(dim);
  p.W0 = Matrix::Identity(dim, dim);
  p.eta0 = dim + 1.0;
  return p;
}

ClassModel class_of(int id, std::vector<ComponentPosterior> comps) {
  ClassModel cm;
  cm.class_id = id;
  cm.components = std::move(comps);
  cm.refresh_alpha_hat();
  cm.converged = true;
  return cm;
}

// Component whose plug-in scale is exactly `sigma` (eta - D - 1 = 1).
ComponentPosterior component(double alpha, Vector m, const Matrix& sigma, double nu) {
  const auto dim = static_cast<double>(m.size());
  return {alpha, 10.0, std::move(m), sigma, dim + 2.0, nu};
}

TrainedClassifier two_classes(double offset, double nu = 5.0) {
  std::vector<ClassModel> classes;
  classes.push_back(class_of(1, {component(5.0, Vector::Zero(2), Matrix::Identity(2, 2), nu)}));
  classes.push_back(class_of(2, {component(5.0, Vector::Constant(2, offset), Matrix::Identity(2, 2), nu)}));
  return TrainedClassifier(std::move(classes), Vector::Constant(2, std::log(0.5)), prior_for(2));
}

// Long-double Student-t log density.
ld ref_log_t(const Vector& x, const Vector& mu, const Matrix& sigma, ld nu) {
  const auto s = sigma.cast<ld>();
  const auto diff = (x - mu).cast<ld>();
  const ld q = diff.dot(s.inverse() * diff);
  const ld d = static_cast<ld>(x.size());
  return std::lgamma((nu + d) / 2) - std::lgamma(nu / 2) - d / 2 * std::log(nu * std::numbers::pi_v<ld>) -
         std::log(s.determinant()) / 2 - (nu + d) / 2 * std::log1p(q / nu);
}

}  // namespace

TEST_CASE("single component predictive at its center") {
  const auto cm = class_of(1, {component(3.0, Vector::Zero(2), Matrix::Identity(2, 2), 4.0)});
  Vector x = Vector::Zero(2);
  CHECK(class_log_predictive(x, cm) == doctest::Approx(-1.8378770664093453).epsilon(1e-13));
}

TEST_CASE("mixture predictive matches a long-double reference") {
  Rng rng(1);
  for (int dim : {1, 3}) {
    std::vector<ComponentPosterior> comps;
    for (int k = 0; k < 3; ++k) {
      ComponentPosterior c;
      c.alpha = 1.0 + 10 * rng.uniform();
      c.beta = 5.0;
      c.m = testing::random_vector(dim, rng, 3.0);
      c.eta = dim + 1.5 + 30 * rng.uniform();
      c.W = testing::random_spd(dim, rng) * (c.eta - dim - 1);
      c.nu = 0.5 + 10 * rng.uniform();
      comps.push_back(c);
    }
    const auto cm = class_of(1, comps);
    for (int i = 0; i < 20; ++i) {
      const Vector x = testing::random_vector(dim, rng, 4.0);
      ld total = 0;
      for (const auto& c : comps) {
        total += c.alpha / cm.alpha_hat * std::exp(ref_log_t(x, c.m, c.W / (c.eta - dim - 1), c.nu));
      }
      CHECK(testing::rel_err(class_log_predictive(x, cm), static_cast<double>(std::log(total))) < 1e-12);
    }
  }
}

TEST_CASE("degenerate mixture equals its single component") {
  const Vector m = Vector::Constant(2, 1.0);
  Matrix s(2, 2);
  s << 2.0, 0.5, 0.5, 1.0;
  const auto single = class_of(1, {component(4.0, m, s, 3.0)});
  const auto doubled = class_of(1, {component(2.0, m, s, 3.0), component(2.0, m, s, 3.0)});
  Vector x(2);
  x << -1.0, 4.0;
  CHECK(class_log_predictive(x, doubled) == doctest::Approx(class_log_predictive(x, single)).epsilon(1e-14));
  CHECK(class_log_predictive(x, single) ==
        doctest::Approx(log_marginal_density(x, StudentParams{m, s, 3.0})).epsilon(1e-14));
}

TEST_CASE("cached and uncached predictive agree") {
  const auto tc = two_classes(2.0, 2.5);
  Rng rng(2);
  for (int i = 0; i < 50; ++i) {
    const Vector x = testing::random_vector(2, rng, 3.0);
    CHECK(class_log_predictive(x, tc.predictive()[1]) ==
          doctest::Approx(class_log_predictive(x, tc.classes()[1])).epsilon(1e-14));
  }
}

TEST_CASE("class posteriors normalize, tie-break low and follow the prior") {
  const auto tc = two_classes(3.0);
  Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    const Vector x = testing::random_vector(2, rng, 4.0);
    CHECK(class_posterior(x, tc).log_probs.array().exp().sum() == doctest::Approx(1.0).epsilon(1e-14));
  }
  // On the perpendicular bisector both classes are equally likely.
  const Vector mid = Vector::Constant(2, 1.5);
  const auto p = class_posterior(mid, tc);
  CHECK(p.log_probs[0] == doctest::Approx(std::log(0.5)).epsilon(1e-12));
  CHECK(p.label() == 1);
  CHECK(classify(Vector::Constant(2, 2.9), tc) == 2);

  // A uniform shift of the class prior changes nothing.
  auto classes = tc.classes();
  const TrainedClassifier same(classes, Vector::Constant(2, std::log(0.5)), tc.prior());
  Vector lp(2);
  lp << std::log(0.9), std::log(0.1);
  const TrainedClassifier skewed(classes, lp, tc.prior());
  const Vector x = Vector::Constant(2, 1.6);
  CHECK(class_posterior(x, same).log_probs == class_posterior(x, tc).log_probs);
  CHECK(class_posterior(x, skewed).label() == 1);
}

TEST_CASE("identical classes give one half") {
  const auto tc = two_classes(0.0);
  Vector x(2);
  x << 7.0, -3.0;
  const auto p = class_posterior(x, tc);
  CHECK(std::exp(p.log_probs[0]) == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(p.label() == 1);
}

TEST_CASE("batch helpers agree with single-row calls") {
  const auto tc = two_classes(2.0);
  Rng rng(4);
  RowMatrix x(30, 2);
  for (int i = 0; i < 30; ++i) x.row(i) = testing::random_vector(2, rng, 2.0).transpose();
  const auto labels = classify_batch(x, tc);
  const Matrix post = posterior_batch(x, tc);
  for (int i = 0; i < 30; ++i) {
    const Vector xi = x.row(i).transpose();
    CHECK(labels[static_cast<std::size_t>(i)] == classify(xi, tc));
    CHECK(post.row(i).transpose() == class_posterior(xi, tc).log_probs);
  }
  CHECK_THROWS_AS(classify_batch(RowMatrix(2, 3), tc), DimensionMismatch);
}

TEST_CASE("nu override replaces every component's nu") {
  const auto tc = two_classes(2.0, 5.0);
  const auto heavy = two_classes(2.0, 0.5);
  Vector x(2);
  x << 6.0, -2.0;
  CHECK(class_posterior(x, tc, 0.5).log_probs.isApprox(class_posterior(x, heavy).log_probs, 1e-14));
}

TEST_CASE("sampling moments") {
  SUBCASE("near-Gaussian mean") {
    Vector m(2);
    m << 1.0, -2.0;
    const auto cm = class_of(1, {component(1.0, m, Matrix::Identity(2, 2), 1e6)});
    const auto s = sample(cm, 100000, 5);
    const Vector mean = s.x.colwise().mean().transpose();
    CHECK((mean - m).cwiseAbs().maxCoeff() < 4.0 / std::sqrt(1e5));
  }
  SUBCASE("nu = 3 covariance is three times the scale") {
    Matrix sig(2, 2);
    sig << 1.0, 0.3, 0.3, 0.5;
    const auto cm = class_of(1, {component(1.0, Vector::Zero(2), sig, 3.0)});
    const auto s = sample(cm, 100000, 6);
    const Matrix c = s.x.transpose() * s.x / 1e5;
    CHECK((c - 3.0 * sig).norm() < 0.1 * (3.0 * sig).norm());
  }
  SUBCASE("mixture frequencies follow alpha") {
    const auto cm = class_of(1, {component(1.0, Vector::Zero(1), Matrix::Identity(1, 1), 5.0),
                                 component(3.0, Vector::Zero(1), Matrix::Identity(1, 1), 5.0)});
    const auto s = sample(cm, 40000, 7);
    double second = 0;
    for (int k : s.component) second += k;
    CHECK(std::abs(second / 40000 - 0.75) < 4 * std::sqrt(0.75 * 0.25 / 40000));
    CHECK(sample(cm, 10, 7).x == sample(cm, 10, 7).x);
  }
}
