#include <cmath>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "scalemix/rng.hpp"

using scalemix::Rng;

TEST_CASE("same seed gives the same stream") {
  Rng a(42), b(42), c(43);
  bool differs = false;
  for (int i = 0; i < 1000; ++i) {
    const double x = a.normal();
    CHECK(x == b.normal());
    differs = differs || x != c.normal();
  }
  CHECK(differs);
}

TEST_CASE("uniform stays in the open unit interval with the right moments") {
  Rng rng(1);
  const int n = 200000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    REQUIRE(u > 0.0);
    REQUIRE(u < 1.0);
    sum += u;
    sq += u * u;
  }
  CHECK(std::abs(sum / n - 0.5) < 4 * std::sqrt(1.0 / 12 / n));
  CHECK(std::abs(sq / n - 1.0 / 3) < 0.005);
}

TEST_CASE("normal has zero mean and unit variance") {
  Rng rng(2);
  const int n = 200000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    sum += z;
    sq += z * z;
  }
  CHECK(std::abs(sum / n) < 4 / std::sqrt(n));
  CHECK(std::abs(sq / n - 1.0) < 0.02);
}

TEST_CASE("gamma matches its mean and variance for shapes below and above 1") {
  for (double shape : {0.05, 0.3, 1.0, 2.5, 50.0}) {
    Rng rng(3);
    const int n = 200000;
    double sum = 0.0, sq = 0.0;
    for (int i = 0; i < n; ++i) {
      const double g = rng.gamma(shape);
      REQUIRE(g >= 0.0);
      sum += g;
      sq += g * g;
    }
    const double mean = sum / n;
    const double var = sq / n - mean * mean;
    CHECK(std::abs(mean - shape) < 5 * std::sqrt(shape / n));
    CHECK(std::abs(var / shape - 1.0) < 0.1);
  }
}

TEST_CASE("below and shuffle") {
  Rng rng(4);
  std::vector<int> counts(5, 0);
  for (int i = 0; i < 50000; ++i) ++counts[rng.below(5)];
  for (int c : counts) CHECK(std::abs(c - 10000) < 500);

  std::vector<int> v(20);
  std::iota(v.begin(), v.end(), 0);
  auto w = v;
  scalemix::shuffle(w.begin(), w.end(), rng);
  CHECK(w != v);
  std::sort(w.begin(), w.end());
  CHECK(w == v);
}
