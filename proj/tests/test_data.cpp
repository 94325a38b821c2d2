#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "doctest.h"
#include "scalemix/data.hpp"
#include "support.hpp"

using namespace scalemix;

namespace {

FeatureDataset make_dataset(int classes, int per_class, int trials, std::uint64_t seed) {
  Rng rng(seed);
  FeatureDataset d(2);
  for (int t = 1; t <= trials; ++t) {
    for (int c = 1; c <= classes; ++c) {
      for (int i = 0; i < per_class; ++i) {
        Vector x(2);
        x << c + 0.1 * rng.normal(), t + 0.1 * rng.normal();
        d.append(x, c, t, 1);
      }
    }
  }
  return d;
}

std::multiset<std::vector<double>> row_multiset(const FeatureDataset& d) {
  std::multiset<std::vector<double>> out;
  for (Eigen::Index i = 0; i < d.features.rows(); ++i) {
    std::vector<double> row(d.features.row(i).data(), d.features.row(i).data() + d.dim());
    row.push_back(d.labels[static_cast<std::size_t>(i)]);
    out.insert(row);
  }
  return out;
}

}  // namespace

TEST_CASE("csv round trip is exact") {
  auto d = make_dataset(3, 4, 2, 9);
  d.features(0, 0) = 0.1 + 0.2;  // needs all 17 digits
  d.features(1, 1) = -1e-300;
  std::ostringstream out;
  write_csv(out, d);
  std::istringstream in(out.str());
  const auto back = read_csv(in);
  CHECK(back.features == d.features);
  CHECK(back.labels == d.labels);
  CHECK(back.trials == d.trials);
  CHECK(back.participants == d.participants);
}

TEST_CASE("read_csv parses a small file and reports problems with row and column") {
  std::istringstream ok("f1,f2,label,trial,participant\n1,2,1,1,7\n3,4,2,1,7\n5,6,1,2,7\n");
  const auto d = read_csv(ok);
  CHECK(d.size() == 3);
  CHECK(d.dim() == 2);
  CHECK(d.num_classes() == 2);
  CHECK(d.participants[2] == 7);

  std::istringstream nan("f1,f2,label,trial,participant\n1,2,1,1,1\nNaN,4,2,1,1\n");
  try {
    (void)read_csv(nan, "x.csv");
    FAIL("expected DataError");
  } catch (const DataError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("row 2") != std::string::npos);
    CHECK(msg.find("f1") != std::string::npos);
  }

  std::istringstream missing("f1,f2,label,trial\n1,2,1,1\n");
  CHECK_THROWS_AS(read_csv(missing), DataError);
  std::istringstream ragged("f1,f2,label,trial,participant\n1,2,1,1\n");
  CHECK_THROWS_AS(read_csv(ragged), DataError);
  std::istringstream bad_label("f1,label,trial,participant\n1,0,1,1\n");
  CHECK_THROWS_AS(read_csv(bad_label), DataError);
  std::istringstream empty("f1,f2,label,trial,participant\n");
  CHECK(read_csv(empty).empty());
}

TEST_CASE("combinations enumerates lexicographically") {
  const auto c = combinations({1, 2, 3, 4}, 2);
  REQUIRE(c.size() == 6);
  CHECK(c.front() == std::vector<int>{1, 2});
  CHECK(c.back() == std::vector<int>{3, 4});
  CHECK(combinations({1, 2, 3, 4, 5, 6}, 2).size() == 15);
}

TEST_CASE("split_by_trials partitions rows without leaking trials") {
  const auto d = make_dataset(2, 3, 4, 1);
  const auto splits = split_by_trials(d, 1);
  REQUIRE(splits.size() == 4);
  for (const auto& s : splits) {
    CHECK(s.plan.train_trials.size() == 1);
    CHECK(s.plan.test_trials.size() == 3);
    for (int t : s.plan.train_trials) CHECK(s.plan.test_trials.count(t) == 0);
    CHECK(s.train.size() + s.test.size() == d.size());
    for (int t : s.train.trials) CHECK(s.plan.train_trials.count(t) == 1);
    for (int t : s.test.trials) CHECK(s.plan.test_trials.count(t) == 1);
    auto together = row_multiset(s.train);
    for (const auto& r : row_multiset(s.test)) together.insert(r);
    CHECK(together == row_multiset(d));
  }
  CHECK(split_by_trials(make_dataset(2, 2, 6, 1), 2).size() == 15);
  CHECK_THROWS_AS(split_by_trials(d, 4), DataError);
  CHECK_THROWS_AS(split_by_trials(d, 0), DataError);
}

TEST_CASE("subsample") {
  const auto d = make_dataset(10, 100, 1, 3);
  const auto s = subsample(d, 0.05, 17);
  CHECK(s.size() == 50);
  for (int c = 1; c <= 10; ++c) CHECK(s.rows_with_label(c).size() == 5);

  const auto again = subsample(d, 0.05, 17);
  CHECK(again.features == s.features);

  const auto all = subsample(d, 1.0, 2);
  CHECK(row_multiset(all) == row_multiset(d));

  // Tiny fraction still keeps one row per class.
  const auto tiny = subsample(d, 1e-4, 2);
  for (int c = 1; c <= 10; ++c) CHECK(tiny.rows_with_label(c).size() == 1);

  CHECK_THROWS_AS(subsample(d, 0.0, 1), DomainError);
  CHECK_THROWS_AS(subsample(d, 1.5, 1), DomainError);
}

TEST_CASE("subsample is invariant to input row order") {
  const auto d = make_dataset(3, 40, 1, 8);
  std::vector<std::size_t> order(d.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = order.size() - 1 - i;
  const auto reversed = d.select(order);
  CHECK(row_multiset(subsample(d, 0.3, 5)) == row_multiset(subsample(reversed, 0.3, 5)));
}

TEST_CASE("generate_simulation follows the published setup") {
  const auto sim = generate_simulation(0);
  CHECK(sim.train.rows_with_label(1).size() == 110);
  CHECK(sim.train.rows_with_label(2).size() == 100);
  const int per_axis = grid_points_per_axis(0.05, 8.0);
  CHECK(per_axis == 161);
  CHECK(sim.clean_test_grid.size() == 161u * 161u);

  // Class-2 sample mean within a 3-sigma CLT band of (5, 5).
  const RowMatrix c2 = sim.train.class_rows(2);
  const Vector mean = c2.colwise().mean();
  const double band = 3 * std::sqrt(0.5 / 100);
  CHECK(std::abs(mean[0] - 5.0) < band);
  CHECK(std::abs(mean[1] - 5.0) < band);

  // Grid labels are the equal-covariance Bayes rule.
  for (std::size_t i = 0; i < sim.clean_test_grid.size(); i += 97) {
    const auto r = static_cast<Eigen::Index>(i);
    const double x1 = sim.clean_test_grid.features(r, 0), x2 = sim.clean_test_grid.features(r, 1);
    const double d1 = std::hypot(x1 - 2.5, x2 - 2.5), d2 = std::hypot(x1 - 5.0, x2 - 5.0);
    CHECK(sim.clean_test_grid.labels[i] == (d2 < d1 ? 2 : 1));
  }

  SimulationOptions clean;
  clean.outliers = false;
  CHECK(generate_simulation(0, clean).train.rows_with_label(1).size() == 100);

  std::ostringstream a, b;
  write_csv(a, generate_simulation(4).train);
  write_csv(b, generate_simulation(4).train);
  CHECK(a.str() == b.str());
}
