#pragma once

// Feature datasets: CSV I/O, trial-wise splitting, stratified subsampling and
// the two-class synthetic benchmark with uniform outliers.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <set>
#include <vector>

#include "scalemix/types.hpp"

namespace scalemix {

/// N x D feature matrix with per-row class label (1..C), trial id and
/// participant id.
struct FeatureDataset {
  RowMatrix features;
  std::vector<int> labels;
  std::vector<int> trials;
  std::vector<int> participants;

  FeatureDataset() = default;
  explicit FeatureDataset(int dim) : features(0, dim) {}

  std::size_t size() const noexcept { return labels.size(); }
  bool empty() const noexcept { return labels.empty(); }
  int dim() const noexcept { return static_cast<int>(features.cols()); }

  /// Largest label present (labels run 1..C); 0 for an empty dataset.
  int num_classes() const;

  /// Throws DataError when columns disagree in length, a value is
  /// non-finite, or a label is < 1.
  void validate() const;

  /// Rows in the given order.
  FeatureDataset select(const std::vector<std::size_t>& rows) const;

  /// Indices of rows carrying `label`, in dataset order.
  std::vector<std::size_t> rows_with_label(int label) const;

  /// Features of all rows carrying `label`.
  RowMatrix class_rows(int label) const;

  void append(const Eigen::Ref<const Vector>& x, int label, int trial, int participant);
};

/// Sorted distinct values of a column.
std::vector<int> distinct(const std::vector<int>& column);

// ---- CSV ----------------------------------------------------------------
// Header `f1,...,fD,label,trial,participant`. Numbers are written with 17
// significant digits so a save/load cycle is bit-exact.

FeatureDataset load_csv(const std::filesystem::path& path);
FeatureDataset read_csv(std::istream& in, const std::string& source_name = "<stream>");
void save_csv(const std::filesystem::path& path, const FeatureDataset& d);
void write_csv(std::ostream& out, const FeatureDataset& d);

// ---- Trial-wise splitting -------------------------------------------------

struct SplitPlan {
  std::set<int> train_trials;
  std::set<int> test_trials;
};

struct TrialSplit {
  SplitPlan plan;
  FeatureDataset train;
  FeatureDataset test;
};

/// One entry per size-s combination of the distinct trial ids, in
/// lexicographic order of the sorted ids. Requires 1 <= s < T.
std::vector<TrialSplit> split_by_trials(const FeatureDataset& d, int s);

/// Lexicographic size-s combinations of `items`.
std::vector<std::vector<int>> combinations(const std::vector<int>& items, int s);

/// Stratified uniform sample without replacement of round(fraction * N)
/// rows, at least one per class. The result depends only on the multiset of
/// rows and the seed; output rows keep their input order.
FeatureDataset subsample(const FeatureDataset& d, double fraction, std::uint64_t seed);

// ---- Synthetic two-class benchmark ----------------------------------------

struct SimulationOptions {
  int per_class = 100;
  bool outliers = true;
  /// Outliers appended to class 1 as a fraction of per_class.
  double outlier_fraction = 0.1;
  double grid_step = 0.05;
  double grid_max = 8.0;
};

struct SimulationData {
  FeatureDataset train;
  /// Regular grid over [0, grid_max]^2 labelled by the Bayes-optimal rule of
  /// the two generating Gaussians (outliers play no part in labelling).
  FeatureDataset clean_test_grid;
};

/// Class 1 ~ N([2.5, 2.5], 0.5 I), class 2 ~ N([5, 5], 0.5 I); class-1
/// outliers ~ U([0, 7]^2).
SimulationData generate_simulation(std::uint64_t seed, const SimulationOptions& opts = {});

/// Number of grid points per axis for the given step over [0, max].
int grid_points_per_axis(double step, double max);

/// Bayes-optimal label for the simulation's generating Gaussians with equal
/// class priors; ties go to class 1.
int simulation_bayes_label(double x1, double x2);

}  // namespace scalemix
