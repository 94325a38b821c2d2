#pragma once

// Choice of the shared degrees of freedom by minimizing the held-out
// conditional entropy of the labels (equivalently maximizing mutual
// information) over L stratified folds.

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "scalemix/data.hpp"
#include "scalemix/model.hpp"
#include "scalemix/vb.hpp"

namespace scalemix {

struct NuSearchConfig {
  int folds = 5;
  double nu_pre = 200.0;
  std::vector<double> grid = default_grid();
  std::uint64_t seed = 0;
  int threads = 1;

  /// 40 log-spaced points on [1e-3, 2e2].
  static std::vector<double> default_grid();
  static std::vector<double> log_grid(double lo, double hi, int points);

  void validate() const;
};

/// J = -(1/N) sum_n ln p(c_n | x_n) with every component's nu replaced by
/// `nu`. Throws DataError on an empty validation set.
double conditional_entropy(double nu, const TrainedClassifier& fold_model,
                           const FeatureDataset& validation);

/// Fold index (0..folds-1) per row. Within each class rows are shuffled and
/// dealt round-robin, so each fold's class histogram is within one count of
/// an even share.
std::vector<int> stratified_folds(const std::vector<int>& labels, int folds, std::uint64_t seed);

struct FoldResult {
  int fold = 0;
  /// J evaluated at every grid point, same order as the grid.
  std::vector<double> objective;
  double best_nu = 0.0;
};

struct NuSelection {
  double nu_hat = 0.0;
  std::vector<double> grid;
  std::vector<FoldResult> folds;
};

/// For each fold: fit on the other folds with nu = nu_pre, scan the grid for
/// the minimum J on the held-out fold (ties to the smaller nu). The result
/// is the smallest per-fold minimizer. Requires at least `folds` rows in
/// every class.
NuSelection select_nu(const FeatureDataset& data, const PriorHyperparameters& prior,
                      const NuSearchConfig& cfg, const VbConfig& vb = {});

/// CSV table `fold,nu,J` (folds one-based).
void write_nu_table(std::ostream& out, const NuSelection& sel);

}  // namespace scalemix
