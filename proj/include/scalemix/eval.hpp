#pragma once

// Classification metrics, the probability-of-superiority effect size and a
// wall-clock timing harness.

#include <chrono>
#include <cstddef>
#include <functional>
#include <iosfwd>
#include <vector>

#include "scalemix/types.hpp"

namespace scalemix {

/// Fraction of equal entries. Throws DimensionMismatch on unequal lengths
/// and DataError when empty.
double accuracy(const std::vector<int>& pred, const std::vector<int>& truth);

/// C x C counts; row = true class, column = predicted class (labels 1..C).
Eigen::MatrixXi confusion_matrix(const std::vector<int>& pred, const std::vector<int>& truth,
                                 int num_classes);

struct PrecisionRecall {
  Vector precision;
  Vector recall;
  /// True where the denominator was zero and the value was reported as 0.
  std::vector<bool> precision_undefined;
  std::vector<bool> recall_undefined;

  double macro_precision() const { return precision.size() ? precision.mean() : 0.0; }
  double macro_recall() const { return recall.size() ? recall.mean() : 0.0; }
};

PrecisionRecall precision_recall(const std::vector<int>& pred, const std::vector<int>& truth,
                                 int num_classes);
PrecisionRecall precision_recall(const Eigen::MatrixXi& confusion);

/// Fraction of indices where a strictly exceeds b.
double probability_of_superiority(const std::vector<double>& acc_a, const std::vector<double>& acc_b);

struct StageTiming {
  double tune_s = 0.0;
  double train_s = 0.0;
  double predict_us_per_record = 0.0;
  std::size_t predicted_records = 0;
};

/// Times three stages with a monotonic clock. `tune` may be empty (reported
/// as 0). `predict` is invoked repeatedly until at least `min_records`
/// records have been classified; it must return the number it classified.
StageTiming time_stages(const std::function<void()>& tune, const std::function<void()>& train,
                        const std::function<std::size_t()>& predict,
                        std::size_t min_records = 10000);

struct MetricsReport {
  double accuracy = 0.0;
  Vector per_class_precision;
  Vector per_class_recall;
  Eigen::MatrixXi confusion;
  StageTiming timing;
};

MetricsReport make_report(const std::vector<int>& pred, const std::vector<int>& truth,
                          int num_classes, const StageTiming& timing = {});

/// CSV rows `metric,value` plus per-class precision/recall. Timing rows are
/// optional so that reports can stay bit-identical across runs.
void write_report_csv(std::ostream& out, const MetricsReport& r, bool include_timing = true);
/// Human-readable table.
void write_report_table(std::ostream& out, const MetricsReport& r);
/// Confusion matrix with a `true\\pred` header row.
void write_confusion_csv(std::ostream& out, const Eigen::MatrixXi& confusion);

}  // namespace scalemix
