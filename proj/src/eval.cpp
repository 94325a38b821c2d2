#include "scalemix/eval.hpp"

#include <cstdio>
#include <ostream>
#include <string>

#include "scalemix/csv.hpp"

namespace scalemix {

namespace {

void check_lengths(std::size_t a, std::size_t b, const char* who) {
  if (a != b) {
    throw DimensionMismatch(std::string(who) + ": length mismatch (" + std::to_string(a) + " vs " +
                            std::to_string(b) + ")");
  }
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

double accuracy(const std::vector<int>& pred, const std::vector<int>& truth) {
  check_lengths(pred.size(), truth.size(), "accuracy");
  if (pred.empty()) throw DataError("accuracy: no records");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == truth[i];
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

Eigen::MatrixXi confusion_matrix(const std::vector<int>& pred, const std::vector<int>& truth,
                                 int num_classes) {
  check_lengths(pred.size(), truth.size(), "confusion_matrix");
  Eigen::MatrixXi m = Eigen::MatrixXi::Zero(num_classes, num_classes);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (truth[i] < 1 || truth[i] > num_classes || pred[i] < 1 || pred[i] > num_classes) {
      throw DataError("confusion_matrix: label out of range 1.." + std::to_string(num_classes) +
                      " at record " + std::to_string(i));
    }
    ++m(truth[i] - 1, pred[i] - 1);
  }
  return m;
}

PrecisionRecall precision_recall(const Eigen::MatrixXi& confusion) {
  const auto c = confusion.rows();
  PrecisionRecall out{Vector::Zero(c), Vector::Zero(c), std::vector<bool>(static_cast<std::size_t>(c)),
                      std::vector<bool>(static_cast<std::size_t>(c))};
  for (Eigen::Index k = 0; k < c; ++k) {
    const int tp = confusion(k, k);
    const int predicted = confusion.col(k).sum();
    const int actual = confusion.row(k).sum();
    if (predicted > 0) {
      out.precision[k] = static_cast<double>(tp) / predicted;
    } else {
      out.precision_undefined[static_cast<std::size_t>(k)] = true;
    }
    if (actual > 0) {
      out.recall[k] = static_cast<double>(tp) / actual;
    } else {
      out.recall_undefined[static_cast<std::size_t>(k)] = true;
    }
  }
  return out;
}

PrecisionRecall precision_recall(const std::vector<int>& pred, const std::vector<int>& truth,
                                 int num_classes) {
  return precision_recall(confusion_matrix(pred, truth, num_classes));
}

double probability_of_superiority(const std::vector<double>& acc_a, const std::vector<double>& acc_b) {
  check_lengths(acc_a.size(), acc_b.size(), "probability_of_superiority");
  if (acc_a.empty()) throw DataError("probability_of_superiority: no participants");
  std::size_t wins = 0;
  for (std::size_t i = 0; i < acc_a.size(); ++i) wins += acc_a[i] > acc_b[i];
  return static_cast<double>(wins) / static_cast<double>(acc_a.size());
}

StageTiming time_stages(const std::function<void()>& tune, const std::function<void()>& train,
                        const std::function<std::size_t()>& predict, std::size_t min_records) {
  StageTiming t;
  if (tune) {
    const auto start = std::chrono::steady_clock::now();
    tune();
    t.tune_s = seconds_since(start);
  }
  if (train) {
    const auto start = std::chrono::steady_clock::now();
    train();
    t.train_s = seconds_since(start);
  }
  if (predict) {
    const auto start = std::chrono::steady_clock::now();
    std::size_t done = 0;
    do {
      const std::size_t n = predict();
      if (n == 0) break;
      done += n;
    } while (done < min_records);
    const double elapsed = seconds_since(start);
    t.predicted_records = done;
    t.predict_us_per_record = done ? 1e6 * elapsed / static_cast<double>(done) : 0.0;
  }
  return t;
}

MetricsReport make_report(const std::vector<int>& pred, const std::vector<int>& truth,
                          int num_classes, const StageTiming& timing) {
  MetricsReport r;
  r.confusion = confusion_matrix(pred, truth, num_classes);
  r.accuracy = accuracy(pred, truth);
  const auto pr = precision_recall(r.confusion);
  r.per_class_precision = pr.precision;
  r.per_class_recall = pr.recall;
  r.timing = timing;
  return r;
}

void write_report_csv(std::ostream& out, const MetricsReport& r, bool include_timing) {
  out << "metric,value\n";
  out << "accuracy," << csv::format_double(r.accuracy) << '\n';
  out << "macro_precision," << csv::format_double(r.per_class_precision.mean()) << '\n';
  out << "macro_recall," << csv::format_double(r.per_class_recall.mean()) << '\n';
  for (Eigen::Index k = 0; k < r.per_class_precision.size(); ++k) {
    out << "precision_" << (k + 1) << ',' << csv::format_double(r.per_class_precision[k]) << '\n';
    out << "recall_" << (k + 1) << ',' << csv::format_double(r.per_class_recall[k]) << '\n';
  }
  if (!include_timing) return;
  out << "tune_s," << csv::format_double(r.timing.tune_s) << '\n';
  out << "train_s," << csv::format_double(r.timing.train_s) << '\n';
  out << "predict_us_per_record," << csv::format_double(r.timing.predict_us_per_record) << '\n';
}

void write_report_table(std::ostream& out, const MetricsReport& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "Accuracy (%%)       %8.2f\n", 100.0 * r.accuracy);
  out << buf;
  std::snprintf(buf, sizeof buf, "Macro precision    %8.4f\nMacro recall       %8.4f\n",
                r.per_class_precision.mean(), r.per_class_recall.mean());
  out << buf;
  std::snprintf(buf, sizeof buf, "Tuning time (s)    %8.3f\nTraining time (s)  %8.3f\n"
                "Prediction (us/rec)%8.3f\n",
                r.timing.tune_s, r.timing.train_s, r.timing.predict_us_per_record);
  out << buf;
  out << "class  precision  recall\n";
  for (Eigen::Index k = 0; k < r.per_class_precision.size(); ++k) {
    std::snprintf(buf, sizeof buf, "%5ld  %9.4f  %6.4f\n", static_cast<long>(k + 1),
                  r.per_class_precision[k], r.per_class_recall[k]);
    out << buf;
  }
}

void write_confusion_csv(std::ostream& out, const Eigen::MatrixXi& confusion) {
  out << "true\\pred";
  for (Eigen::Index j = 0; j < confusion.cols(); ++j) out << ',' << (j + 1);
  out << '\n';
  for (Eigen::Index i = 0; i < confusion.rows(); ++i) {
    out << (i + 1);
    for (Eigen::Index j = 0; j < confusion.cols(); ++j) out << ',' << confusion(i, j);
    out << '\n';
  }
}

}  // namespace scalemix
