#pragma once

// Command-line front end. Each subcommand is also callable as a function so
// tests can drive the pipelines without spawning processes.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "scalemix/model.hpp"
#include "scalemix/vb.hpp"

namespace scalemix::cli {

enum ExitCode : int {
  kSuccess = 0,
  kUsage = 2,
  kData = 3,
  kNumeric = 4,
  kNotConverged = 5,
};

/// Flags shared by the training-related commands. Defaults are the values
/// documented in `scalemix <command> --help`.
struct ModelOptions {
  double nu = 5.0;
  bool select_nu = false;
  double nu_pre = 200.0;
  std::string nu_grid = "1e-3:200:40";
  int folds = 5;
  int k_init = 1;
  double alpha0 = 0.001;
  std::string nu_mode = "fixed";  // fixed | ml
  int max_iters = 500;
  std::uint64_t seed = 0;
  int threads = 1;
};

struct SimulateOptions {
  ModelOptions model;
  std::filesystem::path out_dir = "simulation";
  bool no_outliers = false;
  double grid_step = 0.05;
  bool svg = false;
};

struct TrainOptions {
  ModelOptions model;
  std::filesystem::path data;
  std::filesystem::path model_out = "model.json";
  /// When set, the ν search table is written here as nu_selection.csv.
  std::optional<std::filesystem::path> out_dir;
};

struct PredictOptions {
  std::filesystem::path model;
  std::filesystem::path data;
  /// "-" writes to the output stream.
  std::string out = "-";
};

struct EvaluateOptions {
  ModelOptions model;
  std::filesystem::path data;
  std::filesystem::path out_dir = "evaluation";
  /// Training trials per combination; 0 means floor(T / 3).
  int trials_train = 0;
  double subsample = 1.0;
  /// Optional `participant,accuracy` CSV of a competing method.
  std::optional<std::filesystem::path> compare;
  std::size_t timing_records = 10000;
};

struct ExtractOptions {
  std::filesystem::path data;
  std::string out = "-";
  std::string pipeline = "rect-smooth";  // rect-smooth | mav
  double fc = 2.0;
  double fs = 0.0;  // 0: infer from the t column
  bool zero_phase = false;
  double window_ms = 400.0;
  double step_ms = 100.0;
  /// Cut-off of the optional single-pole pre-filter for the mav pipeline.
  double prefilter_fc = 0.0;
};

/// Parses a ν grid given as `lo:hi:points` (log-spaced) or a comma list.
std::vector<double> parse_nu_grid(const std::string& text);

/// Reads `key = value` lines (`#` comments, blank lines ignored).
std::vector<std::pair<std::string, std::string>> read_config_file(const std::filesystem::path& path);

/// Location t of the first class-1/class-2 posterior crossing along
/// x2 = x1 when walking from lo to hi (0.01 scan, then bisection). Returns
/// NaN when the argmax never changes over the interval.
double diagonal_boundary(const TrainedClassifier& tc, double lo = 0.0, double hi = 8.0);

int cmd_simulate(const SimulateOptions& opt, std::ostream& out, std::ostream& err);
int cmd_train(const TrainOptions& opt, std::ostream& out, std::ostream& err);
int cmd_predict(const PredictOptions& opt, std::ostream& out, std::ostream& err);
int cmd_evaluate(const EvaluateOptions& opt, std::ostream& out, std::ostream& err);
int cmd_extract(const ExtractOptions& opt, std::ostream& out, std::ostream& err);

/// Full entry point: parses argv, dispatches, and maps errors to exit codes.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace scalemix::cli
