#include "scalemix/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>

#include "scalemix/csv.hpp"
#include "scalemix/rng.hpp"

namespace scalemix {

int FeatureDataset::num_classes() const {
  if (labels.empty()) return 0;
  return *std::max_element(labels.begin(), labels.end());
}

void FeatureDataset::validate() const {
  const auto n = labels.size();
  if (static_cast<std::size_t>(features.rows()) != n || trials.size() != n ||
      participants.size() != n) {
    throw DataError("dataset columns have unequal lengths");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 1) {
      throw DataError("row " + std::to_string(i + 1) + ": label must be >= 1, got " +
                      std::to_string(labels[i]));
    }
    for (int j = 0; j < dim(); ++j) {
      if (!std::isfinite(features(static_cast<Eigen::Index>(i), j))) {
        throw DataError("row " + std::to_string(i + 1) + ": non-finite feature f" +
                        std::to_string(j + 1));
      }
    }
  }
}

FeatureDataset FeatureDataset::select(const std::vector<std::size_t>& rows) const {
  FeatureDataset out(dim());
  out.features.resize(static_cast<Eigen::Index>(rows.size()), dim());
  out.labels.reserve(rows.size());
  out.trials.reserve(rows.size());
  out.participants.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto r = rows[i];
    out.features.row(static_cast<Eigen::Index>(i)) = features.row(static_cast<Eigen::Index>(r));
    out.labels.push_back(labels[r]);
    out.trials.push_back(trials[r]);
    out.participants.push_back(participants[r]);
  }
  return out;
}

std::vector<std::size_t> FeatureDataset::rows_with_label(int label) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == label) out.push_back(i);
  }
  return out;
}

RowMatrix FeatureDataset::class_rows(int label) const {
  const auto rows = rows_with_label(label);
  RowMatrix out(static_cast<Eigen::Index>(rows.size()), dim());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = features.row(static_cast<Eigen::Index>(rows[i]));
  }
  return out;
}

void FeatureDataset::append(const Eigen::Ref<const Vector>& x, int label, int trial,
                            int participant) {
  if (x.size() != dim()) {
    throw DimensionMismatch("append: row has " + std::to_string(x.size()) +
                            " features, dataset has " + std::to_string(dim()));
  }
  const auto n = features.rows();
  features.conservativeResize(n + 1, Eigen::NoChange);
  features.row(n) = x.transpose();
  labels.push_back(label);
  trials.push_back(trial);
  participants.push_back(participant);
}

std::vector<int> distinct(const std::vector<int>& column) {
  std::vector<int> out(column);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

// ---- CSV ------------------------------------------------------------------

FeatureDataset read_csv(std::istream& in, const std::string& source_name) {
  std::string line;
  if (!std::getline(in, line)) {
    throw DataError(source_name + ": missing header");
  }
  const auto header = csv::split(csv::trim_line(line));
  int dim = 0;
  while (dim < static_cast<int>(header.size()) && header[dim] == "f" + std::to_string(dim + 1)) {
    ++dim;
  }
  const std::vector<std::string> tail = {"label", "trial", "participant"};
  if (dim == 0) {
    throw DataError(source_name + ": header must start with f1 (missing column f1)");
  }
  if (header.size() != static_cast<std::size_t>(dim) + tail.size()) {
    for (const auto& name : tail) {
      if (std::find(header.begin(), header.end(), name) == header.end()) {
        throw DataError(source_name + ": missing column " + name);
      }
    }
    throw DataError(source_name + ": header columns out of order; expected f1..fD,label,trial,participant");
  }
  for (std::size_t i = 0; i < tail.size(); ++i) {
    if (header[dim + i] != tail[i]) {
      throw DataError(source_name + ": expected column '" + tail[i] + "' at position " +
                      std::to_string(dim + i + 1) + ", found '" + header[dim + i] + "'");
    }
  }

  FeatureDataset out(dim);
  std::vector<double> values;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    line = csv::trim_line(line);
    if (line.empty()) continue;
    ++row;
    const auto cells = csv::split(line);
    if (cells.size() != header.size()) {
      throw DataError(source_name + ": row " + std::to_string(row) + " has " +
                      std::to_string(cells.size()) + " cells, expected " +
                      std::to_string(header.size()));
    }
    for (int j = 0; j < dim; ++j) {
      const auto v = csv::parse_double(cells[j]);
      if (!v || !std::isfinite(*v)) {
        throw DataError(source_name + ": row " + std::to_string(row) + ", column " + header[j] +
                        ": not a finite number: '" + cells[j] + "'");
      }
      values.push_back(*v);
    }
    int ints[3];
    for (int j = 0; j < 3; ++j) {
      const auto v = csv::parse_int(cells[dim + j]);
      if (!v) {
        throw DataError(source_name + ": row " + std::to_string(row) + ", column " +
                        header[dim + j] + ": not an integer: '" + cells[dim + j] + "'");
      }
      ints[j] = *v;
    }
    if (ints[0] < 1) {
      throw DataError(source_name + ": row " + std::to_string(row) + ": label must be >= 1");
    }
    out.labels.push_back(ints[0]);
    out.trials.push_back(ints[1]);
    out.participants.push_back(ints[2]);
  }
  out.features = Eigen::Map<RowMatrix>(values.data(), static_cast<Eigen::Index>(row), dim);
  return out;
}

FeatureDataset load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return read_csv(in, path.string());
}

void write_csv(std::ostream& out, const FeatureDataset& d) {
  for (int j = 0; j < d.dim(); ++j) out << 'f' << (j + 1) << ',';
  out << "label,trial,participant\n";
  for (std::size_t i = 0; i < d.size(); ++i) {
    for (int j = 0; j < d.dim(); ++j) {
      out << csv::format_double(d.features(static_cast<Eigen::Index>(i), j)) << ',';
    }
    out << d.labels[i] << ',' << d.trials[i] << ',' << d.participants[i] << '\n';
  }
}

void save_csv(const std::filesystem::path& path, const FeatureDataset& d) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  write_csv(out, d);
  if (!out) throw IoError("write failed: " + path.string());
}

// ---- Splitting ------------------------------------------------------------

std::vector<std::vector<int>> combinations(const std::vector<int>& items, int s) {
  std::vector<std::vector<int>> out;
  const int n = static_cast<int>(items.size());
  if (s < 0 || s > n) return out;
  std::vector<int> idx(static_cast<std::size_t>(s));
  std::iota(idx.begin(), idx.end(), 0);
  for (;;) {
    std::vector<int> combo;
    combo.reserve(idx.size());
    for (int i : idx) combo.push_back(items[static_cast<std::size_t>(i)]);
    out.push_back(std::move(combo));
    int i = s - 1;
    while (i >= 0 && idx[static_cast<std::size_t>(i)] == n - s + i) --i;
    if (i < 0) break;
    ++idx[static_cast<std::size_t>(i)];
    for (int j = i + 1; j < s; ++j) {
      idx[static_cast<std::size_t>(j)] = idx[static_cast<std::size_t>(j - 1)] + 1;
    }
  }
  return out;
}

std::vector<TrialSplit> split_by_trials(const FeatureDataset& d, int s) {
  const auto trials = distinct(d.trials);
  const int t = static_cast<int>(trials.size());
  if (s < 1 || s >= t) {
    throw DataError("split_by_trials: need 1 <= s < T, got s=" + std::to_string(s) +
                    " with T=" + std::to_string(t) + " trials");
  }
  std::vector<TrialSplit> out;
  for (const auto& combo : combinations(trials, s)) {
    TrialSplit split;
    split.plan.train_trials.insert(combo.begin(), combo.end());
    for (int tr : trials) {
      if (!split.plan.train_trials.count(tr)) split.plan.test_trials.insert(tr);
    }
    std::vector<std::size_t> train_rows, test_rows;
    for (std::size_t i = 0; i < d.size(); ++i) {
      (split.plan.train_trials.count(d.trials[i]) ? train_rows : test_rows).push_back(i);
    }
    split.train = d.select(train_rows);
    split.test = d.select(test_rows);
    out.push_back(std::move(split));
  }
  return out;
}

// ---- Subsampling ----------------------------------------------------------

namespace {

// Total order on rows by content, so selection is independent of input order.
bool row_less(const FeatureDataset& d, std::size_t a, std::size_t b) {
  for (int j = 0; j < d.dim(); ++j) {
    const double va = d.features(static_cast<Eigen::Index>(a), j);
    const double vb = d.features(static_cast<Eigen::Index>(b), j);
    if (va != vb) return va < vb;
  }
  if (d.trials[a] != d.trials[b]) return d.trials[a] < d.trials[b];
  if (d.participants[a] != d.participants[b]) return d.participants[a] < d.participants[b];
  return false;
}

}  // namespace

FeatureDataset subsample(const FeatureDataset& d, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw DomainError("subsample: fraction must lie in (0, 1], got " + std::to_string(fraction));
  }
  const auto labels = distinct(d.labels);
  const double n = static_cast<double>(d.size());
  const auto target = static_cast<long>(std::llround(fraction * n));

  // Largest-remainder apportionment of the target across classes.
  std::vector<std::vector<std::size_t>> groups;
  std::vector<long> take;
  std::vector<std::pair<double, std::size_t>> remainders;
  long assigned = 0;
  for (std::size_t g = 0; g < labels.size(); ++g) {
    groups.push_back(d.rows_with_label(labels[g]));
    const double exact = fraction * static_cast<double>(groups.back().size());
    const long base = static_cast<long>(std::floor(exact));
    take.push_back(base);
    assigned += base;
    remainders.emplace_back(exact - static_cast<double>(base), g);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; i < remainders.size() && assigned < target; ++i) {
    ++take[remainders[i].second];
    ++assigned;
  }

  Rng rng(seed);
  std::vector<std::size_t> chosen;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    auto& rows = groups[g];
    const long k = std::clamp<long>(take[g], 1, static_cast<long>(rows.size()));
    std::sort(rows.begin(), rows.end(),
              [&](std::size_t a, std::size_t b) { return row_less(d, a, b); });
    shuffle(rows.begin(), rows.end(), rng);
    chosen.insert(chosen.end(), rows.begin(), rows.begin() + k);
  }
  std::sort(chosen.begin(), chosen.end());
  return d.select(chosen);
}

// ---- Simulation -----------------------------------------------------------

int grid_points_per_axis(double step, double max) {
  if (!(step > 0.0)) throw DomainError("grid step must be positive");
  return static_cast<int>(std::floor(max / step + 1e-9)) + 1;
}

int simulation_bayes_label(double x1, double x2) {
  // Equal isotropic covariances and equal priors: compare squared distances.
  const double d1 = (x1 - 2.5) * (x1 - 2.5) + (x2 - 2.5) * (x2 - 2.5);
  const double d2 = (x1 - 5.0) * (x1 - 5.0) + (x2 - 5.0) * (x2 - 5.0);
  return d1 <= d2 ? 1 : 2;
}

SimulationData generate_simulation(std::uint64_t seed, const SimulationOptions& opts) {
  Rng rng(seed);
  const double sd = std::sqrt(0.5);
  SimulationData out{FeatureDataset(2), FeatureDataset(2)};
  Vector x(2);
  for (int i = 0; i < opts.per_class; ++i) {
    x << 2.5 + sd * rng.normal(), 2.5 + sd * rng.normal();
    out.train.append(x, 1, 1, 1);
  }
  if (opts.outliers) {
    const auto n_out =
        static_cast<int>(std::llround(opts.outlier_fraction * static_cast<double>(opts.per_class)));
    for (int i = 0; i < n_out; ++i) {
      x << rng.uniform(0.0, 7.0), rng.uniform(0.0, 7.0);
      out.train.append(x, 1, 1, 1);
    }
  }
  for (int i = 0; i < opts.per_class; ++i) {
    x << 5.0 + sd * rng.normal(), 5.0 + sd * rng.normal();
    out.train.append(x, 2, 1, 1);
  }

  const int m = grid_points_per_axis(opts.grid_step, opts.grid_max);
  auto& grid = out.clean_test_grid;
  grid.features.resize(static_cast<Eigen::Index>(m) * m, 2);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < m; ++j) {
      const double x1 = i * opts.grid_step;
      const double x2 = j * opts.grid_step;
      const auto r = static_cast<Eigen::Index>(i) * m + j;
      grid.features(r, 0) = x1;
      grid.features(r, 1) = x2;
      grid.labels.push_back(simulation_bayes_label(x1, x2));
      grid.trials.push_back(0);
      grid.participants.push_back(0);
    }
  }
  return out;
}

}  // namespace scalemix
