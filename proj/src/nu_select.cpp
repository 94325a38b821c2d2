#include "scalemix/nu_select.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <ostream>
#include <string>
#include <thread>

#include "scalemix/csv.hpp"
#include "scalemix/predict.hpp"
#include "scalemix/rng.hpp"

namespace scalemix {

std::vector<double> NuSearchConfig::log_grid(double lo, double hi, int points) {
  if (!(lo > 0.0) || !(hi >= lo) || points < 1) {
    throw DomainError("nu grid: need 0 < lo <= hi and at least one point");
  }
  if (points == 1) return {lo};
  std::vector<double> out;
  const double llo = std::log(lo), lhi = std::log(hi);
  for (int i = 0; i < points; ++i) {
    out.push_back(std::exp(llo + (lhi - llo) * i / (points - 1)));
  }
  out.front() = lo;
  out.back() = hi;
  return out;
}

std::vector<double> NuSearchConfig::default_grid() { return log_grid(1e-3, 2e2, 40); }

void NuSearchConfig::validate() const {
  if (folds < 2) throw DomainError("nu search: need at least 2 folds");
  if (!(nu_pre > 0.0)) throw DomainError("nu search: nu_pre must be positive");
  if (grid.empty()) throw DomainError("nu search: grid is empty");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!(grid[i] > 0.0)) throw DomainError("nu search: grid values must be positive");
    if (i > 0 && !(grid[i] > grid[i - 1])) {
      throw DomainError("nu search: grid must be strictly increasing");
    }
  }
  if (threads < 1) throw DomainError("nu search: threads must be >= 1");
}

double conditional_entropy(double nu, const TrainedClassifier& fold_model,
                           const FeatureDataset& validation) {
  if (validation.empty()) throw DataError("conditional_entropy: empty validation fold");
  const Matrix log_post = posterior_batch(validation.features, fold_model, nu);
  double total = 0.0;
  for (std::size_t i = 0; i < validation.size(); ++i) {
    const int label = validation.labels[i];
    if (label < 1 || label > fold_model.num_classes()) {
      throw DataError("conditional_entropy: validation label " + std::to_string(label) +
                      " unknown to the model");
    }
    total -= log_post(static_cast<Eigen::Index>(i), label - 1);
  }
  // Rounding can leave a tiny negative sum when every posterior is ~1.
  return std::max(0.0, total / static_cast<double>(validation.size()));
}

std::vector<int> stratified_folds(const std::vector<int>& labels, int folds, std::uint64_t seed) {
  if (folds < 1) throw DomainError("stratified_folds: folds must be >= 1");
  std::vector<int> out(labels.size(), 0);
  Rng rng(seed);
  int offset = 0;
  for (int label : distinct(labels)) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == label) rows.push_back(i);
    }
    shuffle(rows.begin(), rows.end(), rng);
    for (std::size_t j = 0; j < rows.size(); ++j) {
      out[rows[j]] = static_cast<int>((offset + j) % static_cast<std::size_t>(folds));
    }
    // Continue dealing where this class stopped so fold totals stay level.
    offset = static_cast<int>((offset + rows.size()) % static_cast<std::size_t>(folds));
  }
  return out;
}

NuSelection select_nu(const FeatureDataset& data, const PriorHyperparameters& prior,
                      const NuSearchConfig& cfg, const VbConfig& vb) {
  cfg.validate();
  const int num_classes = data.num_classes();
  for (int c = 1; c <= num_classes; ++c) {
    const auto count = data.rows_with_label(c).size();
    if (count < static_cast<std::size_t>(cfg.folds)) {
      throw DataError("select_nu: class " + std::to_string(c) + " has " + std::to_string(count) +
                      " rows, fewer than the " + std::to_string(cfg.folds) + " folds");
    }
  }
  const auto assignment = stratified_folds(data.labels, cfg.folds, cfg.seed);
  PriorHyperparameters fold_prior = prior;
  fold_prior.nu_fixed = cfg.nu_pre;

  NuSelection sel;
  sel.grid = cfg.grid;
  sel.folds.resize(static_cast<std::size_t>(cfg.folds));

  auto run_fold = [&](int l) {
    std::vector<std::size_t> train_rows, valid_rows;
    for (std::size_t i = 0; i < assignment.size(); ++i) {
      (assignment[i] == l ? valid_rows : train_rows).push_back(i);
    }
    const auto train = data.select(train_rows);
    const auto valid = data.select(valid_rows);
    VbConfig fold_vb = vb;
    fold_vb.threads = 1;
    fold_vb.seed = class_seed(vb.seed, 1000 + l);
    const auto model = fit(train, fold_prior, fold_vb);

    FoldResult res;
    res.fold = l;
    std::size_t best = 0;
    for (std::size_t g = 0; g < cfg.grid.size(); ++g) {
      res.objective.push_back(conditional_entropy(cfg.grid[g], model, valid));
      if (res.objective[g] < res.objective[best]) best = g;
    }
    res.best_nu = cfg.grid[best];
    sel.folds[static_cast<std::size_t>(l)] = std::move(res);
  };

  const int workers = std::min(cfg.threads, cfg.folds);
  if (workers <= 1) {
    for (int l = 0; l < cfg.folds; ++l) run_fold(l);
  } else {
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(cfg.folds));
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (int l = w; l < cfg.folds; l += workers) {
          try {
            run_fold(l);
          } catch (...) {
            errors[static_cast<std::size_t>(l)] = std::current_exception();
          }
        }
      });
    }
    for (auto& t : pool) t.join();
    for (const auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  sel.nu_hat = sel.folds.front().best_nu;
  for (const auto& f : sel.folds) sel.nu_hat = std::min(sel.nu_hat, f.best_nu);
  return sel;
}

void write_nu_table(std::ostream& out, const NuSelection& sel) {
  out << "fold,nu,J\n";
  for (const auto& f : sel.folds) {
    for (std::size_t g = 0; g < sel.grid.size(); ++g) {
      out << (f.fold + 1) << ',' << csv::format_double(sel.grid[g]) << ','
          << csv::format_double(f.objective[g]) << '\n';
    }
  }
}

}  // namespace scalemix
