#include "scalemix/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "scalemix/csv.hpp"
#include "scalemix/data.hpp"
#include "scalemix/eval.hpp"
#include "scalemix/features.hpp"
#include "scalemix/nu_select.hpp"
#include "scalemix/predict.hpp"

namespace scalemix::cli {

namespace fs = std::filesystem;

namespace {

std::ofstream open_out(const fs::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  return f;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory " + dir.string());
}

// Either a file or the given stream when path is "-".
class OutputTarget {
 public:
  OutputTarget(const std::string& path, std::ostream& fallback) {
    if (path == "-") {
      stream_ = &fallback;
    } else {
      file_ = open_out(path);
      stream_ = &file_;
    }
  }
  std::ostream& get() { return *stream_; }

 private:
  std::ofstream file_;
  std::ostream* stream_ = nullptr;
};

std::string join(const std::set<int>& items, char sep) {
  std::string s;
  for (int v : items) {
    if (!s.empty()) s += sep;
    s += std::to_string(v);
  }
  return s;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  return class_seed(class_seed(seed, static_cast<int>(a)), static_cast<int>(b));
}

VbConfig vb_config(const ModelOptions& m) {
  VbConfig vb;
  vb.max_iters = m.max_iters;
  vb.seed = m.seed;
  vb.threads = m.threads;
  if (m.nu_mode == "fixed") {
    vb.nu_mode = NuMode::kFixed;
  } else if (m.nu_mode == "ml") {
    vb.nu_mode = NuMode::kMaximumLikelihood;
  } else {
    throw DomainError("--nu-mode must be 'fixed' or 'ml'");
  }
  vb.validate();
  return vb;
}

NuSearchConfig nu_search_config(const ModelOptions& m) {
  NuSearchConfig cfg;
  cfg.folds = m.folds;
  cfg.nu_pre = m.nu_pre;
  cfg.grid = parse_nu_grid(m.nu_grid);
  cfg.seed = m.seed;
  cfg.threads = m.threads;
  cfg.validate();
  return cfg;
}

void check_model_options(const ModelOptions& m) {
  if (!(m.nu > 0.0)) throw DomainError("--nu must be positive");
  if (m.k_init < 1) throw DomainError("--k-init must be >= 1");
  if (!(m.alpha0 > 0.0)) throw DomainError("--alpha0 must be positive");
  if (m.threads < 1) throw DomainError("--threads must be >= 1");
}

TrainingLog stream_log(std::ostream& err) {
  return [&err](const IterationRecord& r) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "class %d iter %d elbo %.10g components %d\n", r.class_id,
                  r.iteration, r.elbo, r.live_components);
    err << buf;
  };
}

void write_boundary_grid(std::ostream& out, const RowMatrix& grid, const Matrix& log_post) {
  out << "x1,x2,posterior_c1,posterior_c2,argmax\n";
  for (Eigen::Index i = 0; i < grid.rows(); ++i) {
    const double p1 = std::exp(log_post(i, 0));
    const double p2 = std::exp(log_post(i, 1));
    out << csv::format_double(grid(i, 0)) << ',' << csv::format_double(grid(i, 1)) << ','
        << csv::format_double(p1) << ',' << csv::format_double(p2) << ','
        << (log_post(i, 1) > log_post(i, 0) ? 2 : 1) << '\n';
  }
}

// Heatmap of the class-1 posterior: blue (class 2) to red (class 1).
void write_svg(std::ostream& out, const RowMatrix& grid, const Matrix& log_post, double step,
               const FeatureDataset& train) {
  const double scale = 60.0;
  double max_coord = 0.0;
  for (Eigen::Index i = 0; i < grid.rows(); ++i) max_coord = std::max(max_coord, grid(i, 0));
  const double side = (max_coord + step) * scale;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << side << "\" height=\"" << side
      << "\" shape-rendering=\"crispEdges\">\n";
  const double cell = step * scale;
  char buf[192];
  for (Eigen::Index i = 0; i < grid.rows(); ++i) {
    const double p1 = std::exp(log_post(i, 0));
    const int r = static_cast<int>(std::lround(255.0 * p1));
    const int b = 255 - r;
    std::snprintf(buf, sizeof buf,
                  "<rect x=\"%.2f\" y=\"%.2f\" width=\"%.2f\" height=\"%.2f\" fill=\"rgb(%d,80,%d)\"/>\n",
                  (grid(i, 0) - 0.5 * step) * scale, side - (grid(i, 1) + 0.5 * step) * scale,
                  cell, cell, r, b);
    out << buf;
  }
  for (std::size_t i = 0; i < train.size(); ++i) {
    const auto idx = static_cast<Eigen::Index>(i);
    std::snprintf(buf, sizeof buf, "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"3\" fill=\"%s\" stroke=\"black\"/>\n",
                  train.features(idx, 0) * scale, side - train.features(idx, 1) * scale,
                  train.labels[i] == 1 ? "white" : "black");
    out << buf;
  }
  out << "</svg>\n";
}

struct CombinationResult {
  int participant = 0;
  int combination = 0;
  SplitPlan plan;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  double nu = 0.0;
  double accuracy = 0.0;
  Vector precision;
  Vector recall;
  Eigen::MatrixXi confusion;
  StageTiming timing;
  bool converged = true;
};

std::map<int, double> read_compare_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || csv::split(csv::trim_line(line)) != std::vector<std::string>{"participant", "accuracy"}) {
    throw DataError(path.string() + ": expected header 'participant,accuracy'");
  }
  std::map<int, double> out;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    line = csv::trim_line(line);
    if (line.empty()) continue;
    ++row;
    const auto cells = csv::split(line);
    const auto p = cells.size() == 2 ? csv::parse_int(cells[0]) : std::nullopt;
    const auto a = cells.size() == 2 ? csv::parse_double(cells[1]) : std::nullopt;
    if (!p || !a) throw DataError(path.string() + ": row " + std::to_string(row) + " is malformed");
    out[*p] = *a;
  }
  return out;
}

}  // namespace

std::vector<double> parse_nu_grid(const std::string& text) {
  const auto colon = std::count(text.begin(), text.end(), ':');
  if (colon == 2) {
    const auto a = text.find(':');
    const auto b = text.find(':', a + 1);
    const auto lo = csv::parse_double(text.substr(0, a));
    const auto hi = csv::parse_double(text.substr(a + 1, b - a - 1));
    const auto n = csv::parse_int(text.substr(b + 1));
    if (!lo || !hi || !n) throw DomainError("--nu-grid: cannot parse '" + text + "'");
    return NuSearchConfig::log_grid(*lo, *hi, *n);
  }
  if (colon != 0) throw DomainError("--nu-grid: expected lo:hi:points or a comma list");
  std::vector<double> grid;
  for (const auto& cell : csv::split(text)) {
    const auto v = csv::parse_double(cell);
    if (!v) throw DomainError("--nu-grid: cannot parse '" + cell + "'");
    grid.push_back(*v);
  }
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  return grid;
}

std::vector<std::pair<std::string, std::string>> read_config_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path.string());
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  int row = 0;
  auto strip = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++row;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = strip(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw DomainError(path.string() + ": line " + std::to_string(row) + " is not 'key = value'");
    }
    auto key = strip(line.substr(0, eq));
    auto value = strip(line.substr(eq + 1));
    if (key.rfind("--", 0) == 0) key.erase(0, 2);
    if (key.empty()) throw DomainError(path.string() + ": line " + std::to_string(row) + " has no key");
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

double diagonal_boundary(const TrainedClassifier& tc, double lo, double hi) {
  if (tc.num_classes() < 2 || tc.dim() != 2) {
    throw DimensionMismatch("diagonal_boundary: needs a 2-class model on 2-D features");
  }
  auto gap = [&](double t) {
    const Vector x = Vector::Constant(2, t);
    const auto post = class_posterior(x, tc);
    return post.log_probs[0] - post.log_probs[1];
  };
  // Scan for the first sign change, then bisect inside that cell. Heavy
  // class tails can flip the argmax more than once along the line.
  const int cells = std::max(1, static_cast<int>(std::ceil((hi - lo) / 0.01)));
  const double width = (hi - lo) / cells;
  double glo = gap(lo);
  if (glo == 0.0) return lo;
  bool found = false;
  for (int i = 1; i <= cells; ++i) {
    const double t = i == cells ? hi : lo + i * width;
    const double g = gap(t);
    if (g == 0.0) return t;
    if ((g > 0.0) != (glo > 0.0)) {
      hi = t;
      found = true;
      break;
    }
    lo = t;
    glo = g;
  }
  if (!found) return std::numeric_limits<double>::quiet_NaN();
  for (int i = 0; i < 200 && hi - lo > 1e-12; ++i) {
    const double mid = 0.5 * (lo + hi);
    const double g = gap(mid);
    if ((g > 0.0) == (glo > 0.0)) {
      lo = mid;
      glo = g;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

int cmd_simulate(const SimulateOptions& opt, std::ostream& out, std::ostream& err) {
  check_model_options(opt.model);
  SimulationOptions sim;
  sim.outliers = !opt.no_outliers;
  sim.grid_step = opt.grid_step;
  const auto data = generate_simulation(opt.model.seed, sim);
  ensure_dir(opt.out_dir);
  {
    auto f = open_out(opt.out_dir / "train.csv");
    write_csv(f, data.train);
    auto g = open_out(opt.out_dir / "grid.csv");
    write_csv(g, data.clean_test_grid);
  }

  struct Config {
    const char* name;
    double nu;
    NuMode mode;
  };
  const Config configs[] = {
      {"ml_nu", opt.model.nu, NuMode::kMaximumLikelihood},
      {"shared_nu", opt.model.nu, NuMode::kFixed},
      {"gaussian", 1e6, NuMode::kFixed},
  };

  auto summary = open_out(opt.out_dir / "summary.csv");
  summary << "config,nu_class1,nu_class2,grid_accuracy,diagonal_boundary,converged\n";
  bool all_converged = true;
  for (const auto& c : configs) {
    auto vb = vb_config(opt.model);
    vb.nu_mode = c.mode;
    const auto prior = build_default_prior(data.train, c.nu, opt.model.k_init, opt.model.alpha0);
    const auto model = fit(data.train, prior, vb);
    all_converged = all_converged && model.converged();
    const Matrix log_post = posterior_batch(data.clean_test_grid.features, model);
    std::vector<int> pred(data.clean_test_grid.size());
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      pred[i] = log_post(r, 1) > log_post(r, 0) ? 2 : 1;
    }
    const double acc = accuracy(pred, data.clean_test_grid.labels);
    const double boundary = diagonal_boundary(model);
    {
      auto f = open_out(opt.out_dir / ("boundary_" + std::string(c.name) + ".csv"));
      write_boundary_grid(f, data.clean_test_grid.features, log_post);
    }
    if (opt.svg) {
      auto f = open_out(opt.out_dir / ("boundary_" + std::string(c.name) + ".svg"));
      write_svg(f, data.clean_test_grid.features, log_post, opt.grid_step, data.train);
    }
    const double nu1 = model.classes()[0].components.front().nu;
    const double nu2 = model.classes()[1].components.front().nu;
    summary << c.name << ',' << csv::format_double(nu1) << ',' << csv::format_double(nu2) << ','
            << csv::format_double(acc) << ',' << csv::format_double(boundary) << ','
            << (model.converged() ? 1 : 0) << '\n';
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-10s nu=(%.4g, %.4g) grid accuracy %.4f boundary x1=x2=%.4f\n",
                  c.name, nu1, nu2, acc, boundary);
    out << buf;
  }
  if (!all_converged) {
    err << "warning: at least one configuration hit the iteration limit\n";
    return kNotConverged;
  }
  return kSuccess;
}

int cmd_train(const TrainOptions& opt, std::ostream& out, std::ostream& err) {
  check_model_options(opt.model);
  const auto data = load_csv(opt.data);
  if (data.empty()) throw DataError(opt.data.string() + ": no training rows");
  const auto vb = vb_config(opt.model);
  double nu = opt.model.nu;
  if (opt.model.select_nu) {
    const auto prior = build_default_prior(data, opt.model.nu_pre, opt.model.k_init, opt.model.alpha0);
    const auto sel = select_nu(data, prior, nu_search_config(opt.model), vb);
    nu = sel.nu_hat;
    out << "selected nu " << csv::format_double(nu) << '\n';
    if (opt.out_dir) {
      ensure_dir(*opt.out_dir);
      auto f = open_out(*opt.out_dir / "nu_selection.csv");
      write_nu_table(f, sel);
    }
  }
  const auto prior = build_default_prior(data, nu, opt.model.k_init, opt.model.alpha0);
  const auto model = fit(data, prior, vb, stream_log(err));
  save_model(opt.model_out, model);
  for (const auto& cm : model.classes()) {
    out << "class " << cm.class_id << ": " << cm.components.size() << " components, "
        << cm.iterations << " iterations" << (cm.converged ? "" : " (iteration limit)") << '\n';
  }
  if (!model.converged()) {
    err << "warning: training stopped at the iteration limit\n";
    return kNotConverged;
  }
  return kSuccess;
}

int cmd_predict(const PredictOptions& opt, std::ostream& out, std::ostream&) {
  const auto model = load_model(opt.model);
  const auto data = load_csv(opt.data);
  if (!data.empty() && data.dim() != model.dim()) {
    throw DimensionMismatch("data has " + std::to_string(data.dim()) + " features, model expects " +
                            std::to_string(model.dim()));
  }
  OutputTarget target(opt.out, out);
  auto& o = target.get();
  o << "pred_label";
  for (int c = 1; c <= model.num_classes(); ++c) o << ",log_posterior_" << c;
  o << '\n';
  if (data.empty()) return kSuccess;
  const Matrix log_post = posterior_batch(data.features, model);
  for (Eigen::Index i = 0; i < log_post.rows(); ++i) {
    Eigen::Index best = 0;
    log_post.row(i).maxCoeff(&best);
    o << (best + 1);
    for (Eigen::Index c = 0; c < log_post.cols(); ++c) o << ',' << csv::format_double(log_post(i, c));
    o << '\n';
  }
  return kSuccess;
}

int cmd_evaluate(const EvaluateOptions& opt, std::ostream& out, std::ostream& err) {
  check_model_options(opt.model);
  if (!(opt.subsample > 0.0 && opt.subsample <= 1.0)) throw DomainError("--subsample must be in (0, 1]");
  const auto data = load_csv(opt.data);
  if (data.empty()) throw DataError(opt.data.string() + ": no rows");
  const int num_classes = data.num_classes();
  const auto vb = vb_config(opt.model);
  std::optional<NuSearchConfig> search;
  if (opt.model.select_nu) search = nu_search_config(opt.model);

  // Enumerate every (participant, combination) job up front so results land
  // in a fixed order regardless of thread scheduling.
  struct Job {
    int participant;
    int combination;
    TrialSplit split;
  };
  std::vector<Job> jobs;
  for (int p : distinct(data.participants)) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (data.participants[i] == p) rows.push_back(i);
    }
    const auto part = data.select(rows);
    const int trials = static_cast<int>(distinct(part.trials).size());
    const int s = opt.trials_train > 0 ? opt.trials_train : trials / 3;
    if (s < 1 || s >= trials) {
      throw DataError("participant " + std::to_string(p) + " has " + std::to_string(trials) +
                      " trials; cannot hold out with " + std::to_string(s) + " training trials");
    }
    auto splits = split_by_trials(part, s);
    for (std::size_t k = 0; k < splits.size(); ++k) {
      jobs.push_back({p, static_cast<int>(k) + 1, std::move(splits[k])});
    }
  }

  std::vector<CombinationResult> results(jobs.size());
  auto run_job = [&](std::size_t j) {
    const auto& job = jobs[j];
    const auto job_seed = mix_seed(opt.model.seed, static_cast<std::uint64_t>(job.participant),
                                   static_cast<std::uint64_t>(job.combination));
    const auto train = opt.subsample < 1.0 ? subsample(job.split.train, opt.subsample, job_seed)
                                           : job.split.train;
    if (train.num_classes() != num_classes || static_cast<int>(distinct(train.labels).size()) != num_classes) {
      throw DataError("participant " + std::to_string(job.participant) + ", combination " +
                      std::to_string(job.combination) + ": a class has no training rows");
    }
    auto job_vb = vb;
    job_vb.seed = job_seed;
    job_vb.threads = 1;
    CombinationResult& r = results[j];
    r.participant = job.participant;
    r.combination = job.combination;
    r.plan = job.split.plan;
    r.n_train = train.size();
    r.n_test = job.split.test.size();
    r.nu = opt.model.nu;
    std::optional<TrainedClassifier> model;
    std::function<void()> tune;
    if (search) {
      tune = [&] {
        auto cfg = *search;
        cfg.seed = job_seed;
        cfg.threads = 1;
        const auto prior = build_default_prior(train, cfg.nu_pre, opt.model.k_init, opt.model.alpha0);
        r.nu = select_nu(train, prior, cfg, job_vb).nu_hat;
      };
    }
    std::vector<int> pred;
    r.timing = time_stages(
        tune,
        [&] {
          const auto prior = build_default_prior(train, r.nu, opt.model.k_init, opt.model.alpha0);
          model.emplace(fit(train, prior, job_vb));
        },
        [&]() -> std::size_t {
          if (job.split.test.empty()) return 0;
          pred = classify_batch(job.split.test.features, *model);
          return pred.size();
        },
        opt.timing_records);
    r.converged = model->converged();
    const auto report = make_report(pred, job.split.test.labels, num_classes, r.timing);
    r.accuracy = report.accuracy;
    r.precision = report.per_class_precision;
    r.recall = report.per_class_recall;
    r.confusion = report.confusion;
  };

  const int workers = std::min<int>(opt.model.threads, static_cast<int>(jobs.size()));
  if (workers <= 1) {
    for (std::size_t j = 0; j < jobs.size(); ++j) run_job(j);
  } else {
    std::vector<std::exception_ptr> errors(jobs.size());
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t j = static_cast<std::size_t>(w); j < jobs.size(); j += static_cast<std::size_t>(workers)) {
          try {
            run_job(j);
          } catch (...) {
            errors[j] = std::current_exception();
          }
        }
      });
    }
    for (auto& t : pool) t.join();
    for (const auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  ensure_dir(opt.out_dir);
  {
    auto f = open_out(opt.out_dir / "combinations.csv");
    f << "participant,combination,train_trials,test_trials,n_train,n_test,nu,accuracy,macro_precision,"
         "macro_recall\n";
    for (const auto& r : results) {
      f << r.participant << ',' << r.combination << ',' << join(r.plan.train_trials, ' ') << ','
        << join(r.plan.test_trials, ' ') << ',' << r.n_train << ',' << r.n_test << ','
        << csv::format_double(r.nu) << ',' << csv::format_double(r.accuracy) << ','
        << csv::format_double(r.precision.mean()) << ',' << csv::format_double(r.recall.mean()) << '\n';
    }
  }
  {
    auto f = open_out(opt.out_dir / "timing.csv");
    f << "participant,combination,threads,tune_s,train_s,predict_us_per_record,predicted_records\n";
    for (const auto& r : results) {
      f << r.participant << ',' << r.combination << ',' << opt.model.threads << ','
        << csv::format_double(r.timing.tune_s) << ',' << csv::format_double(r.timing.train_s) << ','
        << csv::format_double(r.timing.predict_us_per_record) << ',' << r.timing.predicted_records
        << '\n';
    }
  }

  // Per participant: average over combinations. Aggregate: average over
  // participants.
  struct ParticipantSummary {
    int participant = 0;
    int combinations = 0;
    double accuracy = 0.0;
    Vector precision;
    Vector recall;
  };
  std::vector<ParticipantSummary> participants;
  MetricsReport aggregate;
  aggregate.confusion = Eigen::MatrixXi::Zero(num_classes, num_classes);
  aggregate.per_class_precision = Vector::Zero(num_classes);
  aggregate.per_class_recall = Vector::Zero(num_classes);
  for (const auto& r : results) {
    if (participants.empty() || participants.back().participant != r.participant) {
      participants.push_back({r.participant, 0, 0.0, Vector::Zero(num_classes), Vector::Zero(num_classes)});
    }
    auto& ps = participants.back();
    ++ps.combinations;
    ps.accuracy += r.accuracy;
    ps.precision += r.precision;
    ps.recall += r.recall;
    aggregate.confusion += r.confusion;
    aggregate.timing.tune_s += r.timing.tune_s;
    aggregate.timing.train_s += r.timing.train_s;
    aggregate.timing.predict_us_per_record += r.timing.predict_us_per_record;
  }
  for (auto& ps : participants) {
    ps.accuracy /= ps.combinations;
    ps.precision /= ps.combinations;
    ps.recall /= ps.combinations;
    aggregate.accuracy += ps.accuracy;
    aggregate.per_class_precision += ps.precision;
    aggregate.per_class_recall += ps.recall;
  }
  const auto np = static_cast<double>(participants.size());
  aggregate.accuracy /= np;
  aggregate.per_class_precision /= np;
  aggregate.per_class_recall /= np;
  const auto nj = static_cast<double>(results.size());
  aggregate.timing.tune_s /= nj;
  aggregate.timing.train_s /= nj;
  aggregate.timing.predict_us_per_record /= nj;

  {
    auto f = open_out(opt.out_dir / "participants.csv");
    f << "participant,combinations,accuracy,macro_precision,macro_recall\n";
    for (const auto& ps : participants) {
      f << ps.participant << ',' << ps.combinations << ',' << csv::format_double(ps.accuracy) << ','
        << csv::format_double(ps.precision.mean()) << ',' << csv::format_double(ps.recall.mean())
        << '\n';
    }
  }
  {
    auto f = open_out(opt.out_dir / "per_class.csv");
    f << "participant,class,precision,recall\n";
    for (const auto& ps : participants) {
      for (int c = 0; c < num_classes; ++c) {
        f << ps.participant << ',' << (c + 1) << ',' << csv::format_double(ps.precision[c]) << ','
          << csv::format_double(ps.recall[c]) << '\n';
      }
    }
  }
  {
    auto f = open_out(opt.out_dir / "metrics.csv");
    write_report_csv(f, aggregate, false);
    auto g = open_out(opt.out_dir / "confusion.csv");
    write_confusion_csv(g, aggregate.confusion);
  }
  if (opt.compare) {
    const auto other = read_compare_file(*opt.compare);
    std::vector<double> a, b;
    for (const auto& ps : participants) {
      const auto it = other.find(ps.participant);
      if (it == other.end()) {
        throw DataError(opt.compare->string() + ": no accuracy for participant " +
                        std::to_string(ps.participant));
      }
      a.push_back(ps.accuracy);
      b.push_back(it->second);
    }
    const double ps_value = probability_of_superiority(a, b);
    auto f = open_out(opt.out_dir / "superiority.csv");
    f << "participants,wins,ps\n"
      << a.size() << ',' << std::llround(ps_value * static_cast<double>(a.size())) << ','
      << csv::format_double(ps_value) << '\n';
    out << "Probability of superiority " << csv::format_double(ps_value) << '\n';
  }
  out << participants.size() << " participant(s), " << results.size() << " combination(s)\n";
  write_report_table(out, aggregate);

  const bool converged =
      std::all_of(results.begin(), results.end(), [](const auto& r) { return r.converged; });
  if (!converged) {
    err << "warning: at least one fit hit the iteration limit\n";
    return kNotConverged;
  }
  return kSuccess;
}

int cmd_extract(const ExtractOptions& opt, std::ostream& out, std::ostream&) {
  const auto blocks =
      load_signal_csv(opt.data, opt.fs > 0.0 ? std::optional<double>(opt.fs) : std::nullopt);
  std::vector<FeatureDataset> parts;
  for (const auto& b : blocks) {
    if (opt.pipeline == "rect-smooth") {
      parts.push_back(pipeline_rect_smooth(b, opt.fc, opt.zero_phase));
    } else if (opt.pipeline == "mav") {
      const auto filtered =
          opt.prefilter_fc > 0.0 ? first_order_lowpass(b, opt.prefilter_fc, opt.zero_phase) : b;
      parts.push_back(mav_window(filtered, opt.window_ms, opt.step_ms));
    } else {
      throw DomainError("--pipeline must be 'rect-smooth' or 'mav'");
    }
  }
  OutputTarget target(opt.out, out);
  write_csv(target.get(), concat(parts));
  return kSuccess;
}

namespace {

void add_model_options(CLI::App* app, ModelOptions& m, bool with_selection) {
  app->add_option("--nu", m.nu, "Degrees-of-freedom parameter nu")->capture_default_str();
  if (with_selection) {
    app->add_flag("--select-nu", m.select_nu, "Choose nu by cross-validated conditional entropy");
    app->add_option("--nu-pre", m.nu_pre, "nu used for the fold fits during selection")->capture_default_str();
    app->add_option("--nu-grid", m.nu_grid, "Candidate nu values: lo:hi:points (log-spaced) or a comma list")
        ->capture_default_str();
    app->add_option("--folds", m.folds, "Cross-validation folds for nu selection")->capture_default_str();
  }
  app->add_option("--k-init", m.k_init, "Initial components per class")->capture_default_str();
  app->add_option("--alpha0", m.alpha0, "Dirichlet concentration")->capture_default_str();
  app->add_option("--nu-mode", m.nu_mode, "fixed, or ml for per-component maximum-likelihood nu")
      ->capture_default_str();
  app->add_option("--max-iters", m.max_iters, "Iteration limit per class")->capture_default_str();
  app->add_option("--seed", m.seed, "Random seed")->capture_default_str();
  app->add_option("--threads", m.threads, "Worker threads")->capture_default_str();
}

// Moves `--config FILE` out of the argument list and splices its entries in
// as flags directly after the subcommand name, so explicit flags (which come
// later and win under the last-value policy) override them.
std::vector<std::string> expand_config(std::vector<std::string> args) {
  std::optional<std::string> path;
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      path = args[i + 1];
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i), args.begin() + static_cast<std::ptrdiff_t>(i) + 2);
      break;
    }
    if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i));
      break;
    }
  }
  if (!path) return args;
  std::vector<std::string> injected;
  for (const auto& [key, value] : read_config_file(*path)) injected.push_back("--" + key + "=" + value);
  const auto at = args.size() > 1 ? args.begin() + 2 : args.end();
  args.insert(at, injected.begin(), injected.end());
  return args;
}

}  // namespace

int run(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Bayesian scale-mixture classifier: simulate, train, predict, evaluate, extract"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.set_help_all_flag("--help-all", "Help for every subcommand");
  std::string config_hint;
  app.add_option("--config", config_hint,
                 "key = value file whose keys mirror the long flags (flags take precedence)");

  SimulateOptions sim;
  auto* simulate = app.add_subcommand("simulate", "Run the two-class outlier simulation");
  add_model_options(simulate, sim.model, false);
  std::string sim_out = sim.out_dir.string();
  simulate->add_option("--out-dir", sim_out, "Output directory")->capture_default_str();
  simulate->add_flag("--no-outliers", sim.no_outliers, "Omit the uniform outliers from class 1");
  simulate->add_option("--grid-step", sim.grid_step, "Boundary grid spacing")->capture_default_str();
  simulate->add_flag("--svg", sim.svg, "Also write SVG heatmaps");

  TrainOptions tr;
  auto* train = app.add_subcommand("train", "Fit a classifier to a feature CSV");
  add_model_options(train, tr.model, true);
  std::string tr_data, tr_model_out = tr.model_out.string(), tr_out_dir;
  train->add_option("--data", tr_data, "Feature CSV")->required();
  train->add_option("--model-out", tr_model_out, "Model file to write")->capture_default_str();
  train->add_option("--out-dir", tr_out_dir, "Directory for the nu selection table");

  PredictOptions pr;
  auto* predict = app.add_subcommand("predict", "Classify a feature CSV with a saved model");
  std::string pr_model, pr_data;
  predict->add_option("--model", pr_model, "Model file")->required();
  predict->add_option("--data", pr_data, "Feature CSV")->required();
  predict->add_option("--out", pr.out, "Predictions CSV ('-' for stdout)")->capture_default_str();

  EvaluateOptions ev;
  auto* evaluate = app.add_subcommand("evaluate", "Trial-combination evaluation protocol");
  add_model_options(evaluate, ev.model, true);
  std::string ev_data, ev_out = ev.out_dir.string(), ev_compare;
  evaluate->add_option("--data", ev_data, "Feature CSV with trial and participant columns")->required();
  evaluate->add_option("--out-dir", ev_out, "Output directory")->capture_default_str();
  evaluate->add_option("--trials-train", ev.trials_train, "Training trials per combination (0: floor(T/3))")
      ->capture_default_str();
  evaluate->add_option("--subsample", ev.subsample, "Fraction of training rows kept (stratified)")
      ->capture_default_str();
  evaluate->add_option("--compare", ev_compare, "participant,accuracy CSV of another method");

  ExtractOptions ex;
  auto* extract = app.add_subcommand("extract", "Raw multichannel signal CSV to feature CSV");
  std::string ex_data;
  extract->add_option("--data", ex_data, "Signal CSV (t,ch1..chD,label,trial[,participant])")->required();
  extract->add_option("--out", ex.out, "Feature CSV ('-' for stdout)")->capture_default_str();
  extract->add_option("--pipeline", ex.pipeline, "rect-smooth or mav")->capture_default_str();
  extract->add_option("--fc", ex.fc, "Smoothing cut-off (Hz)")->capture_default_str();
  extract->add_option("--fs", ex.fs, "Sampling rate (Hz); 0 infers it from t")->capture_default_str();
  extract->add_flag("--zero-phase", ex.zero_phase, "Forward-backward filtering");
  extract->add_option("--window-ms", ex.window_ms, "MAV window length")->capture_default_str();
  extract->add_option("--step-ms", ex.step_ms, "MAV window step")->capture_default_str();
  extract->add_option("--prefilter-fc", ex.prefilter_fc, "Single-pole pre-filter cut-off for mav (0: off)")
      ->capture_default_str();

  try {
    const auto args = expand_config(raw_args);
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kSuccess : kUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  }

  try {
    if (*simulate) {
      sim.out_dir = sim_out;
      return cmd_simulate(sim, out, err);
    }
    if (*train) {
      tr.data = tr_data;
      tr.model_out = tr_model_out;
      if (!tr_out_dir.empty()) tr.out_dir = tr_out_dir;
      return cmd_train(tr, out, err);
    }
    if (*predict) {
      pr.model = pr_model;
      pr.data = pr_data;
      return cmd_predict(pr, out, err);
    }
    if (*evaluate) {
      ev.data = ev_data;
      ev.out_dir = ev_out;
      if (!ev_compare.empty()) ev.compare = ev_compare;
      return cmd_evaluate(ev, out, err);
    }
    if (*extract) {
      ex.data = ex_data;
      return cmd_extract(ex, out, err);
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    switch (e.kind()) {
      case ErrorKind::kDomain:
      case ErrorKind::kUsage:
        return kUsage;
      case ErrorKind::kNumeric:
      case ErrorKind::kNotPositiveDefinite:
        return kNumeric;
      default:
        return kData;
    }
  }
  return kUsage;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  return run(std::vector<std::string>(argv, argv + argc), out, err);
}

}  // namespace scalemix::cli
