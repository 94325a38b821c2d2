#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "scalemix/cli.hpp"
#include "scalemix/data.hpp"
#include "scalemix/density.hpp"
#include "scalemix/eval.hpp"
#include "scalemix/features.hpp"
#include "scalemix/model.hpp"
#include "scalemix/nu_select.hpp"
#include "scalemix/predict.hpp"
#include "scalemix/vb.hpp"

namespace py = pybind11;
using namespace scalemix;

namespace {

FeatureDataset make_dataset(const RowMatrix& x, const std::vector<int>& labels,
                            std::optional<std::vector<int>> trials,
                            std::optional<std::vector<int>> participants) {
  const auto n = static_cast<std::size_t>(x.rows());
  FeatureDataset d;
  d.features = x;
  d.labels = labels;
  d.trials = trials ? *trials : std::vector<int>(n, 1);
  d.participants = participants ? *participants : std::vector<int>(n, 1);
  d.validate();
  return d;
}

NuMode parse_nu_mode(const std::string& s) {
  if (s == "fixed") return NuMode::kFixed;
  if (s == "ml") return NuMode::kMaximumLikelihood;
  throw DomainError("nu_mode must be 'fixed' or 'ml'");
}

}  // namespace

PYBIND11_MODULE(_scalemix, m) {
  m.doc() = "Variational Bayesian scale-mixture classifier.";

  py::register_exception<DimensionMismatch>(m, "DimensionMismatch", PyExc_ValueError);
  py::register_exception<NotPositiveDefinite>(m, "NotPositiveDefinite", PyExc_ArithmeticError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);

  py::class_<PriorHyperparameters>(m, "Prior")
      .def_readwrite("alpha0", &PriorHyperparameters::alpha0)
      .def_readwrite("beta0", &PriorHyperparameters::beta0)
      .def_readwrite("m0", &PriorHyperparameters::m0)
      .def_readwrite("W0", &PriorHyperparameters::W0)
      .def_readwrite("eta0", &PriorHyperparameters::eta0)
      .def_readwrite("nu", &PriorHyperparameters::nu_fixed)
      .def_readwrite("k_init", &PriorHyperparameters::k_init)
      .def_property_readonly("dim", &PriorHyperparameters::dim)
      .def("validate", &PriorHyperparameters::validate);

  py::class_<ComponentPosterior>(m, "Component")
      .def_readonly("alpha", &ComponentPosterior::alpha)
      .def_readonly("beta", &ComponentPosterior::beta)
      .def_readonly("m", &ComponentPosterior::m)
      .def_readonly("W", &ComponentPosterior::W)
      .def_readonly("eta", &ComponentPosterior::eta)
      .def_readonly("nu", &ComponentPosterior::nu);

  py::class_<ClassModel>(m, "ClassModel")
      .def_readonly("class_id", &ClassModel::class_id)
      .def_readonly("components", &ClassModel::components)
      .def_readonly("elbo_trace", &ClassModel::elbo_trace)
      .def_readonly("n_pruned", &ClassModel::n_pruned)
      .def_readonly("iterations", &ClassModel::iterations)
      .def_readonly("converged", &ClassModel::converged);

  py::class_<TrainedClassifier>(m, "Classifier")
      .def_property_readonly("classes", &TrainedClassifier::classes)
      .def_property_readonly("prior", &TrainedClassifier::prior)
      .def_property_readonly("class_log_prior", &TrainedClassifier::class_log_prior)
      .def_property_readonly("dim", &TrainedClassifier::dim)
      .def_property_readonly("num_classes", &TrainedClassifier::num_classes)
      .def_property_readonly("converged", &TrainedClassifier::converged)
      .def(
          "predict", [](const TrainedClassifier& tc, const RowMatrix& x) { return classify_batch(x, tc); },
          py::arg("x"), "One-based labels for every row.")
      .def(
          "predict_log_proba",
          [](const TrainedClassifier& tc, const RowMatrix& x, std::optional<double> nu) {
            return posterior_batch(x, tc, nu);
          },
          py::arg("x"), py::arg("nu") = py::none(), "ln p(c | x), one column per class.")
      .def(
          "class_log_density",
          [](const TrainedClassifier& tc, const RowMatrix& x) {
            Matrix out(x.rows(), tc.num_classes());
            for (Eigen::Index i = 0; i < x.rows(); ++i) {
              for (int c = 0; c < tc.num_classes(); ++c) {
                out(i, c) = class_log_predictive(x.row(i).transpose(), tc.predictive()[static_cast<std::size_t>(c)]);
              }
            }
            return out;
          },
          py::arg("x"))
      .def("to_json", [](const TrainedClassifier& tc) { return to_json(tc); })
      .def_static("from_json", [](const std::string& s) { return from_json(s); })
      .def("save", [](const TrainedClassifier& tc, const std::filesystem::path& p) { save_model(p, tc); })
      .def_static("load", [](const std::filesystem::path& p) { return load_model(p); });

  m.def(
      "default_prior",
      [](const RowMatrix& x, double nu, int k_init, double alpha0) {
        return build_default_prior(make_dataset(x, std::vector<int>(static_cast<std::size_t>(x.rows()), 1),
                                                std::nullopt, std::nullopt),
                                   nu, k_init, alpha0);
      },
      py::arg("x"), py::arg("nu") = 5.0, py::arg("k_init") = 1, py::arg("alpha0") = 0.001);

  m.def(
      "fit",
      [](const RowMatrix& x, const std::vector<int>& labels, std::optional<PriorHyperparameters> prior,
         double nu, int k_init, double alpha0, const std::string& nu_mode, int max_iters, std::uint64_t seed,
         int threads) {
        const auto data = make_dataset(x, labels, std::nullopt, std::nullopt);
        VbConfig cfg;
        cfg.nu_mode = parse_nu_mode(nu_mode);
        cfg.max_iters = max_iters;
        cfg.seed = seed;
        cfg.threads = threads;
        const auto p = prior ? *prior : build_default_prior(data, nu, k_init, alpha0);
        py::gil_scoped_release release;
        return fit(data, p, cfg);
      },
      py::arg("x"), py::arg("labels"), py::arg("prior") = py::none(), py::arg("nu") = 5.0, py::arg("k_init") = 1,
      py::arg("alpha0") = 0.001, py::arg("nu_mode") = "fixed", py::arg("max_iters") = 500, py::arg("seed") = 0,
      py::arg("threads") = 1, "Train one mixture per class (labels 1..C).");

  m.def(
      "select_nu",
      [](const RowMatrix& x, const std::vector<int>& labels, std::optional<std::vector<double>> grid, int folds,
         double nu_pre, int k_init, double alpha0, std::uint64_t seed, int threads) {
        const auto data = make_dataset(x, labels, std::nullopt, std::nullopt);
        NuSearchConfig cfg;
        if (grid) cfg.grid = *grid;
        cfg.folds = folds;
        cfg.nu_pre = nu_pre;
        cfg.seed = seed;
        cfg.threads = threads;
        VbConfig vb;
        vb.seed = seed;
        const auto prior = build_default_prior(data, nu_pre, k_init, alpha0);
        NuSelection sel;
        {
          py::gil_scoped_release release;
          sel = select_nu(data, prior, cfg, vb);
        }
        std::vector<std::vector<double>> objective;
        for (const auto& f : sel.folds) objective.push_back(f.objective);
        return py::make_tuple(sel.nu_hat, sel.grid, objective);
      },
      py::arg("x"), py::arg("labels"), py::arg("grid") = py::none(), py::arg("folds") = 5, py::arg("nu_pre") = 200.0,
      py::arg("k_init") = 1, py::arg("alpha0") = 0.001, py::arg("seed") = 0, py::arg("threads") = 1,
      "Returns (nu_hat, grid, per-fold objective).");

  m.def(
      "log_density",
      [](const Vector& x, const Vector& mu, const Matrix& sigma, double nu) {
        return log_marginal_density(x, StudentParams{mu, sigma, nu});
      },
      py::arg("x"), py::arg("mu"), py::arg("sigma"), py::arg("nu"));

  m.def(
      "simulate",
      [](std::uint64_t seed, bool outliers, double grid_step) {
        SimulationOptions o;
        o.outliers = outliers;
        o.grid_step = grid_step;
        const auto s = generate_simulation(seed, o);
        return py::make_tuple(s.train.features, s.train.labels, s.clean_test_grid.features, s.clean_test_grid.labels);
      },
      py::arg("seed") = 0, py::arg("outliers") = true, py::arg("grid_step") = 0.05,
      "Returns (x_train, y_train, x_grid, y_grid_bayes).");

  m.def(
      "butterworth_coefficients",
      [](double fc, double fs) {
        const auto c = butterworth2_lowpass_coeffs(fc, fs);
        return py::make_tuple(c.b, c.a);
      },
      py::arg("fc"), py::arg("fs"));
  m.def(
      "lowpass",
      [](const RowMatrix& x, double fs, double fc, bool zero_phase) {
        SignalBlock s;
        s.samples = x;
        s.fs = fs;
        return butterworth2_lowpass(s, fc, zero_phase).samples;
      },
      py::arg("x"), py::arg("fs"), py::arg("fc") = 2.0, py::arg("zero_phase") = false);
  m.def(
      "mav",
      [](const RowMatrix& x, double fs, double window_ms, double step_ms) {
        SignalBlock s;
        s.samples = x;
        s.fs = fs;
        return mav_window(s, window_ms, step_ms).features;
      },
      py::arg("x"), py::arg("fs"), py::arg("window_ms") = 400.0, py::arg("step_ms") = 100.0);

  m.def("accuracy", &accuracy, py::arg("pred"), py::arg("truth"));
  m.def("confusion_matrix", &confusion_matrix, py::arg("pred"), py::arg("truth"), py::arg("num_classes"));
  m.def(
      "precision_recall",
      [](const std::vector<int>& pred, const std::vector<int>& truth, int c) {
        const auto pr = precision_recall(pred, truth, c);
        return py::make_tuple(pr.precision, pr.recall);
      },
      py::arg("pred"), py::arg("truth"), py::arg("num_classes"));
  m.def("probability_of_superiority", &probability_of_superiority, py::arg("a"), py::arg("b"));

  m.def(
      "main",
      [](std::vector<std::string> args) {
        args.insert(args.begin(), "scalemix");
        std::ostringstream out, err;
        int code = 0;
        {
          py::gil_scoped_release release;
          code = cli::run(args, out, err);
        }
        py::print(out.str(), py::arg("end") = "");
        if (!err.str().empty()) py::print(err.str(), py::arg("end") = "", py::arg("file") = py::module_::import("sys").attr("stderr"));
        return code;
      },
      py::arg("args"), "Run the command-line interface; returns the exit code.");
}
