#include "scalemix/model.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "scalemix/density.hpp"

namespace scalemix {

using nlohmann::json;

void PriorHyperparameters::validate() const {
  const int d = dim();
  if (d < 1) throw DomainError("prior: dimension must be >= 1");
  if (!(alpha0 > 0.0)) throw DomainError("prior: alpha0 must be positive");
  if (!(beta0 > 0.0)) throw DomainError("prior: beta0 must be positive");
  if (!(eta0 > d - 1)) throw DomainError("prior: eta0 must exceed D - 1");
  if (!(nu_fixed > 0.0)) throw DomainError("prior: nu must be positive");
  if (k_init < 1) throw DomainError("prior: k_init must be >= 1");
  if (W0.rows() != d || W0.cols() != d) throw DimensionMismatch("prior: W0 must be D x D");
  if (!m0.allFinite() || !W0.allFinite()) throw DomainError("prior: non-finite m0 or W0");
  (void)cholesky(W0);
}

void ClassModel::refresh_alpha_hat() {
  alpha_hat = 0.0;
  for (const auto& c : components) alpha_hat += c.alpha;
}

PredictiveComponent make_predictive_component(const ComponentPosterior& c, double alpha_hat,
                                              int dim, int index) {
  const double dof = c.eta - dim - 1.0;
  if (!(dof > 0.0)) {
    throw DomainError("predictive: component " + std::to_string(index) + " has eta = " +
                      std::to_string(c.eta) + " <= D + 1; its mean covariance is undefined");
  }
  PredictiveComponent out;
  out.log_weight = std::log(c.alpha) - std::log(alpha_hat);
  out.mean = c.m;
  out.chol = cholesky_with_jitter(c.W / dof);
  out.log_det = log_det(out.chol);
  out.nu = c.nu;
  out.log_const = out.log_weight + log_student_normalizer(dim, out.log_det, c.nu);
  return out;
}

Vector make_class_log_prior(const std::vector<int>& labels, int num_classes,
                            ClassPriorPolicy policy) {
  if (num_classes < 1) throw DomainError("class prior: need at least one class");
  Vector out(num_classes);
  if (policy == ClassPriorPolicy::kUniform) {
    out.setConstant(-std::log(static_cast<double>(num_classes)));
    return out;
  }
  Vector counts = Vector::Zero(num_classes);
  for (int l : labels) {
    if (l < 1 || l > num_classes) throw DataError("class prior: label out of range");
    counts[l - 1] += 1.0;
  }
  const double total = counts.sum();
  for (int c = 0; c < num_classes; ++c) {
    if (counts[c] == 0.0) throw DataError("class prior: class " + std::to_string(c + 1) + " has no rows");
    out[c] = std::log(counts[c]) - std::log(total);
  }
  return out;
}

TrainedClassifier::TrainedClassifier(std::vector<ClassModel> classes, Vector class_log_prior,
                                     PriorHyperparameters prior)
    : classes_(std::move(classes)),
      class_log_prior_(std::move(class_log_prior)),
      prior_(std::move(prior)) {
  if (classes_.empty()) throw DomainError("classifier: no classes");
  if (class_log_prior_.size() != static_cast<Eigen::Index>(classes_.size())) {
    throw DimensionMismatch("classifier: class_log_prior length differs from class count");
  }
  const double total = log_sum_exp(class_log_prior_);
  if (!(std::abs(total) < 1e-12)) {
    throw DomainError("classifier: class prior does not sum to 1");
  }
  const int d = prior_.dim();
  predictive_.reserve(classes_.size());
  for (const auto& cm : classes_) {
    if (cm.components.empty()) {
      throw DomainError("classifier: class " + std::to_string(cm.class_id) + " has no components");
    }
    std::vector<PredictiveComponent> comps;
    comps.reserve(cm.components.size());
    for (std::size_t k = 0; k < cm.components.size(); ++k) {
      if (cm.components[k].m.size() != d) {
        throw DimensionMismatch("classifier: class " + std::to_string(cm.class_id) +
                                " component dimension differs from the prior");
      }
      comps.push_back(make_predictive_component(cm.components[k], cm.alpha_hat, d, static_cast<int>(k)));
    }
    predictive_.push_back(std::move(comps));
  }
}

bool TrainedClassifier::converged() const {
  for (const auto& c : classes_) {
    if (!c.converged) return false;
  }
  return true;
}

PriorHyperparameters build_default_prior(const FeatureDataset& data, double nu_fixed, int k_init,
                                         double alpha0) {
  if (data.empty()) throw DataError("build_default_prior: empty dataset");
  const int d = data.dim();
  if (d < 1) throw DataError("build_default_prior: feature dimension must be >= 1");
  const auto n = static_cast<double>(data.size());

  PriorHyperparameters p;
  p.alpha0 = alpha0;
  p.beta0 = 1.0;
  p.eta0 = d + 1.0;
  p.nu_fixed = nu_fixed;
  p.k_init = k_init;
  p.m0 = data.features.colwise().mean().transpose();
  Matrix scatter = Matrix::Zero(d, d);
  for (Eigen::Index i = 0; i < data.features.rows(); ++i) {
    const Vector diff = data.features.row(i).transpose() - p.m0;
    scatter.noalias() += diff * diff.transpose();
  }
  Matrix cov = data.size() > 1 ? Matrix(scatter / (n - 1.0)) : Matrix(Matrix::Zero(d, d));
  cov = (0.5 * (cov + cov.transpose())).eval();
  try {
    (void)cholesky(cov);
  } catch (const NotPositiveDefinite&) {
    cov.diagonal().array() += jitter_amount(cov);
  }
  p.W0 = std::move(cov);
  p.validate();
  return p;
}

// ---- Persistence ------------------------------------------------------------

namespace {

json vec_to_json(const Vector& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

json mat_to_json(const Matrix& m) {
  std::vector<double> flat;
  flat.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) flat.push_back(m(i, j));
  }
  return json(flat);
}

Vector vec_from_json(const json& j, Eigen::Index expected, const char* what) {
  const auto v = j.get<std::vector<double>>();
  if (expected >= 0 && static_cast<Eigen::Index>(v.size()) != expected) {
    throw DataError(std::string("model file: ") + what + " has wrong length");
  }
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

Matrix mat_from_json(const json& j, int d, const char* what) {
  const auto v = j.get<std::vector<double>>();
  if (static_cast<int>(v.size()) != d * d) {
    throw DataError(std::string("model file: ") + what + " must have D*D entries");
  }
  Matrix m(d, d);
  for (int i = 0; i < d; ++i) {
    for (int k = 0; k < d; ++k) m(i, k) = v[static_cast<std::size_t>(i * d + k)];
  }
  return m;
}

}  // namespace

std::string to_json(const TrainedClassifier& tc) {
  const auto& p = tc.prior();
  json doc;
  doc["format"] = "scalemix-model";
  doc["format_version"] = kModelFormatVersion;
  doc["dim"] = tc.dim();
  doc["prior"] = {{"alpha0", p.alpha0}, {"beta0", p.beta0}, {"m0", vec_to_json(p.m0)},
                  {"W0", mat_to_json(p.W0)}, {"eta0", p.eta0}, {"nu_fixed", p.nu_fixed},
                  {"k_init", p.k_init}};
  json classes = json::array();
  for (const auto& cm : tc.classes()) {
    json comps = json::array();
    for (const auto& c : cm.components) {
      comps.push_back({{"alpha", c.alpha}, {"beta", c.beta}, {"m", vec_to_json(c.m)},
                       {"W", mat_to_json(c.W)}, {"eta", c.eta}, {"nu", c.nu}});
    }
    classes.push_back({{"class_id", cm.class_id},
                       {"components", std::move(comps)},
                       {"n_pruned", cm.n_pruned},
                       {"iterations", cm.iterations},
                       {"converged", cm.converged},
                       {"elbo_trace", cm.elbo_trace}});
  }
  doc["classes"] = std::move(classes);
  doc["class_log_prior"] = vec_to_json(tc.class_log_prior());
  return doc.dump(1) + "\n";
}

TrainedClassifier from_json(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw DataError(std::string("model file: ") + e.what());
  }
  try {
    if (doc.value("format", "") != "scalemix-model") throw DataError("model file: unrecognized format");
    const int version = doc.at("format_version").get<int>();
    if (version != kModelFormatVersion) {
      throw DataError("model file: unsupported format_version " + std::to_string(version));
    }
    const int d = doc.at("dim").get<int>();
    if (d < 1) throw DataError("model file: dim must be >= 1");
    const auto& jp = doc.at("prior");
    PriorHyperparameters p;
    p.alpha0 = jp.at("alpha0").get<double>();
    p.beta0 = jp.at("beta0").get<double>();
    p.m0 = vec_from_json(jp.at("m0"), d, "prior.m0");
    p.W0 = mat_from_json(jp.at("W0"), d, "prior.W0");
    p.eta0 = jp.at("eta0").get<double>();
    p.nu_fixed = jp.at("nu_fixed").get<double>();
    p.k_init = jp.at("k_init").get<int>();

    std::vector<ClassModel> classes;
    for (const auto& jc : doc.at("classes")) {
      ClassModel cm;
      cm.class_id = jc.at("class_id").get<int>();
      cm.n_pruned = jc.value("n_pruned", 0);
      cm.iterations = jc.value("iterations", 0);
      cm.converged = jc.value("converged", false);
      cm.elbo_trace = jc.value("elbo_trace", std::vector<double>{});
      for (const auto& jk : jc.at("components")) {
        ComponentPosterior c;
        c.alpha = jk.at("alpha").get<double>();
        c.beta = jk.at("beta").get<double>();
        c.m = vec_from_json(jk.at("m"), d, "component.m");
        c.W = mat_from_json(jk.at("W"), d, "component.W");
        c.eta = jk.at("eta").get<double>();
        c.nu = jk.at("nu").get<double>();
        cm.components.push_back(std::move(c));
      }
      cm.refresh_alpha_hat();
      classes.push_back(std::move(cm));
    }
    Vector log_prior = vec_from_json(doc.at("class_log_prior"), static_cast<Eigen::Index>(classes.size()),
                                     "class_log_prior");
    return TrainedClassifier(std::move(classes), std::move(log_prior), std::move(p));
  } catch (const json::exception& e) {
    throw DataError(std::string("model file: ") + e.what());
  }
}

void save_model(const std::filesystem::path& path, const TrainedClassifier& tc) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << to_json(tc);
  if (!out) throw IoError("write failed: " + path.string());
}

TrainedClassifier load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

}  // namespace scalemix
