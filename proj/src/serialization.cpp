#include "sdtr/serialization.hpp"

#include <fstream>
#include <iomanip>
#include <istream>
#include <ostream>

#include "json.hpp"

#include "sdtr/error.hpp"

namespace sdtr {

namespace {

using Json = nlohmann::ordered_json;

Json vec(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Eigen::VectorXd vec(const Json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

Json vecs(const std::vector<Eigen::VectorXd>& vs) {
  Json a = Json::array();
  for (const auto& v : vs) a.push_back(vec(v));
  return a;
}

std::vector<Eigen::VectorXd> vecs(const Json& j) {
  std::vector<Eigen::VectorXd> out;
  for (const auto& e : j) out.push_back(vec(e));
  return out;
}

Json spec_json(const FeatureSpec& s) {
  return {{"main_effect_features", s.main_effect_features},
          {"decision_features", s.decision_features},
          {"include_intercept", s.include_intercept}};
}

FeatureSpec spec_from(const Json& j) {
  FeatureSpec s;
  s.main_effect_features = j.at("main_effect_features").get<std::vector<std::string>>();
  s.decision_features = j.at("decision_features").get<std::vector<std::string>>();
  s.include_intercept = j.at("include_intercept").get<bool>();
  return s;
}

}  // namespace

void save_model(std::ostream& out, const FittedModel& fitted) {
  Json j;
  j["format"] = "sdtr-model";
  j["version"] = kModelFormatVersion;
  j["method"] = method_name(fitted.method);
  j["feature_spec"] = spec_json(fitted.feature_spec());
  if (const auto* q = std::get_if<StagewiseQModel>(&fitted.model)) {
    j["main_coefs"] = vecs(q->main_coefs);
    j["decision_coefs"] = vecs(q->decision_coefs);
  } else if (const auto* s = std::get_if<SharedQModel>(&fitted.model)) {
    j["main_coefs"] = vecs(s->main_coefs);
    j["psi"] = vec(s->shared_psi);
    j["diagnostics"] = {{"iterations", s->iterations},
                        {"converged", s->converged},
                        {"epsilon", s->epsilon},
                        {"last_change", s->last_change}};
  } else {
    const auto& o = std::get<SharedOModel>(fitted.model);
    j["psi"] = vec(o.psi);
    j["diagnostics"] = {{"k", o.smoothing_k},
                        {"l1_weight", o.l1_weight},
                        {"objective", o.objective_at_solution},
                        {"iterations", o.iterations},
                        {"converged", o.converged}};
  }
  out << std::setprecision(17) << j.dump(2) << "\n";
}

FittedModel load_model(std::istream& in) {
  Json j;
  try {
    in >> j;
  } catch (const Json::parse_error& e) {
    throw DataError(std::string("model file is not valid JSON: ") + e.what());
  }
  try {
    if (j.value("format", "") != "sdtr-model") throw DataError("not a model file");
    const int version = j.at("version").get<int>();
    if (version != kModelFormatVersion) {
      throw DataError("unsupported model format version " + std::to_string(version));
    }
    const auto method = parse_method(j.at("method").get<std::string>());
    if (!method) throw DataError("unknown method in model file");
    FittedModel fitted;
    fitted.method = *method;
    const FeatureSpec spec = spec_from(j.at("feature_spec"));
    switch (*method) {
      case Method::cq: {
        StagewiseQModel m;
        m.main_coefs = vecs(j.at("main_coefs"));
        m.decision_coefs = vecs(j.at("decision_coefs"));
        m.feature_spec = spec;
        fitted.model = std::move(m);
        break;
      }
      case Method::csql: {
        SharedQModel m;
        m.main_coefs = vecs(j.at("main_coefs"));
        m.shared_psi = vec(j.at("psi"));
        const auto& d = j.at("diagnostics");
        m.iterations = d.at("iterations").get<int>();
        m.converged = d.at("converged").get<bool>();
        m.epsilon = d.at("epsilon").get<double>();
        m.last_change = d.at("last_change").get<double>();
        m.feature_spec = spec;
        fitted.model = std::move(m);
        break;
      }
      case Method::csol: {
        SharedOModel m;
        m.psi = vec(j.at("psi"));
        const auto& d = j.at("diagnostics");
        m.smoothing_k = d.at("k").get<double>();
        m.l1_weight = d.at("l1_weight").get<double>();
        m.objective_at_solution = d.at("objective").get<double>();
        m.iterations = d.at("iterations").get<int>();
        m.converged = d.at("converged").get<bool>();
        m.feature_spec = spec;
        fitted.model = std::move(m);
        break;
      }
    }
    return fitted;
  } catch (const Json::exception& e) {
    throw DataError(std::string("malformed model file: ") + e.what());
  }
}

void save_model_file(const std::string& path, const FittedModel& model) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  save_model(out, model);
  if (!out) throw DataError("write failed for " + path);
}

FittedModel load_model_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  return load_model(in);
}

}  // namespace sdtr
