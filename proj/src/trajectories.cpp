#include "sdtr/trajectories.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <unordered_map>

#include "sdtr/error.hpp"

namespace sdtr {

double Trajectory::cumulative_reward(std::size_t stage) const {
  double sum = 0.0;
  for (std::size_t k = 0; k <= stage && k < stages.size(); ++k) sum += stages[k].reward;
  return sum;
}

double Trajectory::total_reward() const {
  return stages.empty() ? 0.0 : cumulative_reward(stages.size() - 1);
}

Trajectory pad_and_truncate(const RawTrajectory& raw, double tau, std::size_t horizon,
                            Rng& rng) {
  if (horizon < 1) throw DataError("horizon must be at least 1");
  if (!(tau > 0.0)) throw DataError("tau must be positive");
  if (raw.stages.empty()) throw DataError("subject " + raw.id + " has no stages");
  if (raw.stages.size() > horizon) {
    throw DataError("subject " + raw.id + " has " + std::to_string(raw.stages.size()) +
                    " stages, horizon is " + std::to_string(horizon));
  }
  if (raw.censor_time && !(*raw.censor_time >= 0.0)) {
    throw DataError("subject " + raw.id + " has a negative censoring time");
  }
  if (!raw.censor_time) {
    for (std::size_t j = 0; j + 1 < raw.stages.size(); ++j) {
      if (!raw.stages[j].at_risk) {
        throw DataError("subject " + raw.id + ": stage " + std::to_string(j + 2) +
                        " follows a censored stage");
      }
    }
  }

  Trajectory out;
  out.id = raw.id;
  out.stages.reserve(horizon);

  double cum = 0.0;
  bool stop = false;  // later stages become non-informative
  bool last_at_risk = true;
  for (std::size_t j = 0; j < raw.stages.size() && !stop; ++j) {
    const RawStage& rs = raw.stages[j];
    StageObservation obs;
    obs.covariates = rs.covariates;
    obs.action = rs.action;
    obs.informative = true;
    if (rs.action != 1 && rs.action != -1) {
      throw DataError("subject " + raw.id + " stage " + std::to_string(j + 1) +
                      ": action must be -1 or +1");
    }

    double reward = rs.reward;
    bool at_risk = rs.at_risk;
    if (raw.censor_time) {
      const double c = *raw.censor_time;
      if (std::isnan(reward) || cum + reward > c) {
        reward = std::max(c - cum, 0.0);
        at_risk = false;
      } else {
        at_risk = true;
      }
    }
    if (std::isnan(reward) || reward < 0.0) {
      throw DataError("subject " + raw.id + " stage " + std::to_string(j + 1) +
                      ": reward must be a nonnegative number");
    }
    if (cum + reward >= tau) {
      // Observed past tau means the subject is known to be at risk at tau.
      if (cum + reward > tau) at_risk = true;
      reward = std::max(tau - cum, 0.0);
      stop = true;
    }
    if (!at_risk) stop = true;

    obs.reward = reward;
    obs.at_risk = at_risk;
    cum += reward;
    last_at_risk = at_risk;
    out.stages.push_back(std::move(obs));
  }

  out.observed_length = out.stages.size();
  out.censored = !last_at_risk;
  if (out.censored) out.censor_time = cum;

  std::bernoulli_distribution coin(0.5);
  while (out.stages.size() < horizon) {
    StageObservation pad;
    pad.action = coin(rng) ? 1 : -1;
    pad.reward = 0.0;
    pad.at_risk = last_at_risk;
    pad.informative = false;
    out.stages.push_back(std::move(pad));
  }
  return out;
}

FeatureSpec FeatureSpec::all_covariates(const std::vector<std::string>& names) {
  return FeatureSpec{names, names, true};
}

FeatureMap::FeatureMap(const FeatureSpec& spec, const std::vector<std::string>& covariate_names)
    : intercept_(spec.include_intercept ? 1 : 0),
      covariate_count_(static_cast<Eigen::Index>(covariate_names.size())) {
  if (spec.decision_features.empty()) {
    throw DataError("feature spec has no decision features");
  }
  auto resolve = [&](const std::vector<std::string>& names) {
    std::vector<Eigen::Index> idx;
    for (const auto& name : names) {
      auto it = std::find(covariate_names.begin(), covariate_names.end(), name);
      if (it == covariate_names.end()) throw DataError("unknown feature '" + name + "'");
      idx.push_back(it - covariate_names.begin());
    }
    return idx;
  };
  main_ = resolve(spec.main_effect_features);
  decision_ = resolve(spec.decision_features);
}

Eigen::VectorXd FeatureMap::gather(const std::vector<Eigen::Index>& idx,
                                   const Eigen::VectorXd& cov) const {
  if (cov.size() != covariate_count_) {
    throw DataError("covariate vector has " + std::to_string(cov.size()) + " entries, expected " +
                    std::to_string(covariate_count_));
  }
  Eigen::VectorXd h(static_cast<Eigen::Index>(idx.size()) + intercept_);
  if (intercept_) h(0) = 1.0;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    h(static_cast<Eigen::Index>(k) + intercept_) = cov(idx[k]);
  }
  return h;
}

std::size_t CohortDataset::covariate_index(const std::string& name) const {
  auto it = std::find(covariate_names.begin(), covariate_names.end(), name);
  if (it == covariate_names.end()) throw DataError("unknown covariate '" + name + "'");
  return static_cast<std::size_t>(it - covariate_names.begin());
}

CohortDataset CohortDataset::subset(std::span<const std::size_t> rows) const {
  CohortDataset out;
  out.horizon = horizon;
  out.tau = tau;
  out.covariate_names = covariate_names;
  out.feature_spec = feature_spec;
  out.padding_seed = padding_seed;
  out.trajectories.reserve(rows.size());
  for (std::size_t r : rows) out.trajectories.push_back(trajectories.at(r));
  return out;
}

void CohortDataset::validate() const {
  const auto p = static_cast<Eigen::Index>(covariate_names.size());
  for (const auto& t : trajectories) {
    if (t.horizon() != horizon) throw DataError("subject " + t.id + ": horizon mismatch");
    double cum = 0.0;
    bool prev_at_risk = true;
    for (std::size_t j = 0; j < t.stages.size(); ++j) {
      const auto& s = t.stages[j];
      if (s.reward < 0.0) throw DataError("subject " + t.id + ": negative reward");
      if (s.at_risk && !prev_at_risk) {
        throw DataError("subject " + t.id + ": at-risk flags increase at stage " +
                        std::to_string(j + 1));
      }
      if (!s.informative && s.reward != 0.0) {
        throw DataError("subject " + t.id + ": reward on a non-informative stage");
      }
      if (s.informative != (j < t.observed_length)) {
        throw DataError("subject " + t.id + ": informative stages are not a prefix");
      }
      if (s.informative && s.covariates.size() != p) {
        throw DataError("subject " + t.id + ": covariate count mismatch at stage " +
                        std::to_string(j + 1));
      }
      prev_at_risk = s.at_risk;
      cum += s.reward;
    }
    if (cum > tau * (1.0 + 1e-12)) throw DataError("subject " + t.id + ": total reward exceeds tau");
  }
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> build_features(const CohortDataset& cohort,
                                                            const Trajectory& traj,
                                                            std::size_t stage) {
  if (stage >= traj.horizon()) {
    throw DataError("stage " + std::to_string(stage + 1) + " is outside the horizon");
  }
  if (!traj.informative(stage)) {
    throw DataError("subject " + traj.id + " stage " + std::to_string(stage + 1) +
                    " is non-informative");
  }
  const FeatureMap map = cohort.feature_map();
  const auto& cov = traj.stages[stage].covariates;
  return {map.main_features(cov), map.decision_features(cov)};
}

StageFeatures StageFeatures::build(const CohortDataset& cohort) {
  const FeatureMap map = cohort.feature_map();
  const auto n = static_cast<Eigen::Index>(cohort.size());
  StageFeatures f;
  for (std::size_t j = 0; j < cohort.horizon; ++j) {
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, map.main_dim());
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, map.decision_dim());
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& tr = cohort.trajectories[static_cast<std::size_t>(i)];
      if (!tr.informative(j)) continue;
      m.row(i) = map.main_features(tr.stages[j].covariates).transpose();
      d.row(i) = map.decision_features(tr.stages[j].covariates).transpose();
    }
    f.main.push_back(std::move(m));
    f.decision.push_back(std::move(d));
  }
  return f;
}

namespace {

std::vector<std::string> split(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, delim)) out.push_back(field);
  if (!line.empty() && line.back() == delim) out.emplace_back();
  return out;
}

std::string trim(std::string s) {
  const char* ws = " \t\r";
  s.erase(0, s.find_first_not_of(ws));
  s.erase(s.find_last_not_of(ws) + 1);
  return s;
}

double parse_double(const std::string& s, std::size_t line, const char* column) {
  try {
    std::size_t used = 0;
    double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError("line " + std::to_string(line) + ": cannot parse " + column + " '" + s + "'");
  }
}

long parse_long(const std::string& s, std::size_t line, const char* column) {
  double v = parse_double(s, line, column);
  if (v != std::floor(v)) {
    throw DataError("line " + std::to_string(line) + ": " + column + " must be an integer");
  }
  return static_cast<long>(v);
}

struct PendingSubject {
  RawTrajectory raw;
  long last_stage = 0;
  bool padding_seen = false;
};

}  // namespace

CohortDataset read_cohort(std::istream& in, const LoadOptions& options) {
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw DataError("cohort file is empty");
  ++line_no;
  auto header = split(line, options.delimiter);
  for (auto& h : header) h = trim(h);
  const std::vector<std::string> required = {"id", "stage", "action", "reward", "at_risk"};
  if (header.size() < required.size() ||
      !std::equal(required.begin(), required.end(), header.begin())) {
    throw DataError("header must start with id,stage,action,reward,at_risk");
  }
  CohortDataset cohort;
  cohort.covariate_names.assign(header.begin() + 5, header.end());
  const auto p = static_cast<Eigen::Index>(cohort.covariate_names.size());

  std::vector<PendingSubject> subjects;
  std::unordered_map<std::string, std::size_t> index_of;
  long max_stage = 0;

  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto fields = split(line, options.delimiter);
    if (fields.size() != header.size()) {
      throw DataError("line " + std::to_string(line_no) + ": expected " +
                      std::to_string(header.size()) + " fields, found " +
                      std::to_string(fields.size()));
    }
    for (auto& f : fields) f = trim(f);
    const std::string& id = fields[0];
    const long stage = parse_long(fields[1], line_no, "stage");
    const long action = parse_long(fields[2], line_no, "action");
    const double reward = parse_double(fields[3], line_no, "reward");
    const long at_risk = parse_long(fields[4], line_no, "at_risk");
    if (action != 1 && action != -1) {
      throw DataError("line " + std::to_string(line_no) + ": action " + fields[2] +
                      " is not -1 or +1 (row: " + line + ")");
    }
    if (at_risk != 0 && at_risk != 1) {
      throw DataError("line " + std::to_string(line_no) + ": at_risk must be 0 or 1");
    }

    auto [it, inserted] = index_of.emplace(id, subjects.size());
    if (inserted) {
      subjects.emplace_back();
      subjects.back().raw.id = id;
    }
    PendingSubject& subj = subjects[it->second];
    if (stage <= subj.last_stage) {
      throw DataError("line " + std::to_string(line_no) + ": duplicate or non-monotone stage " +
                      std::to_string(stage) + " for subject " + id);
    }
    if (stage != subj.last_stage + 1) {
      throw DataError("line " + std::to_string(line_no) + ": subject " + id + " jumps from stage " +
                      std::to_string(subj.last_stage) + " to " + std::to_string(stage));
    }
    subj.last_stage = stage;
    max_stage = std::max(max_stage, stage);

    std::size_t empty = 0;
    for (Eigen::Index k = 0; k < p; ++k) empty += fields[5 + k].empty() ? 1 : 0;
    if (empty == static_cast<std::size_t>(p) && p > 0) {
      // Padding row.
      if (reward != 0.0) {
        throw DataError("line " + std::to_string(line_no) + ": non-informative stage with reward");
      }
      subj.padding_seen = true;
      continue;
    }
    if (empty != 0) {
      throw DataError("line " + std::to_string(line_no) + ": missing covariate on an informative stage");
    }
    if (subj.padding_seen) {
      throw DataError("line " + std::to_string(line_no) + ": informative stage after padding");
    }
    RawStage rs;
    rs.covariates.resize(p);
    for (Eigen::Index k = 0; k < p; ++k) {
      rs.covariates(k) = parse_double(fields[5 + k], line_no, "covariate");
    }
    rs.action = static_cast<Action>(action);
    rs.reward = reward;
    rs.at_risk = at_risk == 1;
    subj.raw.stages.push_back(std::move(rs));
  }
  if (subjects.empty()) throw DataError("cohort file has no rows");

  cohort.horizon = options.horizon.value_or(static_cast<std::size_t>(max_stage));
  if (options.tau) {
    cohort.tau = *options.tau;
  } else {
    double tau = 0.0;
    for (const auto& s : subjects) {
      double total = 0.0;
      for (const auto& st : s.raw.stages) total += st.reward;
      tau = std::max(tau, total);
    }
    cohort.tau = tau > 0.0 ? tau : 1.0;
  }
  cohort.padding_seed = options.padding_seed;
  cohort.feature_spec =
      options.feature_spec.value_or(FeatureSpec::all_covariates(cohort.covariate_names));
  // Resolving once surfaces unknown feature names at load time.
  (void)cohort.feature_map();

  cohort.trajectories.reserve(subjects.size());
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    Rng rng = substream(cohort.padding_seed, i);
    cohort.trajectories.push_back(pad_and_truncate(subjects[i].raw, cohort.tau, cohort.horizon, rng));
  }
  cohort.validate();
  return cohort;
}

CohortDataset load_cohort(const std::string& path, const LoadOptions& options) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  return read_cohort(in, options);
}

void write_cohort(std::ostream& out, const CohortDataset& cohort, char delimiter) {
  out << "id" << delimiter << "stage" << delimiter << "action" << delimiter << "reward"
      << delimiter << "at_risk";
  for (const auto& n : cohort.covariate_names) out << delimiter << n;
  out << '\n';
  out << std::setprecision(17);
  for (const auto& t : cohort.trajectories) {
    for (std::size_t j = 0; j < t.stages.size(); ++j) {
      const auto& s = t.stages[j];
      out << t.id << delimiter << j + 1 << delimiter << s.action << delimiter << s.reward
          << delimiter << (s.at_risk ? 1 : 0);
      for (std::size_t k = 0; k < cohort.covariate_names.size(); ++k) {
        out << delimiter;
        if (s.informative) out << s.covariates(static_cast<Eigen::Index>(k));
      }
      out << '\n';
    }
  }
}

}  // namespace sdtr
