#include "sdtr/sim_diabetes.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "sdtr/error.hpp"

namespace sdtr::sim {

namespace {

constexpr double kNoiseSd = 0.5;  // sigma_eps
const double kShrink = std::sqrt(1.0 + kNoiseSd * kNoiseSd);
constexpr int kMaxAugment = static_cast<int>(kDrugCount);

double expit(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double normal(Rng& rng, double mean, double sd) {
  return std::normal_distribution<double>(mean, sd)(rng);
}

double uniform(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

}  // namespace

void SimConfig::validate() const {
  if (horizon < 1) throw DataError("horizon must be at least 1");
  if (scenario != 1 && scenario != 2) throw DataError("scenario must be 1 or 2");
  if (!(censor_upper > 0)) throw DataError("censoring upper bound must be positive");
  if (!(stage_length > 0) || !std::isfinite(stage_length)) {
    throw DataError("stage length must be positive and finite");
  }
  for (double e : treatment_effects)
    if (!(e > 0 && e < 1)) throw DataError("treatment effects must lie in (0, 1)");
  for (double r : discontinuation_rates)
    if (!(r >= 0 && r <= 1)) throw DataError("discontinuation rates must lie in [0, 1]");
}

const std::vector<std::string>& covariate_names() {
  static const std::vector<std::string> names{"a1c", "bp", "weight", "discontinued", "n_prev"};
  return names;
}

Eigen::VectorXd covariates(const PatientState& s) {
  Eigen::VectorXd x(5);
  x << s.a1c, s.bp, s.weight, s.discontinued ? 1.0 : 0.0, static_cast<double>(s.n_augmented);
  return x;
}

PatientState draw_baseline(Rng& rng) {
  PatientState s;
  s.bp = normal(rng, 12.0, 1.0);
  s.weight = normal(rng, 140.0, 1.0);
  s.a1c = normal(rng, 7.7, 1.0);
  s.a1c_prev = s.a1c;
  return s;
}

double behavior_augment_probability(double a1c, double a1c_prev, int n_prev,
                                    bool discontinued_prev) {
  if (n_prev >= kMaxAugment || a1c < 7.0) return 0.0;
  if (a1c > 8.0) return 1.0;
  const double p_continue =
      expit(-0.2 * a1c_prev + 0.5 * n_prev + 0.5 * (discontinued_prev ? 1.0 : 0.0));
  return 1.0 - p_continue;
}

Action behavior_action(const PatientState& s, Rng& rng) {
  const double p =
      behavior_augment_probability(s.a1c, s.a1c_prev, s.n_augmented, s.discontinued_prev);
  if (p <= 0.0) return -1;
  if (p >= 1.0) return 1;
  return uniform(rng) < p ? 1 : -1;
}

PatientState transition(const SimConfig& config, const PatientState& s, Rng& rng) {
  PatientState next = s;
  next.a1c_prev = s.a1c;
  next.discontinued_prev = s.discontinued;
  next.discontinued = false;
  if (s.last_drug >= 0) {
    const auto drug = static_cast<std::size_t>(s.last_drug);
    next.discontinued = uniform(rng) < config.discontinuation_rates[drug];
    if (s.a1c > 7.0 && !next.discontinued) next.mu = s.mu * (1.0 - config.treatment_effects[drug]);
  }
  next.a1c = (s.a1c - s.mu + normal(rng, 0.0, kNoiseSd)) / kShrink + next.mu;
  next.bp = (s.bp + normal(rng, 0.0, kNoiseSd)) / kShrink;
  next.weight = (s.weight + normal(rng, 0.0, kNoiseSd)) / kShrink;
  next.last_drug = -1;
  next.elapsed = s.elapsed + config.stage_length;
  return next;
}

void apply_action(PatientState& s, Action action) {
  s.last_drug = -1;
  if (action > 0 && s.n_augmented < kMaxAugment) {
    s.last_drug = s.n_augmented;
    ++s.n_augmented;
  }
}

double regret(const PatientState& s, Action action, int scenario) {
  const double score = s.a1c + 0.5 * s.n_augmented - 10.0;
  const double mismatch = (action > 0 ? 1.0 : 0.0) - (score >= 0 ? 1.0 : 0.0);
  const double scale = scenario == 1 ? std::abs(score) : std::abs(s.a1c - 7.0);
  return 0.5 * scale * mismatch * mismatch;
}

Action optimal_action(const PatientState& s) {
  return sign_action(s.a1c + 0.5 * s.n_augmented - 10.0);
}

Regime optimal_regime() {
  return [](std::size_t, const Eigen::VectorXd& x) { return sign_action(x(0) + 0.5 * x(4) - 10.0); };
}

StageDraw stage_survival(const SimConfig& config, const PatientState& s, Action action, Rng& rng) {
  const double y = std::exp(2.5 - regret(s, action, config.scenario) + normal(rng, 0.0, 1.0));
  return {std::min(y, config.stage_length), y < config.stage_length};
}

double PatientPath::total() const {
  double t = 0.0;
  for (double r : rewards) t += r;
  return t;
}

PatientPath simulate_patient(const SimConfig& config, const Regime* regime, Rng& rng) {
  PatientPath path;
  PatientState state = draw_baseline(rng);
  for (std::size_t j = 0; j < config.horizon; ++j) {
    if (j > 0) state = transition(config, state, rng);
    Eigen::VectorXd x = covariates(state);
    const Action a = regime ? (*regime)(j, x) : behavior_action(state, rng);
    const StageDraw draw = stage_survival(config, state, a, rng);
    path.covariates.push_back(std::move(x));
    path.actions.push_back(a);
    path.rewards.push_back(draw.reward);
    apply_action(state, a);
    if (draw.failed) {
      path.failed = true;
      break;
    }
  }
  return path;
}

SimulatedCohort simulate(const SimConfig& config, std::size_t n, Rng& rng) {
  config.validate();
  if (n == 0) throw DataError("cohort size must be positive");
  const std::uint64_t base = rng();
  SimulatedCohort out;
  CohortDataset& cohort = out.cohort;
  cohort.horizon = config.horizon;
  cohort.tau = static_cast<double>(config.horizon) * config.stage_length;
  cohort.covariate_names = covariate_names();
  cohort.feature_spec = FeatureSpec::all_covariates(cohort.covariate_names);
  cohort.padding_seed = base;
  cohort.trajectories.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng prng = substream(base, i);
    const PatientPath path = simulate_patient(config, nullptr, prng);
    const double c = std::isfinite(config.censor_upper)
                         ? std::uniform_real_distribution<double>(0.0, config.censor_upper)(prng)
                         : std::numeric_limits<double>::infinity();
    RawTrajectory raw;
    raw.id = std::to_string(i + 1);
    double cum = 0.0;
    for (std::size_t j = 0; j < path.rewards.size(); ++j) {
      raw.stages.push_back({path.covariates[j], path.actions[j], path.rewards[j], true});
      cum += path.rewards[j];
      if (cum > c) break;
    }
    if (std::isfinite(c)) raw.censor_time = c;
    Rng pad = substream(base ^ 0x5bd1e995ULL, i);
    cohort.trajectories.push_back(pad_and_truncate(raw, cohort.tau, cohort.horizon, pad));
    out.censor_times.push_back(c);
    out.latent_totals.push_back(std::min(path.total(), cohort.tau));
  }
  return out;
}

CohortDataset simulate_cohort(const SimConfig& config, std::size_t n, Rng& rng) {
  return simulate(config, n, rng).cohort;
}

double true_value(const Regime& regime, const SimConfig& config, std::size_t m, Rng& rng) {
  config.validate();
  if (m == 0) throw DataError("validation size must be positive");
  const std::uint64_t base = rng();
  double sum = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    Rng prng = substream(base, i);
    sum += simulate_patient(config, &regime, prng).total();
  }
  return sum / static_cast<double>(m);
}

double behavior_value(const SimConfig& config, std::size_t m, Rng& rng) {
  config.validate();
  if (m == 0) throw DataError("validation size must be positive");
  const std::uint64_t base = rng();
  double sum = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    Rng prng = substream(base, i);
    sum += simulate_patient(config, nullptr, prng).total();
  }
  return sum / static_cast<double>(m);
}

PropensityModel behavior_propensity(const CohortDataset& cohort) {
  const std::size_t a1c = cohort.covariate_index("a1c");
  const std::size_t disc = cohort.covariate_index("discontinued");
  const std::size_t nprev = cohort.covariate_index("n_prev");
  PropensityModel model;
  model.variant = PropensityVariant::known;
  model.known = [=](const Trajectory& tr, std::size_t j, Action action) {
    const auto& x = tr.stages[j].covariates;
    const auto at = [](const Eigen::VectorXd& v, std::size_t k) { return v(static_cast<Eigen::Index>(k)); };
    const double a1c_prev = j > 0 ? at(tr.stages[j - 1].covariates, a1c) : at(x, a1c);
    const bool disc_prev = j > 0 && at(tr.stages[j - 1].covariates, disc) > 0.5;
    const double p = behavior_augment_probability(at(x, a1c), a1c_prev,
                                                  static_cast<int>(std::lround(at(x, nprev))), disc_prev);
    return action > 0 ? p : 1.0 - p;
  };
  return model;
}

}  // namespace sdtr::sim
