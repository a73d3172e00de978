#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "sdtr/random.hpp"
#include "sdtr/shared_o.hpp"
#include "sdtr/trajectories.hpp"

namespace sdtr::sim {

// Augmentation order: metformin, sulfonylurea, glitazone, insulin.
inline constexpr std::size_t kDrugCount = 4;
inline constexpr double kInitialMu = 7.7;

struct SimConfig {
  std::size_t horizon = 10;
  int scenario = 1;
  double censor_upper = 25.0;  // infinity disables censoring
  double stage_length = 1.0;
  std::array<double, kDrugCount> treatment_effects{0.14, 0.20, 0.12, 0.14};
  std::array<double, kDrugCount> discontinuation_rates{0.20, 0.20, 0.20, 0.35};
  std::uint64_t seed = 0;

  void validate() const;  // throws DataError
};

struct PatientState {
  double a1c = 0.0;
  double bp = 0.0;
  double weight = 0.0;
  int n_augmented = 0;        // N_{j-1} while stage j is being decided
  bool discontinued = false;  // L_j
  double mu = kInitialMu;
  bool alive = true;
  double elapsed = 0.0;

  double a1c_prev = 0.0;           // A1c_{j-1}; the baseline value at stage 1
  bool discontinued_prev = false;  // L_{j-1}
  int last_drug = -1;              // drug added by the previous action, -1 if none
};

// Covariate layout used for simulated cohorts.
const std::vector<std::string>& covariate_names();  // a1c, bp, weight, discontinued, n_prev
Eigen::VectorXd covariates(const PatientState& state);

PatientState draw_baseline(Rng& rng);

// P(A = +1) under the behavior policy.
double behavior_augment_probability(double a1c, double a1c_prev, int n_prev, bool discontinued_prev);
Action behavior_action(const PatientState& state, Rng& rng);

// Advances to the next stage: discontinuation, mu, then A1c/BP/weight.
PatientState transition(const SimConfig& config, const PatientState& state, Rng& rng);

// Records the action's effect on the augmentation count.
void apply_action(PatientState& state, Action action);

double regret(const PatientState& state, Action action, int scenario);
Action optimal_action(const PatientState& state);
// The optimal rule on the simulated covariate layout.
Regime optimal_regime();

struct StageDraw {
  double reward = 0.0;
  bool failed = false;
};
StageDraw stage_survival(const SimConfig& config, const PatientState& state, Action action,
                         Rng& rng);

// One uncensored patient path.
struct PatientPath {
  std::vector<Eigen::VectorXd> covariates;
  std::vector<Action> actions;
  std::vector<double> rewards;
  bool failed = false;
  double total() const;
};

// `regime == nullptr` follows the behavior policy.
PatientPath simulate_patient(const SimConfig& config, const Regime* regime, Rng& rng);

struct SimulatedCohort {
  CohortDataset cohort;
  std::vector<double> censor_times;
  std::vector<double> latent_totals;  // truncated survival before censoring
};

SimulatedCohort simulate(const SimConfig& config, std::size_t n, Rng& rng);
CohortDataset simulate_cohort(const SimConfig& config, std::size_t n, Rng& rng);

// Mean truncated total reward of m uncensored patients following `regime`.
double true_value(const Regime& regime, const SimConfig& config, std::size_t m, Rng& rng);
double behavior_value(const SimConfig& config, std::size_t m, Rng& rng);

// Exact behavior-policy probabilities of the observed actions, recovered
// from the simulated covariate layout.
PropensityModel behavior_propensity(const CohortDataset& cohort);

}  // namespace sdtr::sim
