#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include <Eigen/Dense>

#include "sdtr/numopt.hpp"
#include "sdtr/survival_weights.hpp"
#include "sdtr/trajectories.hpp"

namespace sdtr {

enum class PropensityVariant { stage_proportion, logistic, known };

inline constexpr double kPropensityClampLow = 0.01;
inline constexpr double kPropensityClampHigh = 0.99;

// pi_j(a; h_j). Estimated variants are clamped to [0.01, 0.99]; the known
// variant returns the supplied probabilities unchanged.
struct PropensityModel {
  PropensityVariant variant = PropensityVariant::stage_proportion;
  std::vector<double> stage_probability;         // P(A_j = +1), stage_proportion
  std::vector<Eigen::VectorXd> logistic_coefs;   // per stage, on H_{j1}
  std::function<double(const Trajectory&, std::size_t, Action)> known;

  double probability(const Trajectory& traj, std::size_t stage, Action action,
                     const Eigen::VectorXd& h_decision) const;
};

PropensityModel estimate_propensity(const CohortDataset& cohort, PropensityVariant variant);

// Per-subject U_T Delta_T / (prod_j pi(A_j; H_j) * S_C(U_T)), product over
// informative stages.
Eigen::VectorXd outcome_weights(const CohortDataset& cohort, const PropensityModel& propensity,
                                const CensoringModel& censoring);

// IPCW estimate of the value of `regime`.
double value_estimate(const CohortDataset& cohort, const Regime& regime,
                      const PropensityModel& propensity, const CensoringModel& censoring);

// Per-subject terms of value_estimate; their mean is the estimate.
Eigen::VectorXd value_contributions(const CohortDataset& cohort, const Regime& regime,
                                    const PropensityModel& propensity,
                                    const CensoringModel& censoring);

Regime shared_regime(const Eigen::VectorXd& psi, const FeatureMap& map);

// softmin_K(u) = -log(sum_j exp(-K u_j)) / K.
double softmin(const Eigen::VectorXd& u, double k);

// Smoothed surrogate of the negated IPCW value:
//   mean_i w_i log[1 + K^{-1} sum_j exp(-K A_ij psi^T H_ij1)].
// Minimizing it maximizes the smoothed value.
class SurrogateObjective {
 public:
  SurrogateObjective(const CohortDataset& cohort, const PropensityModel& propensity,
                     const CensoringModel& censoring, double k);
  // Precomputed subject weights, for callers that already have them.
  SurrogateObjective(const CohortDataset& cohort, Eigen::VectorXd weights, double k);

  double operator()(const Eigen::VectorXd& psi, Eigen::VectorXd& grad) const;
  double value(const Eigen::VectorXd& psi) const;

  Eigen::Index dim() const { return margins_.cols(); }
  const Eigen::VectorXd& weights() const { return weights_; }

 private:
  void build(const CohortDataset& cohort);

  Eigen::VectorXd weights_;
  Eigen::MatrixXd margins_;              // rows A_ij H_ij1 for informative (i, j)
  std::vector<Eigen::Index> offsets_;    // subject i owns rows [offsets_[i], offsets_[i+1])
  double k_;
};

double surrogate_objective(const Eigen::VectorXd& psi, const CohortDataset& cohort,
                           const PropensityModel& propensity, const CensoringModel& censoring,
                           double k);
Eigen::VectorXd surrogate_gradient(const Eigen::VectorXd& psi, const CohortDataset& cohort,
                                   const PropensityModel& propensity,
                                   const CensoringModel& censoring, double k);

struct SharedOOptions {
  double k = 1.0;
  double l1_weight = 0.0;
  // Relative to max(1, |objective at psi = 0|).
  double gradient_tolerance = 1e-8;
  int max_iterations = 1000;
  int history_size = 10;
};

struct SharedOModel {
  Eigen::VectorXd psi;
  double smoothing_k = 1.0;
  double l1_weight = 0.0;
  double objective_at_solution = 0.0;
  int iterations = 0;
  bool converged = false;
  FeatureSpec feature_spec;
};

SharedOModel fit_censored_shared_o(const CohortDataset& cohort, const PropensityModel& propensity,
                                   const CensoringModel& censoring,
                                   const SharedOOptions& options = {});

// How nuisance models (censoring, propensity) are refit on training data.
struct NuisanceOptions {
  CensoringVariant censoring = CensoringVariant::kaplan_meier;
  std::vector<std::string> censoring_regressors;
  double survival_floor = kDefaultSurvivalFloor;
  PropensityVariant propensity = PropensityVariant::stage_proportion;
};

struct SelectKResult {
  double k = 1.0;
  std::vector<double> grid;         // ascending
  std::vector<double> mean_values;  // mean holdout value per grid entry
};

// Cross-validated choice of K maximizing mean holdout value; ties go to
// the smaller K.
SelectKResult select_k(const CohortDataset& cohort, std::vector<double> k_grid, std::size_t folds,
                       std::uint64_t seed, const NuisanceOptions& nuisance = {},
                       const SharedOOptions& base = {});

}  // namespace sdtr
