#pragma once

#include <cstddef>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "sdtr/trajectories.hpp"

namespace sdtr {

inline constexpr double kDefaultSurvivalFloor = 0.05;

// Right-continuous step function starting at 1.
struct SurvivalCurve {
  std::vector<double> times;          // increasing
  std::vector<double> probabilities;  // non-increasing, value from times[k] on
  double floor = kDefaultSurvivalFloor;

  double value(double t) const;  // unfloored
  double at(double t) const;     // floored
  bool empty() const { return times.empty(); }
};

// Product-limit estimate; `event[i]` marks observations where the tracked
// event happened (for censoring curves that is a censoring event).
SurvivalCurve fit_kaplan_meier(const std::vector<double>& times, const std::vector<bool>& event,
                               double floor = kDefaultSurvivalFloor);

struct CoxCensoringFit {
  Eigen::VectorXd coefficients;
  std::vector<double> knot_times;         // censoring-event times
  std::vector<double> cumulative_hazard;  // Breslow Lambda_0 at each knot
  std::vector<std::string> regressor_names;
  int iterations = 0;
  double gradient_norm = 0.0;
  std::vector<std::string> warnings;

  double baseline_cumulative_hazard(double t) const;
};

// Log partial likelihood of a proportional hazards model with Breslow ties.
class CoxPartialLikelihood {
 public:
  CoxPartialLikelihood(std::vector<double> times, std::vector<bool> event, Eigen::MatrixXd z);

  double value(const Eigen::VectorXd& beta) const;
  Eigen::VectorXd gradient(const Eigen::VectorXd& beta) const;
  // Value, gradient and Hessian in one sweep.
  double evaluate(const Eigen::VectorXd& beta, Eigen::VectorXd* grad, Eigen::MatrixXd* hess) const;

  std::size_t size() const { return times_.size(); }
  const Eigen::MatrixXd& covariates() const { return z_; }
  // Breslow cumulative baseline hazard at each distinct event time.
  void breslow(const Eigen::VectorXd& beta, std::vector<double>& knots,
               std::vector<double>& cum_hazard) const;

 private:
  std::vector<double> times_;
  std::vector<bool> event_;
  Eigen::MatrixXd z_;
  std::vector<std::size_t> order_;  // by decreasing time
};

struct CoxOptions {
  double gradient_tolerance = 1e-8;
  int max_iterations = 100;
};

CoxCensoringFit fit_cox(const std::vector<double>& times, const std::vector<bool>& event,
                        const Eigen::MatrixXd& z, std::vector<std::string> names,
                        const CoxOptions& options = {});

// Cox model for the censoring time on baseline (stage 1) regressors.
CoxCensoringFit fit_cox_censoring(const CohortDataset& cohort,
                                  const std::vector<std::string>& regressors,
                                  const CoxOptions& options = {});

// Known censoring law C ~ Uniform(0, upper).
struct UniformCensoring {
  double upper = 1.0;
};

// S_C identically 1.
struct NoCensoring {};

enum class CensoringVariant { kaplan_meier, cox };

struct CensoringModel {
  std::variant<SurvivalCurve, CoxCensoringFit, UniformCensoring, NoCensoring> payload =
      NoCensoring{};
  double floor = kDefaultSurvivalFloor;

  const std::vector<std::string>& regressors() const;
};

CensoringModel fit_censoring(const CohortDataset& cohort, CensoringVariant variant,
                             const std::vector<std::string>& regressors = {},
                             double floor = kDefaultSurvivalFloor);

// Per-subject observed follow-up and censoring-event flags.
void censoring_data(const CohortDataset& cohort, std::vector<double>& times,
                    std::vector<bool>& censoring_event);

double survival_at(const CensoringModel& model, double t, const Eigen::VectorXd& regressors);

// Evaluates S_C for trajectories of one cohort, with regressor columns
// resolved once.
class CensoringEvaluator {
 public:
  CensoringEvaluator(const CensoringModel& model, const CohortDataset& cohort);
  double operator()(const Trajectory& traj, double t) const;

 private:
  const CensoringModel* model_;
  std::vector<std::size_t> columns_;
};

// V_j = Delta_j / max(S_C(sum_{k<=j} Y_k), floor); 0 on non-informative or
// censored stages. `stage` is 0-based.
Eigen::VectorXd ipcw_stage_weights(const CohortDataset& cohort, const CensoringModel& model,
                                   std::size_t stage);

}  // namespace sdtr
