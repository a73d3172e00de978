#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "sdtr/censored_q.hpp"
#include "sdtr/survival_weights.hpp"
#include "sdtr/trajectories.hpp"

namespace sdtr {

// Stage-specific main effects with one decision vector shared by all stages.
struct SharedQTheta {
  std::vector<Eigen::VectorXd> main_coefs;  // beta_1..beta_T
  Eigen::VectorXd psi;

  // (beta_1, ..., beta_T, psi) stacked in that order.
  Eigen::VectorXd stacked() const;
  static SharedQTheta from_stacked(const Eigen::VectorXd& theta, std::size_t horizon,
                                   Eigen::Index main_dim);
};

struct SharedQModel {
  std::vector<Eigen::VectorXd> main_coefs;
  Eigen::VectorXd shared_psi;
  int iterations = 0;
  bool converged = false;
  double epsilon = 1e-6;
  double last_change = 0.0;  // Euclidean norm of the final parameter update
  FeatureSpec feature_spec;
};

// Z, V and U~(theta) of the stacked weighted least-squares problem. One row
// per uncensored at-risk (subject, stage); the stage-j row holds H_{j0} in
// column block j and H_{j1} A_j in the trailing shared block.
struct StackedSystem {
  Eigen::MatrixXd design;
  Eigen::VectorXd weights;
  Eigen::VectorXd response;
  std::vector<std::pair<std::size_t, std::size_t>> rows;  // (subject, stage)
};

// psi^(A) = mean of the stagewise psi_j; beta_j copied from the baseline.
SharedQTheta initialize_theta(const StagewiseQModel& baseline);

StackedSystem build_stacked_system(const CohortDataset& cohort, const SharedQTheta& theta,
                                   const CensoringModel& censoring);

struct SharedQOptions {
  double epsilon = 1e-6;
  int max_iterations = 200;
  bool zero_init = false;  // start from theta = 0 instead of the censored-Q fit
  int damping_patience = 5;
};

SharedQModel fit_censored_shared_q(const CohortDataset& cohort, const CensoringModel& censoring,
                                   const SharedQOptions& options = {});

Action recommend_shared(const Eigen::VectorXd& psi, const Eigen::VectorXd& h_decision);

}  // namespace sdtr
