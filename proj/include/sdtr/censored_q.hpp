#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include <Eigen/Dense>

#include "sdtr/survival_weights.hpp"
#include "sdtr/trajectories.hpp"

namespace sdtr {

// Q_j(H_j, A_j) = beta_j^T H_{j0} + (psi_j^T H_{j1}) A_j, one (beta_j, psi_j)
// per stage.
struct StagewiseQModel {
  std::vector<Eigen::VectorXd> main_coefs;      // beta_j
  std::vector<Eigen::VectorXd> decision_coefs;  // psi_j
  FeatureSpec feature_spec;
};

// max_a Q_{j+1}(H_{j+1}, a) for one subject, or 0 when stage j+1 is
// non-informative.
inline double optimal_next_value(const Eigen::VectorXd& h_main, const Eigen::VectorXd& h_decision,
                                 const Eigen::VectorXd& beta, const Eigen::VectorXd& psi) {
  return beta.dot(h_main) + std::abs(psi.dot(h_decision));
}

// Backward recursion of inverse-probability-of-censoring weighted least
// squares, stage T down to stage 1.
StagewiseQModel fit_censored_q(const CohortDataset& cohort, const CensoringModel& censoring);

Action recommend_stagewise(const StagewiseQModel& model, const Eigen::VectorXd& h_decision,
                           std::size_t stage);

}  // namespace sdtr
