#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sdtr/random.hpp"
#include "sdtr/trajectories.hpp"

namespace testutil {

inline sdtr::RawStage stage(std::initializer_list<double> x, sdtr::Action a, double reward,
                            bool at_risk = true) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(x.size()));
  Eigen::Index k = 0;
  for (double e : x) v(k++) = e;
  return {v, a, reward, at_risk};
}

inline sdtr::CohortDataset make_cohort(const std::vector<sdtr::RawTrajectory>& raws,
                                       std::vector<std::string> names, double tau,
                                       std::size_t horizon, std::uint64_t seed = 11) {
  sdtr::CohortDataset c;
  c.horizon = horizon;
  c.tau = tau;
  c.covariate_names = std::move(names);
  c.feature_spec = sdtr::FeatureSpec::all_covariates(c.covariate_names);
  c.padding_seed = seed;
  for (std::size_t i = 0; i < raws.size(); ++i) {
    sdtr::Rng rng = sdtr::substream(seed, i);
    c.trajectories.push_back(sdtr::pad_and_truncate(raws[i], tau, horizon, rng));
  }
  c.validate();
  return c;
}

inline double relative_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return (a - b).norm() / std::max(b.norm(), 1e-12);
}

}  // namespace testutil
