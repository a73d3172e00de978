#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "sdtr/random.hpp"

namespace sdtr {

// Binary treatment coded -1 / +1.
using Action = int;

// sgn with sgn(0) = +1.
inline Action sign_action(double score) { return score >= 0.0 ? 1 : -1; }

// A decision rule: (0-based stage, covariate vector) -> action.
using Regime = std::function<Action(std::size_t stage, const Eigen::VectorXd& covariates)>;

struct StageObservation {
  Eigen::VectorXd covariates;  // empty on non-informative stages
  Action action = 1;
  double reward = 0.0;  // Y_j, or U_j on the stage where censoring happens
  bool at_risk = true;  // Delta_j
  bool informative = true;
};

// One subject's stages as observed, before padding. A stage reward may be
// NaN when censor_time is supplied and censoring happens inside that stage.
struct RawStage {
  Eigen::VectorXd covariates;
  Action action = 1;
  double reward = 0.0;
  bool at_risk = true;
};

struct RawTrajectory {
  std::string id;
  std::vector<RawStage> stages;
  // When set, at_risk flags and the censored-stage reward are derived from
  // it instead of being read from the stages.
  std::optional<double> censor_time;
};

struct Trajectory {
  std::string id;
  std::vector<StageObservation> stages;  // exactly `horizon` entries
  std::size_t observed_length = 0;
  bool censored = false;
  std::optional<double> censor_time;

  std::size_t horizon() const { return stages.size(); }
  bool informative(std::size_t stage) const {
    return stage < stages.size() && stages[stage].informative;
  }
  // Sum of rewards over stages 0..stage inclusive.
  double cumulative_reward(std::size_t stage) const;
  double total_reward() const;
  // Informative and uncensored through the end of the stage.
  bool at_risk_row(std::size_t stage) const {
    return informative(stage) && stages[stage].at_risk;
  }
};

// Extends a raw trajectory to `horizon` stages and truncates cumulative
// reward at tau. Padded actions are drawn uniformly from `rng`.
Trajectory pad_and_truncate(const RawTrajectory& raw, double tau, std::size_t horizon,
                            Rng& rng);

struct FeatureSpec {
  std::vector<std::string> main_effect_features;  // H_{j0}
  std::vector<std::string> decision_features;     // H_{j1}
  bool include_intercept = true;

  // Intercept plus every covariate, for both feature sets.
  static FeatureSpec all_covariates(const std::vector<std::string>& names);
};

// FeatureSpec resolved against a covariate layout.
class FeatureMap {
 public:
  FeatureMap() = default;
  FeatureMap(const FeatureSpec& spec, const std::vector<std::string>& covariate_names);

  Eigen::Index main_dim() const { return static_cast<Eigen::Index>(main_.size()) + intercept_; }
  Eigen::Index decision_dim() const {
    return static_cast<Eigen::Index>(decision_.size()) + intercept_;
  }
  bool has_intercept() const { return intercept_ != 0; }

  Eigen::VectorXd main_features(const Eigen::VectorXd& covariates) const {
    return gather(main_, covariates);
  }
  Eigen::VectorXd decision_features(const Eigen::VectorXd& covariates) const {
    return gather(decision_, covariates);
  }

 private:
  Eigen::VectorXd gather(const std::vector<Eigen::Index>& idx, const Eigen::VectorXd& cov) const;

  std::vector<Eigen::Index> main_;
  std::vector<Eigen::Index> decision_;
  int intercept_ = 1;
  Eigen::Index covariate_count_ = 0;
};

struct CohortDataset {
  std::vector<Trajectory> trajectories;
  std::size_t horizon = 0;
  double tau = 0.0;
  std::vector<std::string> covariate_names;
  FeatureSpec feature_spec;
  std::uint64_t padding_seed = 0;

  std::size_t size() const { return trajectories.size(); }
  FeatureMap feature_map() const { return FeatureMap(feature_spec, covariate_names); }
  std::size_t covariate_index(const std::string& name) const;
  CohortDataset subset(std::span<const std::size_t> rows) const;
  // Throws DataError when a trajectory breaks a data-model invariant.
  void validate() const;
};

// (H_{j0}, H_{j1}) for an informative stage (0-based).
std::pair<Eigen::VectorXd, Eigen::VectorXd> build_features(const CohortDataset& cohort,
                                                            const Trajectory& traj,
                                                            std::size_t stage);

// H_{j0} and H_{j1} for every (subject, stage), computed once per cohort.
// Rows of non-informative stages are zero.
struct StageFeatures {
  std::vector<Eigen::MatrixXd> main;      // per stage: n x main_dim
  std::vector<Eigen::MatrixXd> decision;  // per stage: n x decision_dim

  static StageFeatures build(const CohortDataset& cohort);
  Eigen::Index main_dim() const { return main.empty() ? 0 : main.front().cols(); }
  Eigen::Index decision_dim() const { return decision.empty() ? 0 : decision.front().cols(); }
};

struct LoadOptions {
  char delimiter = ',';
  std::optional<std::size_t> horizon;  // default: largest stage index present
  std::optional<double> tau;           // default: largest total reward present
  std::uint64_t padding_seed = 0;
  std::optional<FeatureSpec> feature_spec;  // default: FeatureSpec::all_covariates
};

// Long format: id, stage, action, reward, at_risk, <covariates...>.
CohortDataset read_cohort(std::istream& in, const LoadOptions& options = {});
CohortDataset load_cohort(const std::string& path, const LoadOptions& options = {});
void write_cohort(std::ostream& out, const CohortDataset& cohort, char delimiter = ',');

}  // namespace sdtr
