#include "sdtr/shared_q.hpp"

#include <algorithm>
#include <limits>
#include <optional>

#include "sdtr/error.hpp"
#include "sdtr/numopt.hpp"

namespace sdtr {

Eigen::VectorXd SharedQTheta::stacked() const {
  Eigen::Index total = psi.size();
  for (const auto& b : main_coefs) total += b.size();
  Eigen::VectorXd out(total);
  Eigen::Index at = 0;
  for (const auto& b : main_coefs) {
    out.segment(at, b.size()) = b;
    at += b.size();
  }
  out.tail(psi.size()) = psi;
  return out;
}

SharedQTheta SharedQTheta::from_stacked(const Eigen::VectorXd& theta, std::size_t horizon,
                                        Eigen::Index main_dim) {
  SharedQTheta out;
  const Eigen::Index block = static_cast<Eigen::Index>(horizon) * main_dim;
  if (theta.size() <= block) throw DataError("stacked parameter vector too short");
  for (std::size_t j = 0; j < horizon; ++j) {
    out.main_coefs.push_back(theta.segment(static_cast<Eigen::Index>(j) * main_dim, main_dim));
  }
  out.psi = theta.tail(theta.size() - block);
  return out;
}

SharedQTheta initialize_theta(const StagewiseQModel& baseline) {
  if (baseline.decision_coefs.empty()) throw DataError("baseline model has no stages");
  SharedQTheta theta;
  theta.main_coefs = baseline.main_coefs;
  theta.psi = Eigen::VectorXd::Zero(baseline.decision_coefs.front().size());
  for (const auto& psi : baseline.decision_coefs) theta.psi += psi;
  theta.psi /= static_cast<double>(baseline.decision_coefs.size());
  return theta;
}

namespace {

// Design and weights are fixed across iterations; only responses move.
class StackedAssembler {
 public:
  StackedAssembler(const CohortDataset& cohort, const CensoringModel& censoring)
      : cohort_(cohort), feats_(StageFeatures::build(cohort)) {
    const std::size_t T = cohort.horizon;
    p0_ = feats_.main_dim();
    p1_ = feats_.decision_dim();
    std::vector<Eigen::VectorXd> stage_w;
    for (std::size_t j = 0; j < T; ++j) stage_w.push_back(ipcw_stage_weights(cohort, censoring, j));
    for (std::size_t j = 0; j < T; ++j) {
      for (std::size_t i = 0; i < cohort.size(); ++i) {
        if (stage_w[j](static_cast<Eigen::Index>(i)) > 0.0) rows_.emplace_back(i, j);
      }
    }
    const auto m = static_cast<Eigen::Index>(rows_.size());
    design_ = Eigen::MatrixXd::Zero(m, static_cast<Eigen::Index>(T) * p0_ + p1_);
    weights_.resize(m);
    for (Eigen::Index r = 0; r < m; ++r) {
      const auto [i, j] = rows_[static_cast<std::size_t>(r)];
      const auto ii = static_cast<Eigen::Index>(i);
      const double a = cohort.trajectories[i].stages[j].action;
      design_.row(r).segment(static_cast<Eigen::Index>(j) * p0_, p0_) = feats_.main[j].row(ii);
      design_.row(r).tail(p1_) = a * feats_.decision[j].row(ii);
      weights_(r) = stage_w[j](ii);
    }
  }

  Eigen::VectorXd response(const SharedQTheta& theta) const {
    const std::size_t T = cohort_.horizon;
    Eigen::VectorXd y(static_cast<Eigen::Index>(rows_.size()));
    for (std::size_t r = 0; r < rows_.size(); ++r) {
      const auto [i, j] = rows_[r];
      const auto& tr = cohort_.trajectories[i];
      double u = tr.stages[j].reward;
      if (j + 1 < T && tr.informative(j + 1)) {
        const auto ii = static_cast<Eigen::Index>(i);
        u += optimal_next_value(feats_.main[j + 1].row(ii).transpose(),
                                feats_.decision[j + 1].row(ii).transpose(),
                                theta.main_coefs[j + 1], theta.psi);
      }
      y(static_cast<Eigen::Index>(r)) = u;
    }
    return y;
  }

  const Eigen::MatrixXd& design() const { return design_; }
  const Eigen::VectorXd& weights() const { return weights_; }
  const std::vector<std::pair<std::size_t, std::size_t>>& rows() const { return rows_; }
  Eigen::Index main_dim() const { return p0_; }

 private:
  const CohortDataset& cohort_;
  StageFeatures feats_;
  Eigen::Index p0_ = 0, p1_ = 0;
  std::vector<std::pair<std::size_t, std::size_t>> rows_;
  Eigen::MatrixXd design_;
  Eigen::VectorXd weights_;
};

void check_theta(const SharedQTheta& theta, const CohortDataset& cohort, Eigen::Index p0,
                 Eigen::Index p1) {
  if (theta.main_coefs.size() != cohort.horizon || theta.psi.size() != p1) {
    throw DataError("parameter dimensions do not match the feature spec");
  }
  for (const auto& b : theta.main_coefs)
    if (b.size() != p0) throw DataError("parameter dimensions do not match the feature spec");
}

}  // namespace

StackedSystem build_stacked_system(const CohortDataset& cohort, const SharedQTheta& theta,
                                   const CensoringModel& censoring) {
  StackedAssembler assembler(cohort, censoring);
  const FeatureMap map = cohort.feature_map();
  check_theta(theta, cohort, map.main_dim(), map.decision_dim());
  return StackedSystem{assembler.design(), assembler.weights(), assembler.response(theta),
                       assembler.rows()};
}

SharedQModel fit_censored_shared_q(const CohortDataset& cohort, const CensoringModel& censoring,
                                   const SharedQOptions& options) {
  if (!(options.epsilon > 0.0)) throw DataError("epsilon must be positive");
  if (options.max_iterations < 1) throw DataError("max_iterations must be at least 1");
  const std::size_t T = cohort.horizon;

  SharedQTheta theta;
  const FeatureMap map = cohort.feature_map();
  if (options.zero_init) {
    theta.main_coefs.assign(T, Eigen::VectorXd::Zero(map.main_dim()));
    theta.psi = Eigen::VectorXd::Zero(map.decision_dim());
  } else {
    theta = initialize_theta(fit_censored_q(cohort, censoring));
  }

  StackedAssembler assembler(cohort, censoring);
  if (assembler.rows().empty()) throw RankDeficientError("no uncensored at-risk rows to fit");
  const auto active = weighted_nonzero_columns<double>(assembler.design(), assembler.weights());
  const Eigen::Index full_dim = assembler.design().cols();
  Eigen::MatrixXd reduced(assembler.design().rows(), static_cast<Eigen::Index>(active.size()));
  for (std::size_t k = 0; k < active.size(); ++k) {
    reduced.col(static_cast<Eigen::Index>(k)) = assembler.design().col(active[k]);
  }
  std::optional<WlsSolver<double>> solver;
  try {
    solver.emplace(reduced, assembler.weights());
  } catch (const RankDeficientError& e) {
    throw RankDeficientError(std::string("stacked shared-Q system: ") + e.what());
  }

  Eigen::VectorXd current = theta.stacked();
  for (Eigen::Index c = 0; c < full_dim; ++c) {
    if (std::find(active.begin(), active.end(), c) == active.end()) current(c) = 0.0;
  }
  theta = SharedQTheta::from_stacked(current, T, assembler.main_dim());

  SharedQModel model;
  model.epsilon = options.epsilon;
  model.feature_spec = cohort.feature_spec;
  double prev_change = std::numeric_limits<double>::infinity();
  int rising = 0;
  bool damped = false;
  for (int it = 1; it <= options.max_iterations; ++it) {
    const Eigen::VectorXd sol = solver->solve(assembler.response(theta));
    Eigen::VectorXd next = Eigen::VectorXd::Zero(full_dim);
    for (std::size_t k = 0; k < active.size(); ++k) next(active[k]) = sol(static_cast<Eigen::Index>(k));
    if (damped) next = 0.5 * (next + current);

    const double change = (next - current).norm();
    rising = change > prev_change ? rising + 1 : 0;
    if (rising >= options.damping_patience) damped = true;
    prev_change = change;

    current = next;
    theta = SharedQTheta::from_stacked(current, T, assembler.main_dim());
    model.iterations = it;
    model.last_change = change;
    if (change <= options.epsilon) {
      model.converged = true;
      break;
    }
  }
  model.main_coefs = theta.main_coefs;
  model.shared_psi = theta.psi;
  return model;
}

Action recommend_shared(const Eigen::VectorXd& psi, const Eigen::VectorXd& h_decision) {
  if (psi.size() != h_decision.size()) throw DataError("decision feature dimension mismatch");
  return sign_action(psi.dot(h_decision));
}

}  // namespace sdtr
