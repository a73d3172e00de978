#include "sdtr/censored_q.hpp"

#include <cmath>

#include "sdtr/error.hpp"
#include "sdtr/numopt.hpp"

namespace sdtr {

StagewiseQModel fit_censored_q(const CohortDataset& cohort, const CensoringModel& censoring) {
  const std::size_t T = cohort.horizon;
  const StageFeatures feats = StageFeatures::build(cohort);
  const Eigen::Index p0 = feats.main_dim();
  const Eigen::Index p1 = feats.decision_dim();

  StagewiseQModel model;
  model.feature_spec = cohort.feature_spec;
  model.main_coefs.assign(T, Eigen::VectorXd::Zero(p0));
  model.decision_coefs.assign(T, Eigen::VectorXd::Zero(p1));

  for (std::size_t j = T; j-- > 0;) {
    const Eigen::VectorXd w_all = ipcw_stage_weights(cohort, censoring, j);
    std::vector<Eigen::Index> rows;
    for (Eigen::Index i = 0; i < w_all.size(); ++i)
      if (w_all(i) > 0.0) rows.push_back(i);
    if (rows.empty()) {
      throw RankDeficientError("stage " + std::to_string(j + 1) + ": no uncensored at-risk subjects");
    }

    const auto m = static_cast<Eigen::Index>(rows.size());
    Eigen::MatrixXd z(m, p0 + p1);
    Eigen::VectorXd y(m), w(m);
    for (Eigen::Index r = 0; r < m; ++r) {
      const Eigen::Index i = rows[static_cast<std::size_t>(r)];
      const auto& tr = cohort.trajectories[static_cast<std::size_t>(i)];
      const double a = tr.stages[j].action;
      z.row(r).head(p0) = feats.main[j].row(i);
      z.row(r).tail(p1) = a * feats.decision[j].row(i);
      double response = tr.stages[j].reward;
      if (j + 1 < T && tr.informative(j + 1)) {
        response += optimal_next_value(feats.main[j + 1].row(i).transpose(),
                                       feats.decision[j + 1].row(i).transpose(),
                                       model.main_coefs[j + 1], model.decision_coefs[j + 1]);
      }
      y(r) = response;
      w(r) = w_all(i);
    }

    const auto active = weighted_nonzero_columns<double>(z, w);
    Eigen::MatrixXd za(m, static_cast<Eigen::Index>(active.size()));
    for (std::size_t k = 0; k < active.size(); ++k) za.col(static_cast<Eigen::Index>(k)) = z.col(active[k]);
    Eigen::VectorXd theta_active;
    try {
      theta_active = WlsSolver<double>(za, w).solve(y);
    } catch (const RankDeficientError& e) {
      throw RankDeficientError("stage " + std::to_string(j + 1) + ": " + e.what());
    }
    Eigen::VectorXd theta = Eigen::VectorXd::Zero(p0 + p1);
    for (std::size_t k = 0; k < active.size(); ++k) theta(active[k]) = theta_active(static_cast<Eigen::Index>(k));
    model.main_coefs[j] = theta.head(p0);
    model.decision_coefs[j] = theta.tail(p1);
  }
  return model;
}

Action recommend_stagewise(const StagewiseQModel& model, const Eigen::VectorXd& h_decision,
                           std::size_t stage) {
  const auto& psi = model.decision_coefs.at(stage);
  if (psi.size() != h_decision.size()) throw DataError("decision feature dimension mismatch");
  return sign_action(psi.dot(h_decision));
}

}  // namespace sdtr
