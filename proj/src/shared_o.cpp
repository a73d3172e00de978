#include "sdtr/shared_o.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "sdtr/error.hpp"

namespace sdtr {

namespace {

double clamp_probability(double p) {
  return std::clamp(p, kPropensityClampLow, kPropensityClampHigh);
}

double expit(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

double log1pexp(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

// Newton-Raphson logistic regression for P(A = +1 | h) with a small ridge so
// that structurally zero columns stay at 0.
Eigen::VectorXd fit_logistic(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
  const Eigen::Index p = x.cols();
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  constexpr double ridge = 1e-6;
  auto loglik = [&](const Eigen::VectorXd& b) {
    const Eigen::VectorXd eta = x * b;
    double ll = 0.0;
    for (Eigen::Index i = 0; i < eta.size(); ++i) ll += y(i) * eta(i) - log1pexp(eta(i));
    return ll - 0.5 * ridge * b.squaredNorm();
  };
  double current = loglik(beta);
  for (int iter = 0; iter < 50; ++iter) {
    const Eigen::VectorXd eta = x * beta;
    Eigen::VectorXd mu(eta.size()), w(eta.size());
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
      mu(i) = expit(eta(i));
      w(i) = mu(i) * (1.0 - mu(i));
    }
    const Eigen::VectorXd grad = x.transpose() * (y - mu) - ridge * beta;
    if (grad.cwiseAbs().maxCoeff() < 1e-10) break;
    Eigen::MatrixXd info = x.transpose() * w.asDiagonal() * x;
    info.diagonal().array() += ridge;
    const Eigen::VectorXd step = info.ldlt().solve(grad);
    double t = 1.0;
    bool moved = false;
    for (int k = 0; k < 30; ++k, t *= 0.5) {
      const Eigen::VectorXd trial = beta + t * step;
      const double ll = loglik(trial);
      if (std::isfinite(ll) && ll >= current) {
        beta = trial;
        current = ll;
        moved = true;
        break;
      }
    }
    if (!moved) break;
  }
  return beta;
}

}  // namespace

double PropensityModel::probability(const Trajectory& traj, std::size_t stage, Action action,
                                    const Eigen::VectorXd& h_decision) const {
  double p_plus = 0.5;
  switch (variant) {
    case PropensityVariant::known:
      if (!known) throw DataError("known propensity has no probability function");
      return known(traj, stage, action);
    case PropensityVariant::stage_proportion:
      if (stage >= stage_probability.size()) throw DataError("propensity stage out of range");
      p_plus = stage_probability[stage];
      break;
    case PropensityVariant::logistic:
      if (stage >= logistic_coefs.size()) throw DataError("propensity stage out of range");
      p_plus = expit(logistic_coefs[stage].dot(h_decision));
      break;
  }
  p_plus = clamp_probability(p_plus);
  return action > 0 ? p_plus : 1.0 - p_plus;
}

PropensityModel estimate_propensity(const CohortDataset& cohort, PropensityVariant variant) {
  if (variant == PropensityVariant::known) {
    throw DataError("known propensities cannot be estimated; supply them directly");
  }
  PropensityModel model;
  model.variant = variant;
  const FeatureMap map = cohort.feature_map();
  for (std::size_t j = 0; j < cohort.horizon; ++j) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < cohort.size(); ++i) {
      if (cohort.trajectories[i].informative(j)) rows.push_back(i);
    }
    if (rows.empty()) {
      throw DataError("stage " + std::to_string(j + 1) + " has no informative subjects");
    }
    if (variant == PropensityVariant::stage_proportion) {
      double plus = 0.0;
      for (std::size_t i : rows) plus += cohort.trajectories[i].stages[j].action > 0 ? 1.0 : 0.0;
      model.stage_probability.push_back(plus / static_cast<double>(rows.size()));
      continue;
    }
    Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()), map.decision_dim());
    Eigen::VectorXd y(x.rows());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const auto& st = cohort.trajectories[rows[r]].stages[j];
      x.row(static_cast<Eigen::Index>(r)) = map.decision_features(st.covariates).transpose();
      y(static_cast<Eigen::Index>(r)) = st.action > 0 ? 1.0 : 0.0;
    }
    model.logistic_coefs.push_back(fit_logistic(x, y));
  }
  return model;
}

Eigen::VectorXd outcome_weights(const CohortDataset& cohort, const PropensityModel& propensity,
                                const CensoringModel& censoring) {
  const FeatureMap map = cohort.feature_map();
  const CensoringEvaluator surv(censoring, cohort);
  Eigen::VectorXd w = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(cohort.size()));
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    const Trajectory& tr = cohort.trajectories[i];
    if (tr.censored) continue;
    double prob = 1.0;
    for (std::size_t j = 0; j < tr.horizon(); ++j) {
      if (!tr.informative(j)) continue;
      const auto& st = tr.stages[j];
      prob *= propensity.probability(tr, j, st.action, map.decision_features(st.covariates));
    }
    const double total = tr.total_reward();
    w(static_cast<Eigen::Index>(i)) = total / (prob * surv(tr, total));
  }
  return w;
}

Eigen::VectorXd value_contributions(const CohortDataset& cohort, const Regime& regime,
                                    const PropensityModel& propensity,
                                    const CensoringModel& censoring) {
  Eigen::VectorXd w = outcome_weights(cohort, propensity, censoring);
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    const Trajectory& tr = cohort.trajectories[i];
    for (std::size_t j = 0; j < tr.horizon(); ++j) {
      if (tr.informative(j) && regime(j, tr.stages[j].covariates) != tr.stages[j].action) {
        w(static_cast<Eigen::Index>(i)) = 0.0;
        break;
      }
    }
  }
  return w;
}

double value_estimate(const CohortDataset& cohort, const Regime& regime,
                      const PropensityModel& propensity, const CensoringModel& censoring) {
  if (cohort.size() == 0) throw DataError("cannot estimate a value on an empty cohort");
  return value_contributions(cohort, regime, propensity, censoring).mean();
}

Regime shared_regime(const Eigen::VectorXd& psi, const FeatureMap& map) {
  return [psi, map](std::size_t, const Eigen::VectorXd& cov) {
    return sign_action(psi.dot(map.decision_features(cov)));
  };
}

double softmin(const Eigen::VectorXd& u, double k) {
  if (u.size() == 0) throw DataError("softmin of an empty vector");
  const Eigen::ArrayXd z = -k * u.array();
  const double m = z.maxCoeff();
  return -(m + std::log((z - m).exp().sum())) / k;
}

SurrogateObjective::SurrogateObjective(const CohortDataset& cohort,
                                       const PropensityModel& propensity,
                                       const CensoringModel& censoring, double k)
    : SurrogateObjective(cohort, outcome_weights(cohort, propensity, censoring), k) {}

SurrogateObjective::SurrogateObjective(const CohortDataset& cohort, Eigen::VectorXd weights,
                                       double k)
    : weights_(std::move(weights)), k_(k) {
  if (!(k > 0)) throw DataError("smoothing parameter K must be positive");
  if (weights_.size() != static_cast<Eigen::Index>(cohort.size())) {
    throw DataError("one outcome weight per subject is required");
  }
  build(cohort);
}

void SurrogateObjective::build(const CohortDataset& cohort) {
  const FeatureMap map = cohort.feature_map();
  Eigen::Index rows = 0;
  for (const auto& tr : cohort.trajectories)
    for (std::size_t j = 0; j < tr.horizon(); ++j) rows += tr.informative(j) ? 1 : 0;
  margins_.resize(rows, map.decision_dim());
  offsets_.assign(1, 0);
  Eigen::Index r = 0;
  for (const auto& tr : cohort.trajectories) {
    for (std::size_t j = 0; j < tr.horizon(); ++j) {
      if (!tr.informative(j)) continue;
      const auto& st = tr.stages[j];
      margins_.row(r++) = static_cast<double>(st.action) * map.decision_features(st.covariates).transpose();
    }
    offsets_.push_back(r);
  }
}

// Per subject with m_j = A_j psi^T H_j1:
//   L = logsumexp(-K m) - log K,  term = log(1 + e^L) = softplus(L),
//   d term / d psi = -K sigmoid(L) sum_j softmax(-K m)_j A_j H_j1.
double SurrogateObjective::operator()(const Eigen::VectorXd& psi, Eigen::VectorXd& grad) const {
  if (psi.size() != dim()) throw DataError("psi has the wrong dimension");
  const Eigen::VectorXd m = margins_ * psi;
  grad.setZero(dim());
  double total = 0.0;
  const double log_k = std::log(k_);
  Eigen::VectorXd coef = Eigen::VectorXd::Zero(m.size());
  for (std::size_t i = 0; i + 1 < offsets_.size(); ++i) {
    const double w = weights_(static_cast<Eigen::Index>(i));
    const Eigen::Index a = offsets_[i], len = offsets_[i + 1] - offsets_[i];
    if (w == 0.0 || len == 0) continue;
    const Eigen::ArrayXd z = -k_ * m.segment(a, len).array();
    const double zmax = z.maxCoeff();
    const Eigen::ArrayXd e = (z - zmax).exp();
    const double sum = e.sum();
    const double L = zmax + std::log(sum) - log_k;
    total += w * log1pexp(L);
    coef.segment(a, len) = (-k_ * w * expit(L) / sum) * e.matrix();
  }
  grad = margins_.transpose() * coef;
  const double n = static_cast<double>(weights_.size());
  grad /= n;
  return total / n;
}

double SurrogateObjective::value(const Eigen::VectorXd& psi) const {
  Eigen::VectorXd g;
  return (*this)(psi, g);
}

double surrogate_objective(const Eigen::VectorXd& psi, const CohortDataset& cohort,
                           const PropensityModel& propensity, const CensoringModel& censoring,
                           double k) {
  return SurrogateObjective(cohort, propensity, censoring, k).value(psi);
}

Eigen::VectorXd surrogate_gradient(const Eigen::VectorXd& psi, const CohortDataset& cohort,
                                   const PropensityModel& propensity,
                                   const CensoringModel& censoring, double k) {
  Eigen::VectorXd g;
  SurrogateObjective(cohort, propensity, censoring, k)(psi, g);
  return g;
}

namespace {

SharedOModel fit_with_objective(const CohortDataset& cohort, const SurrogateObjective& objective,
                                const SharedOOptions& options) {
  if (options.l1_weight < 0) throw DataError("L1 weight must be nonnegative");
  const FeatureMap map = cohort.feature_map();
  const Eigen::VectorXd start = Eigen::VectorXd::Zero(objective.dim());
  const double scale = std::max(1.0, std::abs(objective.value(start)));

  MinimizeOptions mo;
  mo.gradient_tolerance = options.gradient_tolerance * scale;
  mo.max_iterations = options.max_iterations;
  mo.history_size = options.history_size;
  mo.l1_weight = options.l1_weight;
  if (map.has_intercept() && options.l1_weight > 0) {
    mo.l1_mask.assign(static_cast<std::size_t>(objective.dim()), true);
    mo.l1_mask[0] = false;
  }
  auto f = [&](const Eigen::VectorXd& x, Eigen::VectorXd& g) { return objective(x, g); };
  const MinimizeResult<double> res = minimize<double>(f, start, mo);

  SharedOModel model;
  model.psi = res.argmin;
  model.smoothing_k = options.k;
  model.l1_weight = options.l1_weight;
  model.objective_at_solution = res.value;
  model.iterations = res.iterations;
  model.converged = res.converged;
  model.feature_spec = cohort.feature_spec;
  return model;
}

}  // namespace

SharedOModel fit_censored_shared_o(const CohortDataset& cohort, const PropensityModel& propensity,
                                   const CensoringModel& censoring,
                                   const SharedOOptions& options) {
  if (cohort.size() == 0) throw DataError("cannot fit on an empty cohort");
  const SurrogateObjective objective(cohort, propensity, censoring, options.k);
  return fit_with_objective(cohort, objective, options);
}

SelectKResult select_k(const CohortDataset& cohort, std::vector<double> k_grid, std::size_t folds,
                       std::uint64_t seed, const NuisanceOptions& nuisance,
                       const SharedOOptions& base) {
  if (k_grid.empty()) throw DataError("K grid is empty");
  if (folds < 2 || folds > cohort.size()) {
    throw DataError("fold count must be between 2 and the cohort size");
  }
  for (double k : k_grid)
    if (!(k > 0)) throw DataError("K grid entries must be positive");
  std::sort(k_grid.begin(), k_grid.end());
  k_grid.erase(std::unique(k_grid.begin(), k_grid.end()), k_grid.end());

  std::vector<std::size_t> order(cohort.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  SelectKResult result;
  result.grid = k_grid;
  result.mean_values.assign(k_grid.size(), 0.0);
  for (std::size_t f = 0; f < folds; ++f) {
    std::vector<std::size_t> train, test;
    for (std::size_t r = 0; r < order.size(); ++r) (r % folds == f ? test : train).push_back(order[r]);
    const CohortDataset tr = cohort.subset(train);
    const CohortDataset te = cohort.subset(test);
    const CensoringModel cens =
        fit_censoring(tr, nuisance.censoring, nuisance.censoring_regressors, nuisance.survival_floor);
    const PropensityModel prop = estimate_propensity(tr, nuisance.propensity);
    const Eigen::VectorXd w = outcome_weights(tr, prop, cens);
    const FeatureMap map = tr.feature_map();
    for (std::size_t g = 0; g < k_grid.size(); ++g) {
      SharedOOptions opts = base;
      opts.k = k_grid[g];
      const SurrogateObjective objective(tr, w, opts.k);
      const SharedOModel model = fit_with_objective(tr, objective, opts);
      result.mean_values[g] +=
          value_estimate(te, shared_regime(model.psi, map), prop, cens) / static_cast<double>(folds);
    }
  }
  std::size_t best = 0;
  for (std::size_t g = 1; g < k_grid.size(); ++g) {
    if (result.mean_values[g] > result.mean_values[best]) best = g;
  }
  result.k = k_grid[best];
  return result;
}

}  // namespace sdtr
