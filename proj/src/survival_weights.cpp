#include "sdtr/survival_weights.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sdtr/error.hpp"

namespace sdtr {

namespace {

// Index of the last knot <= t, or -1.
std::ptrdiff_t knot_index(const std::vector<double>& knots, double t) {
  auto it = std::upper_bound(knots.begin(), knots.end(), t);
  return (it - knots.begin()) - 1;
}

}  // namespace

double SurvivalCurve::value(double t) const {
  const auto k = knot_index(times, t);
  return k < 0 ? 1.0 : probabilities[static_cast<std::size_t>(k)];
}

double SurvivalCurve::at(double t) const { return std::max(value(t), floor); }

SurvivalCurve fit_kaplan_meier(const std::vector<double>& times, const std::vector<bool>& event,
                               double floor) {
  if (times.empty()) throw DataError("Kaplan-Meier needs at least one observation");
  if (times.size() != event.size()) throw DataError("times and event flags differ in length");
  std::vector<std::size_t> order(times.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return times[a] < times[b]; });

  SurvivalCurve curve;
  curve.floor = floor;
  double s = 1.0;
  std::size_t at_risk = times.size();
  for (std::size_t i = 0; i < order.size();) {
    const double t = times[order[i]];
    std::size_t d = 0, group = 0;
    for (; i < order.size() && times[order[i]] == t; ++i, ++group) d += event[order[i]] ? 1 : 0;
    if (d > 0) {
      s *= 1.0 - static_cast<double>(d) / static_cast<double>(at_risk);
      curve.times.push_back(t);
      curve.probabilities.push_back(s);
    }
    at_risk -= group;
  }
  return curve;
}

double CoxCensoringFit::baseline_cumulative_hazard(double t) const {
  const auto k = knot_index(knot_times, t);
  return k < 0 ? 0.0 : cumulative_hazard[static_cast<std::size_t>(k)];
}

CoxPartialLikelihood::CoxPartialLikelihood(std::vector<double> times, std::vector<bool> event,
                                           Eigen::MatrixXd z)
    : times_(std::move(times)), event_(std::move(event)), z_(std::move(z)) {
  if (times_.size() != event_.size() || static_cast<Eigen::Index>(times_.size()) != z_.rows()) {
    throw DataError("Cox data have inconsistent lengths");
  }
  order_.resize(times_.size());
  std::iota(order_.begin(), order_.end(), 0);
  std::stable_sort(order_.begin(), order_.end(),
                   [&](auto a, auto b) { return times_[a] > times_[b]; });
}

double CoxPartialLikelihood::evaluate(const Eigen::VectorXd& beta, Eigen::VectorXd* grad,
                                      Eigen::MatrixXd* hess) const {
  const Eigen::Index p = z_.cols();
  if (beta.size() != p) throw DataError("Cox coefficient dimension mismatch");
  // Centering leaves every risk-set ratio unchanged and keeps exp() tame.
  const Eigen::RowVectorXd center = p > 0 ? Eigen::RowVectorXd(z_.colwise().mean())
                                          : Eigen::RowVectorXd(0);
  double loglik = 0.0;
  double s0 = 0.0;
  Eigen::VectorXd s1 = Eigen::VectorXd::Zero(p);
  Eigen::MatrixXd s2 = Eigen::MatrixXd::Zero(p, p);
  if (grad) grad->setZero(p);
  if (hess) hess->setZero(p, p);

  const std::size_t n = order_.size();
  for (std::size_t i = 0; i < n;) {
    const double t = times_[order_[i]];
    std::size_t end = i;
    for (; end < n && times_[order_[end]] == t; ++end) {
      const auto r = static_cast<Eigen::Index>(order_[end]);
      const Eigen::VectorXd zc = (z_.row(r) - center).transpose();
      const double w = std::exp(beta.dot(zc));
      s0 += w;
      if (grad || hess) s1 += w * zc;
      if (hess) s2.noalias() += w * zc * zc.transpose();
    }
    double d = 0.0;
    Eigen::VectorXd zsum = Eigen::VectorXd::Zero(p);
    for (std::size_t k = i; k < end; ++k) {
      if (!event_[order_[k]]) continue;
      const auto r = static_cast<Eigen::Index>(order_[k]);
      const Eigen::VectorXd zc = (z_.row(r) - center).transpose();
      loglik += beta.dot(zc);
      zsum += zc;
      d += 1.0;
    }
    if (d > 0.0) {
      loglik -= d * std::log(s0);
      const Eigen::VectorXd mean = s1 / s0;
      if (grad) *grad += zsum - d * mean;
      if (hess) *hess -= d * (s2 / s0 - mean * mean.transpose());
    }
    i = end;
  }
  return loglik;
}

double CoxPartialLikelihood::value(const Eigen::VectorXd& beta) const {
  return evaluate(beta, nullptr, nullptr);
}

Eigen::VectorXd CoxPartialLikelihood::gradient(const Eigen::VectorXd& beta) const {
  Eigen::VectorXd g;
  evaluate(beta, &g, nullptr);
  return g;
}

void CoxPartialLikelihood::breslow(const Eigen::VectorXd& beta, std::vector<double>& knots,
                                   std::vector<double>& cum_hazard) const {
  // Risk sums accumulate from the latest time backwards; increments are
  // then cumulated forwards.
  std::vector<double> inc_times, incs;
  double s0 = 0.0;
  const std::size_t n = order_.size();
  for (std::size_t i = 0; i < n;) {
    const double t = times_[order_[i]];
    std::size_t end = i;
    double d = 0.0;
    for (; end < n && times_[order_[end]] == t; ++end) {
      const auto r = static_cast<Eigen::Index>(order_[end]);
      s0 += std::exp(z_.row(r).dot(beta));
      if (event_[order_[end]]) d += 1.0;
    }
    if (d > 0.0) {
      inc_times.push_back(t);
      incs.push_back(d / s0);
    }
    i = end;
  }
  knots.assign(inc_times.rbegin(), inc_times.rend());
  cum_hazard.resize(incs.size());
  double acc = 0.0;
  for (std::size_t k = 0; k < incs.size(); ++k) {
    acc += incs[incs.size() - 1 - k];
    cum_hazard[k] = acc;
  }
}

CoxCensoringFit fit_cox(const std::vector<double>& times, const std::vector<bool>& event,
                        const Eigen::MatrixXd& z, std::vector<std::string> names,
                        const CoxOptions& options) {
  if (std::none_of(event.begin(), event.end(), [](bool e) { return e; })) {
    throw DataError("Cox fit needs at least one event");
  }
  const Eigen::Index p = z.cols();
  if (static_cast<Eigen::Index>(names.size()) != p) throw DataError("regressor name count mismatch");

  CoxCensoringFit fit;
  fit.regressor_names = std::move(names);
  fit.coefficients = Eigen::VectorXd::Zero(p);

  // Constant columns are not identifiable; they stay at zero.
  std::vector<Eigen::Index> active;
  for (Eigen::Index c = 0; c < p; ++c) {
    if (z.rows() > 0 && (z.col(c).array() != z(0, c)).any()) {
      active.push_back(c);
    } else {
      fit.warnings.push_back("regressor '" + fit.regressor_names[static_cast<std::size_t>(c)] +
                             "' is constant; coefficient fixed at 0");
    }
  }
  Eigen::MatrixXd za(z.rows(), static_cast<Eigen::Index>(active.size()));
  for (std::size_t k = 0; k < active.size(); ++k) za.col(static_cast<Eigen::Index>(k)) = z.col(active[k]);

  CoxPartialLikelihood lik(times, event, za);
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(za.cols());
  Eigen::VectorXd g;
  Eigen::MatrixXd h;
  double ll = lik.evaluate(beta, &g, &h);
  int it = 0;
  double gnorm = g.size() ? g.cwiseAbs().maxCoeff() : 0.0;
  while (gnorm >= options.gradient_tolerance) {
    if (it >= options.max_iterations) {
      throw ConvergenceError("Cox partial likelihood did not converge after " +
                                 std::to_string(it) + " Newton steps; gradient sup-norm " +
                                 std::to_string(gnorm),
                             gnorm);
    }
    Eigen::LDLT<Eigen::MatrixXd> ldlt(-h);
    Eigen::VectorXd step = ldlt.solve(g);
    if (ldlt.info() != Eigen::Success || !step.allFinite()) {
      throw ConvergenceError("Cox information matrix is singular", gnorm);
    }
    double scale = 1.0;
    Eigen::VectorXd trial;
    double ll_trial = 0.0;
    for (int halve = 0; halve < 30; ++halve, scale *= 0.5) {
      trial = beta + scale * step;
      ll_trial = lik.value(trial);
      if (std::isfinite(ll_trial) && ll_trial >= ll - 1e-12 * std::abs(ll)) break;
    }
    beta = trial;
    ll = lik.evaluate(beta, &g, &h);
    gnorm = g.cwiseAbs().maxCoeff();
    ++it;
  }
  for (std::size_t k = 0; k < active.size(); ++k) fit.coefficients(active[k]) = beta(static_cast<Eigen::Index>(k));
  fit.iterations = it;
  fit.gradient_norm = gnorm;

  CoxPartialLikelihood full(times, event, z);
  full.breslow(fit.coefficients, fit.knot_times, fit.cumulative_hazard);
  return fit;
}

void censoring_data(const CohortDataset& cohort, std::vector<double>& times,
                    std::vector<bool>& censoring_event) {
  times.clear();
  censoring_event.clear();
  for (const auto& t : cohort.trajectories) {
    times.push_back(t.total_reward());
    censoring_event.push_back(t.censored);
  }
}

namespace {

Eigen::MatrixXd baseline_matrix(const CohortDataset& cohort, const std::vector<std::string>& names) {
  std::vector<std::size_t> cols;
  for (const auto& n : names) cols.push_back(cohort.covariate_index(n));
  Eigen::MatrixXd z(static_cast<Eigen::Index>(cohort.size()), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    const auto& tr = cohort.trajectories[i];
    if (!tr.informative(0)) throw DataError("subject " + tr.id + " has no baseline covariates");
    for (std::size_t k = 0; k < cols.size(); ++k) {
      z(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) =
          tr.stages[0].covariates(static_cast<Eigen::Index>(cols[k]));
    }
  }
  return z;
}

}  // namespace

CoxCensoringFit fit_cox_censoring(const CohortDataset& cohort,
                                  const std::vector<std::string>& regressors,
                                  const CoxOptions& options) {
  std::vector<double> times;
  std::vector<bool> events;
  censoring_data(cohort, times, events);
  return fit_cox(times, events, baseline_matrix(cohort, regressors), regressors, options);
}

const std::vector<std::string>& CensoringModel::regressors() const {
  static const std::vector<std::string> none;
  if (const auto* cox = std::get_if<CoxCensoringFit>(&payload)) return cox->regressor_names;
  return none;
}

CensoringModel fit_censoring(const CohortDataset& cohort, CensoringVariant variant,
                             const std::vector<std::string>& regressors, double floor) {
  if (!(floor > 0.0)) throw DataError("survival floor must be positive");
  CensoringModel model;
  model.floor = floor;
  std::vector<double> times;
  std::vector<bool> events;
  censoring_data(cohort, times, events);
  const bool any_event = std::any_of(events.begin(), events.end(), [](bool e) { return e; });
  if (variant == CensoringVariant::kaplan_meier || !any_event) {
    // Without censoring events the Cox fit is undefined and S_C = 1.
    model.payload = fit_kaplan_meier(times, events, floor);
  } else {
    model.payload = fit_cox_censoring(cohort, regressors);
  }
  return model;
}

double survival_at(const CensoringModel& model, double t, const Eigen::VectorXd& regressors) {
  if (t < 0.0) throw DataError("survival evaluated at negative time");
  double s = 1.0;
  if (const auto* curve = std::get_if<SurvivalCurve>(&model.payload)) {
    s = curve->value(t);
  } else if (const auto* cox = std::get_if<CoxCensoringFit>(&model.payload)) {
    if (regressors.size() != cox->coefficients.size()) {
      throw DataError("censoring model expects " + std::to_string(cox->coefficients.size()) +
                      " regressors, got " + std::to_string(regressors.size()));
    }
    s = std::exp(-cox->baseline_cumulative_hazard(t) * std::exp(cox->coefficients.dot(regressors)));
  } else if (const auto* uni = std::get_if<UniformCensoring>(&model.payload)) {
    s = std::clamp(1.0 - t / uni->upper, 0.0, 1.0);
  }
  return std::max(s, model.floor);
}

CensoringEvaluator::CensoringEvaluator(const CensoringModel& model, const CohortDataset& cohort)
    : model_(&model) {
  for (const auto& n : model.regressors()) columns_.push_back(cohort.covariate_index(n));
}

double CensoringEvaluator::operator()(const Trajectory& traj, double t) const {
  Eigen::VectorXd z(static_cast<Eigen::Index>(columns_.size()));
  if (!columns_.empty()) {
    if (!traj.informative(0)) throw DataError("subject " + traj.id + " has no baseline covariates");
    for (std::size_t k = 0; k < columns_.size(); ++k) {
      z(static_cast<Eigen::Index>(k)) = traj.stages[0].covariates(static_cast<Eigen::Index>(columns_[k]));
    }
  }
  return survival_at(*model_, t, z);
}

Eigen::VectorXd ipcw_stage_weights(const CohortDataset& cohort, const CensoringModel& model,
                                   std::size_t stage) {
  if (stage >= cohort.horizon) throw DataError("stage outside the horizon");
  CensoringEvaluator surv(model, cohort);
  Eigen::VectorXd w = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(cohort.size()));
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    const auto& tr = cohort.trajectories[i];
    if (!tr.at_risk_row(stage)) continue;
    w(static_cast<Eigen::Index>(i)) = 1.0 / surv(tr, tr.cumulative_reward(stage));
  }
  return w;
}

}  // namespace sdtr
