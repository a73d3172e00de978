#include <cmath>
#include <limits>

#include "doctest.h"
#include "sdtr/error.hpp"
#include "sdtr/sim_diabetes.hpp"

using namespace sdtr;
using namespace sdtr::sim;

namespace {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

PatientState state(double a1c, int n_prev) {
  PatientState s;
  s.a1c = a1c;
  s.a1c_prev = a1c;
  s.n_augmented = n_prev;
  return s;
}

}  // namespace

TEST_CASE("baseline draws") {
  Rng rng(1);
  const int n = 100000;
  Eigen::MatrixXd x(n, 3);
  for (int i = 0; i < n; ++i) {
    const PatientState s = draw_baseline(rng);
    x.row(i) << s.bp, s.weight, s.a1c;
    CHECK(s.n_augmented == 0);
    CHECK_FALSE(s.discontinued);
    CHECK(s.mu == 7.7);
  }
  const Eigen::RowVector3d mean = x.colwise().mean();
  CHECK(std::abs(mean(0) - 12) < 0.02);
  CHECK(std::abs(mean(1) - 140) < 0.02);
  CHECK(std::abs(mean(2) - 7.7) < 0.02);
  const Eigen::MatrixXd centered = x.rowwise() - mean;
  const Eigen::Matrix3d cov = centered.transpose() * centered / (n - 1);
  CHECK((cov - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 0.02);
}

TEST_CASE("behavior policy") {
  Rng rng(2);
  CHECK(behavior_action(state(6.5, 0), rng) == -1);
  CHECK(behavior_action(state(9.0, 2), rng) == 1);
  CHECK(behavior_action(state(9.0, 4), rng) == -1);
  CHECK(behavior_action(state(7.5, 4), rng) == -1);
  const double p_continue = 1.0 / (1.0 + std::exp(1.5));
  CHECK(1.0 - behavior_augment_probability(7.5, 7.5, 0, false) == doctest::Approx(p_continue).epsilon(1e-14));
  CHECK(p_continue == doctest::Approx(0.1824).epsilon(1e-3));
  PatientState s = state(7.5, 0);
  int cont = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) cont += behavior_action(s, rng) == -1;
  const double se = std::sqrt(p_continue * (1 - p_continue) / n);
  CHECK(std::abs(static_cast<double>(cont) / n - p_continue) < 4 * se);
}

TEST_CASE("mu update guard") {
  SimConfig cfg;
  cfg.discontinuation_rates = {0.0, 0.0, 0.0, 0.0};
  Rng rng(3);
  PatientState s = state(8.0, 1);
  s.last_drug = 1;  // sulfonylurea
  s.mu = 7.0;
  CHECK(transition(cfg, s, rng).mu == doctest::Approx(0.8 * 7.0).epsilon(1e-15));
  s.a1c = 6.9;
  CHECK(transition(cfg, s, rng).mu == 7.0);
  s.a1c = 8.0;
  s.last_drug = -1;
  CHECK(transition(cfg, s, rng).mu == 7.0);
  cfg.discontinuation_rates = {1.0, 1.0, 1.0, 1.0};
  s.last_drug = 1;
  const PatientState t = transition(cfg, s, rng);
  CHECK(t.discontinued);
  CHECK(t.mu == 7.0);
}

TEST_CASE("A1c innovation variance with mu frozen") {
  SimConfig cfg;
  Rng rng(4);
  PatientState s = state(7.7, 0);
  const int n = 100000;
  double sum = 0, sum2 = 0;
  for (int i = 0; i < n; ++i) {
    const double a = transition(cfg, s, rng).a1c - s.mu;
    sum += a;
    sum2 += a * a;
  }
  const double var = (sum2 - sum * sum / n) / (n - 1);
  CHECK(std::abs(var - 0.25 / 1.25) < 0.005);
}

TEST_CASE("stage survival failure probabilities") {
  SimConfig cfg;
  Rng rng(5);
  const int n = 1000000;
  const PatientState s = state(5.0, 0);
  REQUIRE(regret(s, -1, 1) == 0.0);
  int fails = 0;
  for (int i = 0; i < n; ++i) {
    const StageDraw d = stage_survival(cfg, s, -1, rng);
    fails += d.failed;
    CHECK(d.reward <= 1.0);
  }
  const double p = normal_cdf(-2.5);
  CHECK(p == doctest::Approx(0.0062).epsilon(0.01));
  CHECK(std::abs(static_cast<double>(fails) / n - p) < 3 * std::sqrt(p * (1 - p) / n));

  // Regret r moves the failure probability to Phi(r - 2.5).
  const PatientState bad = state(5.0, 0);
  const double r = regret(bad, 1, 1);
  CHECK(r == doctest::Approx(2.5));
  fails = 0;
  const int m = 200000;
  for (int i = 0; i < m; ++i) fails += stage_survival(cfg, bad, 1, rng).failed;
  const double q = normal_cdf(r - 2.5);
  CHECK(std::abs(static_cast<double>(fails) / m - q) < 3 * std::sqrt(q * (1 - q) / m));
}

TEST_CASE("regret") {
  CHECK(regret(state(9.0, 0), 1, 1) == doctest::Approx(0.5));
  CHECK(regret(state(9.0, 0), -1, 1) == 0.0);
  CHECK(regret(state(10.5, 1), 1, 1) == 0.0);
  CHECK(regret(state(10.5, 1), -1, 1) == doctest::Approx(0.5));
  CHECK(regret(state(7.0, 0), -1, 2) == 0.0);
  CHECK(regret(state(7.0, 0), 1, 2) == 0.0);
  CHECK(regret(state(9.0, 0), 1, 2) == doctest::Approx(1.0));
  for (double a : {5.0, 8.0, 9.9, 10.1, 12.0})
    for (int n = 0; n <= 4; ++n)
      for (int sc : {1, 2}) CHECK(regret(state(a, n), optimal_action(state(a, n)), sc) == 0.0);
}

TEST_CASE("optimal action") {
  CHECK(optimal_action(state(10.2, 0)) == 1);
  CHECK(optimal_action(state(8.0, 4)) == 1);
  CHECK(optimal_action(state(9.0, 0)) == -1);
  const Regime opt = optimal_regime();
  CHECK(opt(0, covariates(state(8.0, 4))) == 1);
  CHECK(opt(3, covariates(state(9.0, 0))) == -1);
}

TEST_CASE("augmentation count never exceeds four") {
  SimConfig cfg;
  cfg.horizon = 20;
  const Regime always = [](std::size_t, const Eigen::VectorXd&) { return 1; };
  Rng rng(6);
  for (int i = 0; i < 500; ++i) {
    const PatientPath p = simulate_patient(cfg, &always, rng);
    double prev = 0;
    for (std::size_t j = 0; j < p.covariates.size(); ++j) {
      const double n = p.covariates[j](4);
      CHECK(n <= 4);
      CHECK(n >= prev);
      CHECK(n - prev <= 1);
      if (j > 0 && n > prev) CHECK(p.actions[j - 1] == 1);
      prev = n;
    }
  }
}

TEST_CASE("simulated cohorts satisfy the trajectory contract") {
  SimConfig cfg;
  Rng rng(7);
  const SimulatedCohort s = simulate(cfg, 2000, rng);
  CHECK_NOTHROW(s.cohort.validate());
  CHECK(s.cohort.tau == 10.0);
  CHECK(s.cohort.covariate_names == covariate_names());
  for (std::size_t i = 0; i < s.cohort.size(); ++i) {
    const auto& t = s.cohort.trajectories[i];
    CHECK(t.total_reward() == doctest::Approx(std::min(s.latent_totals[i], s.censor_times[i])));
    CHECK(t.censored == (s.censor_times[i] < s.latent_totals[i]));
  }
}

TEST_CASE("no censoring when the upper bound is infinite") {
  SimConfig cfg;
  cfg.censor_upper = std::numeric_limits<double>::infinity();
  Rng rng(8);
  const CohortDataset c = simulate_cohort(cfg, 1000, rng);
  for (const auto& t : c.trajectories) CHECK_FALSE(t.censored);
}

TEST_CASE("censoring fraction matches an independent estimate") {
  SimConfig cfg;
  const std::size_t n = 20000;
  Rng rng(9);
  const CohortDataset c = simulate_cohort(cfg, n, rng);
  double censored = 0;
  for (const auto& t : c.trajectories) censored += t.censored;
  // C ~ U(0, 25) and survival <= 10, so P(C < survival) = E[survival] / 25.
  Rng other(99);
  const std::size_t m = 100000;
  const double p = behavior_value(cfg, m, other) / 25.0;
  const double se = std::sqrt(p * (1 - p) / n + p * p * 0.01 / static_cast<double>(m));
  CHECK(std::abs(censored / n - p) < 3 * se);
}

TEST_CASE("true value ordering") {
  SimConfig cfg;
  const std::size_t m = 20000;
  Rng rng(10);
  const double opt = true_value(optimal_regime(), cfg, m, rng);
  const Regime plus = [](std::size_t, const Eigen::VectorXd&) { return 1; };
  const Regime minus = [](std::size_t, const Eigen::VectorXd&) { return -1; };
  const Regime coin = [](std::size_t j, const Eigen::VectorXd& x) {
    return std::fmod(std::abs(x(1) * 1e6 + static_cast<double>(j)), 2.0) < 1.0 ? 1 : -1;
  };
  for (const Regime* r : {&plus, &minus, &coin}) {
    Rng r2(10);
    CHECK(opt >= true_value(*r, cfg, m, r2) - 0.01);
  }
  Rng r3(10);
  CHECK(true_value(minus, cfg, m, r3) < opt);
}

TEST_CASE("simulation is reproducible and validated") {
  SimConfig cfg;
  Rng a(5), b(5);
  const CohortDataset x = simulate_cohort(cfg, 50, a);
  const CohortDataset y = simulate_cohort(cfg, 50, b);
  for (std::size_t i = 0; i < 50; ++i) CHECK(x.trajectories[i].total_reward() == y.trajectories[i].total_reward());
  cfg.scenario = 3;
  CHECK_THROWS_AS(cfg.validate(), DataError);
  cfg.scenario = 1;
  cfg.treatment_effects[0] = 1.0;
  CHECK_THROWS_AS(cfg.validate(), DataError);
}

TEST_CASE("behavior propensity reproduces the policy") {
  SimConfig cfg;
  Rng rng(11);
  const CohortDataset c = simulate_cohort(cfg, 300, rng);
  const PropensityModel p = behavior_propensity(c);
  for (const auto& t : c.trajectories) {
    for (std::size_t j = 0; j < t.horizon(); ++j) {
      if (!t.informative(j)) continue;
      const double pr = p.probability(t, j, t.stages[j].action, Eigen::VectorXd());
      CHECK(pr > 0.0);
      CHECK(p.probability(t, j, 1, Eigen::VectorXd()) + p.probability(t, j, -1, Eigen::VectorXd()) ==
            doctest::Approx(1.0));
    }
  }
}
