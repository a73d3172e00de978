#include <cmath>
#include <random>

#include "doctest.h"
#include "helpers.hpp"
#include "oracles.hpp"
#include "sdtr/error.hpp"
#include "sdtr/survival_weights.hpp"

using namespace sdtr;
using testutil::stage;

using oracle::log_partial_likelihood;

TEST_CASE("Kaplan-Meier hand-computed product limit") {
  const SurvivalCurve s = fit_kaplan_meier({2, 3, 5}, {true, true, false});
  CHECK(s.value(1.9) == 1.0);
  CHECK(s.value(2) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(s.value(3) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(s.value(5) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(s.value(100) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("Kaplan-Meier degenerate inputs") {
  const SurvivalCurve none = fit_kaplan_meier({1, 2, 3}, {false, false, false});
  for (double t : {0.0, 1.0, 2.5, 10.0}) CHECK(none.at(t) == 1.0);
  const SurvivalCurve one = fit_kaplan_meier({4}, {true}, 0.05);
  CHECK(one.value(3.99) == 1.0);
  CHECK(one.value(4) == 0.0);
  CHECK(one.at(4) == 0.05);
  CHECK_THROWS_AS(fit_kaplan_meier({}, {}), DataError);
}

TEST_CASE("Kaplan-Meier with ties groups identical times") {
  // Four at risk at t = 1 with two events: 1 - 2/4.
  const SurvivalCurve s = fit_kaplan_meier({1, 1, 1, 2}, {true, true, false, true}, 0.0);
  CHECK(s.value(1) == doctest::Approx(0.5));
  CHECK(s.value(2) == doctest::Approx(0.0));
}

TEST_CASE("Cox partial likelihood gradient matches central differences") {
  std::mt19937_64 gen(3);
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> ud(0.1, 5);
  const int n = 40;
  std::vector<double> t(n);
  std::vector<bool> e(n);
  Eigen::MatrixXd z(n, 2);
  for (int i = 0; i < n; ++i) {
    t[static_cast<std::size_t>(i)] = std::round(ud(gen) * 4) / 4;  // ties on purpose
    e[static_cast<std::size_t>(i)] = gen() % 3 != 0;
    z(i, 0) = nd(gen);
    z(i, 1) = gen() % 2;
  }
  const CoxPartialLikelihood pl(t, e, z);
  for (int rep = 0; rep < 10; ++rep) {
    Eigen::VectorXd beta(2);
    beta << nd(gen), nd(gen);
    const Eigen::VectorXd g = pl.gradient(beta);
    Eigen::VectorXd fd(2);
    for (int k = 0; k < 2; ++k) {
      const double h = 1e-5;
      Eigen::VectorXd up = beta, dn = beta;
      up(k) += h;
      dn(k) -= h;
      fd(k) = (pl.value(up) - pl.value(dn)) / (2 * h);
    }
    CHECK(testutil::relative_error(g, fd) < 1e-6);
    CHECK(pl.value(beta) ==
          doctest::Approx(static_cast<double>(log_partial_likelihood(t, e, z, beta))).epsilon(1e-10));
  }
}

TEST_CASE("Cox fit on four subjects matches a grid search") {
  const std::vector<double> t{1, 2, 3, 4};
  const std::vector<bool> e{true, true, false, true};
  Eigen::MatrixXd z(4, 1);
  z << 1, 0, 1, 0;
  const double best_b = oracle::cox_grid_search(t, e, z, -5, 5, 1e-4);
  const CoxCensoringFit fit = fit_cox(t, e, z, {"z"});
  CHECK(std::abs(fit.coefficients(0) - best_b) < 1e-3);
  CHECK(fit.gradient_norm < 1e-8);
}

TEST_CASE("Cox with a constant regressor reduces to Nelson-Aalen") {
  const std::vector<double> t{1, 2, 2, 3, 5, 6};
  const std::vector<bool> e{true, false, true, true, false, true};
  Eigen::MatrixXd z = Eigen::MatrixXd::Constant(6, 1, 3.0);
  const CoxCensoringFit fit = fit_cox(t, e, z, {"c"});
  CHECK(fit.coefficients(0) == 0.0);
  CHECK_FALSE(fit.warnings.empty());
  // Nelson-Aalen: sum over event times of d / (number at risk).
  const double na1 = 1.0 / 6, na2 = na1 + 1.0 / 5, na3 = na2 + 1.0 / 3, na6 = na3 + 1.0 / 1;
  CHECK(fit.baseline_cumulative_hazard(0.5) == 0.0);
  CHECK(fit.baseline_cumulative_hazard(1) == doctest::Approx(na1));
  CHECK(fit.baseline_cumulative_hazard(2) == doctest::Approx(na2));
  CHECK(fit.baseline_cumulative_hazard(4) == doctest::Approx(na3));
  CHECK(fit.baseline_cumulative_hazard(6) == doctest::Approx(na6));
}

TEST_CASE("Cox with no regressors agrees with Kaplan-Meier in product-limit form") {
  std::mt19937_64 gen(9);
  std::exponential_distribution<double> ex(1.0);
  std::vector<double> t;
  std::vector<bool> e;
  for (int i = 0; i < 60; ++i) {
    t.push_back(std::round(ex(gen) * 10) / 10);
    e.push_back(gen() % 4 != 0);
  }
  const CoxCensoringFit cox = fit_cox(t, e, Eigen::MatrixXd(60, 0), {});
  const SurvivalCurve km = fit_kaplan_meier(t, e, 0.0);
  // Product of (1 - Breslow increment) reproduces the product-limit curve.
  double s = 1.0, prev = 0.0;
  REQUIRE(cox.knot_times.size() == km.times.size());
  for (std::size_t k = 0; k < cox.knot_times.size(); ++k) {
    s *= 1.0 - (cox.cumulative_hazard[k] - prev);
    prev = cox.cumulative_hazard[k];
    CHECK(cox.knot_times[k] == km.times[k]);
    CHECK(std::abs(s - km.probabilities[k]) < 1e-10);
  }
}

TEST_CASE("survival_at evaluates the Cox closed form with a floor") {
  CoxCensoringFit fit;
  fit.coefficients = Eigen::VectorXd::Constant(1, std::log(2.0));
  fit.knot_times = {1.0};
  fit.cumulative_hazard = {0.5};
  fit.regressor_names = {"z"};
  CensoringModel model;
  model.payload = fit;
  const Eigen::VectorXd one = Eigen::VectorXd::Constant(1, 1.0);
  CHECK(survival_at(model, 0.0, one) == 1.0);
  CHECK(survival_at(model, 1.5, one) == doctest::Approx(std::exp(-1.0)).epsilon(1e-14));
  CHECK(survival_at(model, 1.5, Eigen::VectorXd::Zero(1)) == doctest::Approx(std::exp(-0.5)));
  CHECK_THROWS_AS(survival_at(model, 1.0, Eigen::VectorXd::Zero(2)), DataError);

  std::get<CoxCensoringFit>(model.payload).cumulative_hazard = {10.0};
  CHECK(survival_at(model, 2.0, one) == model.floor);
}

TEST_CASE("survival_at is non-increasing in t") {
  std::mt19937_64 gen(1);
  std::exponential_distribution<double> ex(0.5);
  std::vector<double> t;
  std::vector<bool> e;
  Eigen::MatrixXd z(50, 1);
  for (int i = 0; i < 50; ++i) {
    t.push_back(ex(gen));
    e.push_back(gen() % 2);
    z(i, 0) = static_cast<double>(gen() % 100) / 50.0;
  }
  CensoringModel model;
  model.payload = fit_cox(t, e, z, {"z"});
  for (double zz : {0.0, 1.0, 2.0}) {
    double prev = 1.0;
    for (double s = 0; s < 8; s += 0.05) {
      const double v = survival_at(model, s, Eigen::VectorXd::Constant(1, zz));
      CHECK(v <= prev);
      prev = v;
    }
  }
}

TEST_CASE("ipcw_stage_weights") {
  const auto cohort = testutil::make_cohort(
      {{"a", {stage({0}, 1, 1), stage({0}, 1, 1)}, {}},
       {"b", {stage({0}, 1, 1), stage({0}, 1, 0.5, false)}, {}},
       {"c", {stage({0}, 1, 0.3)}, {}}},
      {"x"}, 10, 2);
  CensoringModel none;
  const Eigen::VectorXd w1 = ipcw_stage_weights(cohort, none, 1);
  CHECK(w1(0) == 1.0);
  CHECK(w1(1) == 0.0);  // censored during stage 2
  CHECK(w1(2) == 0.0);  // non-informative
  CensoringModel uni;
  uni.payload = UniformCensoring{4.0};
  const Eigen::VectorXd w = ipcw_stage_weights(cohort, uni, 1);
  CHECK(w(0) == doctest::Approx(2.0));  // S_C(2) = 0.5
  CHECK_THROWS_AS(ipcw_stage_weights(cohort, none, 2), DataError);
}

TEST_CASE("fit_censoring falls back to Kaplan-Meier without censoring events") {
  const auto cohort = testutil::make_cohort(
      {{"a", {stage({1}, 1, 1)}, {}}, {"b", {stage({2}, 1, 0.5)}, {}}}, {"x"}, 10, 1);
  const CensoringModel m = fit_censoring(cohort, CensoringVariant::cox, {"x"});
  CHECK(std::holds_alternative<SurvivalCurve>(m.payload));
  CHECK(survival_at(m, 5.0, Eigen::VectorXd()) == 1.0);
}
