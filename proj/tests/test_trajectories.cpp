#include <cmath>
#include <random>
#include <sstream>

#include "doctest.h"
#include "helpers.hpp"
#include "sdtr/error.hpp"
#include "sdtr/trajectories.hpp"

using namespace sdtr;
using testutil::stage;

namespace {

Trajectory pad(const RawTrajectory& raw, double tau, std::size_t horizon) {
  Rng rng(5);
  return pad_and_truncate(raw, tau, horizon, rng);
}

}  // namespace

TEST_CASE("padding a subject who fails at stage 3") {
  RawTrajectory raw{"a", {stage({0}, 1, 1), stage({0}, -1, 1), stage({0}, 1, 1)}, {}};
  const Trajectory t = pad(raw, 100, 5);
  REQUIRE(t.horizon() == 5);
  const double rewards[] = {1, 1, 1, 0, 0};
  const bool informative[] = {true, true, true, false, false};
  for (std::size_t j = 0; j < 5; ++j) {
    CHECK(t.stages[j].reward == rewards[j]);
    CHECK(t.stages[j].informative == informative[j]);
    CHECK((t.stages[j].action == 1 || t.stages[j].action == -1));
  }
  CHECK(t.observed_length == 3);
  CHECK_FALSE(t.censored);
}

TEST_CASE("truncation at tau") {
  RawTrajectory raw{"a", {stage({0}, 1, 4), stage({0}, 1, 4), stage({0}, 1, 4)}, {}};
  const Trajectory t = pad(raw, 10, 3);
  CHECK(t.stages[0].reward == 4);
  CHECK(t.stages[1].reward == 4);
  CHECK(t.stages[2].reward == 2);
  CHECK(t.total_reward() == 10);
  CHECK(t.stages[2].at_risk);
}

TEST_CASE("reaching tau exactly keeps the full reward and ends the trajectory") {
  RawTrajectory raw{"a", {stage({0}, 1, 5), stage({0}, 1, 5), stage({0}, 1, 5)}, {}};
  const Trajectory t = pad(raw, 10, 3);
  CHECK(t.stages[1].reward == 5);
  CHECK_FALSE(t.stages[2].informative);
  CHECK(t.stages[2].reward == 0);
}

TEST_CASE("censoring inside stage 3") {
  RawTrajectory raw{"a", {stage({0}, 1, 1), stage({0}, 1, 1), stage({0}, 1, NAN)}, 2.5};
  const Trajectory t = pad(raw, 10, 4);
  CHECK(t.stages[0].at_risk);
  CHECK(t.stages[1].at_risk);
  CHECK_FALSE(t.stages[2].at_risk);
  CHECK(t.stages[2].reward == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(t.censored);
  CHECK_FALSE(t.stages[3].informative);
  CHECK_FALSE(t.stages[3].at_risk);
}

TEST_CASE("pad_and_truncate rejects bad input") {
  CHECK_THROWS_AS(pad({"a", {stage({0}, 1, -1)}, {}}, 10, 2), DataError);
  CHECK_THROWS_AS(pad({"a", {stage({0}, 1, 1), stage({0}, 1, 1)}, {}}, 10, 1), DataError);
  CHECK_THROWS_AS(pad({"a", {stage({0}, 1, 1)}, {}}, 10, 0), DataError);
  CHECK_THROWS_AS(pad({"a", {stage({0}, 1, 1, false), stage({0}, 1, 1)}, {}}, 10, 3), DataError);
}

TEST_CASE("pad_and_truncate preserves min(sum Y, tau)") {
  std::mt19937_64 gen(42);
  std::uniform_real_distribution<double> r(0.0, 3.0);
  std::uniform_int_distribution<int> len(1, 6);
  for (int rep = 0; rep < 500; ++rep) {
    RawTrajectory raw;
    raw.id = std::to_string(rep);
    const int L = len(gen);
    double sum = 0.0;
    for (int j = 0; j < L; ++j) {
      const double y = r(gen);
      sum += y;
      raw.stages.push_back(stage({y}, 1, y));
    }
    const double tau = 1.0 + 8.0 * r(gen) / 3.0;
    const Trajectory t = pad(raw, tau, 6);
    CHECK(t.total_reward() == doctest::Approx(std::min(sum, tau)).epsilon(1e-12));
    CHECK(t.total_reward() <= tau * (1 + 1e-15));
    bool prev = true;
    for (const auto& s : t.stages) {
      CHECK((prev || !s.at_risk));
      prev = s.at_risk;
      if (!s.informative) CHECK(s.reward == 0.0);
    }
    // Idempotent on its own informative prefix.
    RawTrajectory again{raw.id, {}, {}};
    for (std::size_t j = 0; j < t.observed_length; ++j)
      again.stages.push_back({t.stages[j].covariates, t.stages[j].action, t.stages[j].reward, true});
    CHECK(pad(again, tau, 6).total_reward() == doctest::Approx(t.total_reward()).epsilon(1e-14));
  }
}

TEST_CASE("build_features") {
  const auto cohort = testutil::make_cohort(
      {{"a", {stage({8, 2}, 1, 1), stage({7, 3}, -1, 0.5)}, {}}}, {"a1c", "n"}, 10, 3);
  const auto [h0, h1] = build_features(cohort, cohort.trajectories[0], 0);
  CHECK(h1.size() == 3);
  CHECK(h1(0) == 1.0);
  CHECK(h1(1) == 8.0);
  CHECK(h1(2) == 2.0);
  CHECK(h0 == h1);
  CHECK_THROWS_AS(build_features(cohort, cohort.trajectories[0], 2), DataError);

  CohortDataset bad = cohort;
  bad.feature_spec.decision_features.clear();
  CHECK_THROWS_AS(bad.feature_map(), DataError);
  bad = cohort;
  bad.feature_spec.main_effect_features = {"a1c", "missing"};
  CHECK_THROWS_WITH_AS(bad.feature_map(), doctest::Contains("missing"), DataError);
}

TEST_CASE("StageFeatures zero non-informative rows") {
  const auto cohort = testutil::make_cohort(
      {{"a", {stage({8, 2}, 1, 1)}, {}}, {"b", {stage({1, 1}, -1, 1), stage({2, 2}, 1, 1)}, {}}},
      {"x", "y"}, 10, 2);
  const StageFeatures f = StageFeatures::build(cohort);
  CHECK(f.decision[1].row(0).isZero());
  CHECK(f.decision[1](1, 1) == 2.0);
  CHECK(f.main_dim() == 3);
}

TEST_CASE("loading a well-formed cohort file") {
  std::istringstream in(
      "id,stage,action,reward,at_risk,x\n"
      "s1,1,1,1,1,0.5\ns1,2,-1,1,1,0.7\ns1,3,1,0.4,1,0.9\n"
      "s2,1,-1,1,1,0.1\ns2,2,1,1,1,0.2\ns2,3,1,0.3,0,0.3\n");
  const CohortDataset c = read_cohort(in);
  CHECK(c.size() == 2);
  CHECK(c.horizon == 3);
  CHECK(c.tau == doctest::Approx(2.4));
  CHECK(c.trajectories[1].censored);
  CHECK(c.trajectories[0].stages[2].reward == doctest::Approx(0.4));

  std::ostringstream out;
  write_cohort(out, c);
  std::istringstream back(out.str());
  LoadOptions opts;
  opts.tau = c.tau;
  const CohortDataset d = read_cohort(back, opts);
  REQUIRE(d.size() == 2);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      CHECK(d.trajectories[i].stages[j].reward == c.trajectories[i].stages[j].reward);
      CHECK(d.trajectories[i].stages[j].action == c.trajectories[i].stages[j].action);
    }
}

TEST_CASE("cohort file errors") {
  auto load = [](const std::string& text) {
    std::istringstream in(text);
    return read_cohort(in);
  };
  const std::string header = "id,stage,action,reward,at_risk,x\n";
  CHECK_THROWS_WITH_AS(load(header + "s1,1,0,1,1,0.5\n"), doctest::Contains("s1,1,0,1,1,0.5"),
                       DataError);
  CHECK_THROWS_AS(load(header + "s1,1,1,1,1,0.5\ns1,3,1,1,1,0.5\n"), DataError);
  CHECK_THROWS_AS(load(header + "s1,1,1,1,1,0.5\ns1,1,1,1,1,0.5\n"), DataError);
  CHECK_THROWS_AS(load(header + "s1,2,1,1,1,0.5\ns1,1,1,1,1,0.5\n"), DataError);
  CHECK_THROWS_AS(load("id,stage,reward\n"), DataError);
  CHECK_THROWS_AS(load(header + "s1,1,1,-2,1,0.5\n"), DataError);
}
