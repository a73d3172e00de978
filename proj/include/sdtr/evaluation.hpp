#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "sdtr/censored_q.hpp"
#include "sdtr/shared_o.hpp"
#include "sdtr/shared_q.hpp"
#include "sdtr/sim_diabetes.hpp"
#include "sdtr/survival_weights.hpp"
#include "sdtr/trajectories.hpp"

namespace sdtr {

enum class Method { cq, csql, csol };

std::string method_name(Method method);          // "cq", "csql", "csol"
std::optional<Method> parse_method(const std::string& name);
std::string method_label(Method method);         // long display name

struct MethodOptions {
  SharedQOptions shared_q;
  SharedOOptions shared_o;
  NuisanceOptions nuisance;
};

struct FittedModel {
  Method method = Method::csql;
  std::variant<StagewiseQModel, SharedQModel, SharedOModel> model;

  const FeatureSpec& feature_spec() const;
  // Decision rule on the covariate layout `covariate_names`.
  Regime regime(const std::vector<std::string>& covariate_names) const;
};

Regime stagewise_regime(const StagewiseQModel& model, const FeatureMap& map);

// Fits the nuisance models on `cohort` and then the method itself.
FittedModel fit_method(const CohortDataset& cohort, Method method,
                       const MethodOptions& options = {});

struct CvReport {
  std::vector<Method> methods;
  std::vector<double> values;            // mean holdout value per method
  std::vector<std::size_t> evaluations;  // holdout scores that entered each mean
  std::size_t repeats = 0;
  Method chosen = Method::csql;
  std::vector<std::string> warnings;
};

// Repeated random half splits; each method is fit on one half and scored on
// the other by value_estimate with nuisance models refit on the training
// half, in both directions.
CvReport cross_validate_methods(const CohortDataset& cohort, const std::vector<Method>& methods,
                                std::size_t repeats, std::uint64_t seed,
                                const MethodOptions& options = {});

struct ConcordanceCurves {
  SurvivalCurve consistent;
  SurvivalCurve inconsistent;
  std::size_t n_consistent = 0;
  std::size_t n_inconsistent = 0;
};

// Kaplan-Meier curves of total follow-up for subjects whose observed
// actions agree with `regime` at every informative stage, and for the rest.
// A group without subjects yields an empty curve.
ConcordanceCurves concordance_km(const CohortDataset& cohort, const Regime& regime);

struct MethodSummary {
  Method method = Method::csql;
  std::vector<double> values;  // one per successful replicate
  double mean = 0.0;
  std::optional<double> sd;    // standard deviation of replicate values
};

struct BenchmarkReport {
  sim::SimConfig config;
  std::size_t n = 0;
  std::size_t replicates = 0;
  std::size_t validation_m = 0;
  std::uint64_t seed = 0;
  double opt_value = 0.0;
  std::vector<MethodSummary> methods;
  std::vector<std::string> warnings;
};

struct BenchmarkOptions {
  MethodOptions methods;
  unsigned threads = 1;
};

BenchmarkReport run_benchmark(const sim::SimConfig& config, std::size_t n, std::size_t replicates,
                              std::size_t validation_m, const std::vector<Method>& methods,
                              std::uint64_t seed, const BenchmarkOptions& options = {});

void write_text(std::ostream& out, const BenchmarkReport& report);
void write_json(std::ostream& out, const BenchmarkReport& report);
void write_text(std::ostream& out, const CvReport& report);
void write_json(std::ostream& out, const CvReport& report);
// Two columns, time and probability, starting at (0, 1).
void write_curve_csv(std::ostream& out, const SurvivalCurve& curve);

}  // namespace sdtr
