// sdtr: simulate cohorts, fit shared-parameter treatment regimes to censored
// survival data, and evaluate or benchmark them.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"

#include "sdtr/error.hpp"
#include "sdtr/evaluation.hpp"
#include "sdtr/serialization.hpp"
#include "sdtr/sim_diabetes.hpp"
#include "sdtr/trajectories.hpp"

namespace {

enum ExitCode { kOk = 0, kUsage = 2, kData = 3, kNumerical = 4 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataArgs {
  std::string path;
  char delimiter = ',';
  std::optional<std::size_t> horizon;
  std::optional<double> tau;
  std::vector<std::string> main_features;
  std::vector<std::string> decision_features;
  bool no_intercept = false;
};

struct NuisanceArgs {
  std::string censoring = "km";
  std::vector<std::string> regressors;
  double floor = sdtr::kDefaultSurvivalFloor;
  std::string propensity = "proportion";
};

void add_data_options(CLI::App* cmd, DataArgs& d) {
  cmd->add_option("--data", d.path, "cohort CSV (id,stage,action,reward,at_risk,covariates...)")
      ->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("--delimiter", d.delimiter, "field delimiter");
  cmd->add_option("--horizon", d.horizon, "number of stages T (default: longest subject)")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--tau", d.tau, "truncation time (default: largest total reward)")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--main-features", d.main_features, "covariates in the main-effect term")
      ->delimiter(',');
  cmd->add_option("--decision-features", d.decision_features, "covariates in the decision term")
      ->delimiter(',');
  cmd->add_flag("--no-intercept", d.no_intercept, "drop the intercept from both terms");
}

void add_nuisance_options(CLI::App* cmd, NuisanceArgs& a) {
  cmd->add_option("--censoring", a.censoring, "censoring model")
      ->check(CLI::IsMember({"km", "cox"}));
  cmd->add_option("--censor-regressors", a.regressors, "baseline covariates for the Cox model")
      ->delimiter(',');
  cmd->add_option("--floor", a.floor, "lower bound on estimated censoring survival")
      ->check(CLI::Range(1e-6, 1.0));
  cmd->add_option("--propensity", a.propensity, "propensity model")
      ->check(CLI::IsMember({"proportion", "logistic"}));
}

sdtr::CohortDataset load_data(const DataArgs& d) {
  sdtr::LoadOptions opts;
  opts.delimiter = d.delimiter;
  opts.horizon = d.horizon;
  opts.tau = d.tau;
  if (!d.main_features.empty() || !d.decision_features.empty() || d.no_intercept) {
    {
      // Feature lists default to every covariate column of the header.
      std::ifstream in(d.path);
      std::string header;
      std::getline(in, header);
      std::stringstream ss(header);
      std::string field;
      std::vector<std::string> all;
      for (int k = 0; std::getline(ss, field, d.delimiter); ++k)
        if (k >= 5) all.push_back(field);
      sdtr::FeatureSpec spec = sdtr::FeatureSpec::all_covariates(all);
      if (!d.main_features.empty()) spec.main_effect_features = d.main_features;
      if (!d.decision_features.empty()) spec.decision_features = d.decision_features;
      spec.include_intercept = !d.no_intercept;
      opts.feature_spec = spec;
    }
  }
  return sdtr::load_cohort(d.path, opts);
}

sdtr::NuisanceOptions nuisance(const NuisanceArgs& a) {
  sdtr::NuisanceOptions n;
  n.censoring = a.censoring == "cox" ? sdtr::CensoringVariant::cox : sdtr::CensoringVariant::kaplan_meier;
  n.censoring_regressors = a.regressors;
  n.survival_floor = a.floor;
  n.propensity = a.propensity == "logistic" ? sdtr::PropensityVariant::logistic
                                            : sdtr::PropensityVariant::stage_proportion;
  return n;
}

std::vector<sdtr::Method> parse_methods(const std::vector<std::string>& names) {
  std::vector<sdtr::Method> out;
  for (const auto& n : names) {
    const auto m = sdtr::parse_method(n);
    if (!m) throw UsageError("unknown method '" + n + "'; valid methods are cq, csql, csol");
    out.push_back(*m);
  }
  return out;
}

// Writes to `path`, or to stdout when path is empty or "-".
template <typename Fn>
void emit(const std::string& path, Fn&& fn) {
  if (path.empty() || path == "-") {
    fn(std::cout);
    return;
  }
  std::ofstream out(path);
  if (!out) throw sdtr::DataError("cannot write " + path);
  fn(out);
  if (!out) throw sdtr::DataError("write failed for " + path);
}

unsigned default_threads() { return std::max(1u, std::thread::hardware_concurrency()); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Shared-parameter dynamic treatment regimes for censored outcomes"};
  app.require_subcommand(1);
  app.set_config("--config", "", "key=value configuration file; flags override it");

  std::uint64_t seed = 1;
  auto add_seed = [&](CLI::App* cmd) {
    cmd->add_option("--seed", seed, "random seed")->envname("SDTR_SEED");
  };

  // simulate
  auto* sim_cmd = app.add_subcommand("simulate", "write a simulated diabetes cohort");
  sdtr::sim::SimConfig sim_cfg;
  std::size_t sim_n = 1000;
  std::string sim_out;
  sim_cmd->add_option("--scenario", sim_cfg.scenario, "outcome scenario")->check(CLI::IsMember({1, 2}));
  sim_cmd->add_option("--n", sim_n, "number of patients")->check(CLI::PositiveNumber);
  sim_cmd->add_option("--T", sim_cfg.horizon, "number of stages")->check(CLI::PositiveNumber);
  sim_cmd->add_option("--censor-upper", sim_cfg.censor_upper, "censoring time ~ U(0, upper)")
      ->check(CLI::PositiveNumber);
  sim_cmd->add_option("--out", sim_out, "output CSV (default stdout)");
  add_seed(sim_cmd);

  // fit
  auto* fit_cmd = app.add_subcommand("fit", "fit a regime to a cohort file");
  DataArgs fit_data;
  NuisanceArgs fit_nu;
  std::string fit_method = "csql", fit_out;
  sdtr::MethodOptions fit_opts;
  add_data_options(fit_cmd, fit_data);
  add_nuisance_options(fit_cmd, fit_nu);
  fit_cmd->add_option("--method", fit_method, "cq, csql or csol");
  fit_cmd->add_option("--epsilon", fit_opts.shared_q.epsilon, "shared-Q convergence threshold")
      ->check(CLI::PositiveNumber);
  fit_cmd->add_option("--max-iter", fit_opts.shared_q.max_iterations, "shared-Q iteration cap")
      ->check(CLI::PositiveNumber);
  fit_cmd->add_option("--k", fit_opts.shared_o.k, "shared-O smoothing parameter")
      ->check(CLI::PositiveNumber);
  fit_cmd->add_option("--l1", fit_opts.shared_o.l1_weight, "shared-O L1 penalty")
      ->check(CLI::NonNegativeNumber);
  fit_cmd->add_option("--out", fit_out, "model JSON (default stdout)");

  // evaluate
  auto* eval_cmd = app.add_subcommand("evaluate", "estimate the value of a saved model");
  DataArgs eval_data;
  NuisanceArgs eval_nu;
  std::string eval_model, km_out;
  add_data_options(eval_cmd, eval_data);
  add_nuisance_options(eval_cmd, eval_nu);
  eval_cmd->add_option("--model", eval_model, "model JSON written by fit")
      ->required()
      ->check(CLI::ExistingFile);
  eval_cmd->add_option("--km-out", km_out,
                       "prefix for concordance curves (<prefix>_consistent.csv, _inconsistent.csv)");

  // cv
  auto* cv_cmd = app.add_subcommand("cv", "cross-validate methods on a cohort file");
  DataArgs cv_data;
  NuisanceArgs cv_nu;
  std::vector<std::string> cv_methods{"cq", "csql", "csol"};
  std::size_t cv_repeats = 10;
  std::string cv_json, cv_text;
  add_data_options(cv_cmd, cv_data);
  add_nuisance_options(cv_cmd, cv_nu);
  cv_cmd->add_option("--methods", cv_methods, "methods to compare")->delimiter(',');
  cv_cmd->add_option("--repeats", cv_repeats, "random half splits")->check(CLI::PositiveNumber);
  cv_cmd->add_option("--json", cv_json, "structured report path");
  cv_cmd->add_option("--report", cv_text, "text report path (default stdout)");
  add_seed(cv_cmd);

  // benchmark
  auto* bench_cmd = app.add_subcommand("benchmark", "simulation benchmark of all methods");
  sdtr::sim::SimConfig bench_cfg;
  std::size_t bench_n = 2000, bench_reps = 100, bench_m = 20000;
  std::vector<std::string> bench_methods{"cq", "csql", "csol"};
  unsigned bench_threads = default_threads();
  std::string bench_json, bench_text;
  bench_cmd->add_option("--scenario", bench_cfg.scenario, "outcome scenario")
      ->check(CLI::IsMember({1, 2}));
  bench_cmd->add_option("--T", bench_cfg.horizon, "number of stages")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--n", bench_n, "training cohort size")->check(CLI::Range(2, 100000000));
  bench_cmd->add_option("--replicates", bench_reps, "replicates")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--validation", bench_m, "validation patients per regime")
      ->check(CLI::PositiveNumber);
  bench_cmd->add_option("--methods", bench_methods, "methods")->delimiter(',');
  bench_cmd->add_option("--threads", bench_threads, "worker threads")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--json", bench_json, "structured report path");
  bench_cmd->add_option("--report", bench_text, "text report path (default stdout)");
  add_seed(bench_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*sim_cmd) {
      sim_cfg.seed = seed;
      sdtr::Rng rng(seed);
      const sdtr::CohortDataset cohort = sdtr::sim::simulate_cohort(sim_cfg, sim_n, rng);
      std::cerr << "simulate: scenario=" << sim_cfg.scenario << " n=" << sim_n
                << " T=" << sim_cfg.horizon << " censor_upper=" << sim_cfg.censor_upper
                << " seed=" << seed << "\n";
      emit(sim_out, [&](std::ostream& out) { sdtr::write_cohort(out, cohort); });
    } else if (*fit_cmd) {
      const auto method = sdtr::parse_method(fit_method);
      if (!method) throw UsageError("unknown method '" + fit_method + "'; valid methods are cq, csql, csol");
      const sdtr::CohortDataset cohort = load_data(fit_data);
      fit_opts.nuisance = nuisance(fit_nu);
      const sdtr::FittedModel model = sdtr::fit_method(cohort, *method, fit_opts);
      if (const auto* s = std::get_if<sdtr::SharedQModel>(&model.model)) {
        std::cerr << "fit: csql " << (s->converged ? "converged" : "did not converge") << " after "
                  << s->iterations << " iterations (last change " << s->last_change << ")\n";
      } else if (const auto* o = std::get_if<sdtr::SharedOModel>(&model.model)) {
        std::cerr << "fit: csol objective " << o->objective_at_solution << " after "
                  << o->iterations << " iterations" << (o->converged ? "" : " (not converged)")
                  << "\n";
      }
      emit(fit_out, [&](std::ostream& out) { sdtr::save_model(out, model); });
    } else if (*eval_cmd) {
      const sdtr::FittedModel model = sdtr::load_model_file(eval_model);
      const sdtr::CohortDataset cohort = load_data(eval_data);
      const sdtr::NuisanceOptions nu = nuisance(eval_nu);
      const sdtr::Regime regime = model.regime(cohort.covariate_names);
      const auto cens = sdtr::fit_censoring(cohort, nu.censoring, nu.censoring_regressors, nu.survival_floor);
      const auto prop = sdtr::estimate_propensity(cohort, nu.propensity);
      const double value = sdtr::value_estimate(cohort, regime, prop, cens);
      std::cout << "method " << sdtr::method_name(model.method) << "\n";
      std::cout << "value " << std::setprecision(10) << value << "\n";
      if (!km_out.empty()) {
        const auto curves = sdtr::concordance_km(cohort, regime);
        emit(km_out + "_consistent.csv",
             [&](std::ostream& out) { sdtr::write_curve_csv(out, curves.consistent); });
        emit(km_out + "_inconsistent.csv",
             [&](std::ostream& out) { sdtr::write_curve_csv(out, curves.inconsistent); });
        std::cout << "consistent " << curves.n_consistent << "\ninconsistent "
                  << curves.n_inconsistent << "\n";
      }
    } else if (*cv_cmd) {
      const auto methods = parse_methods(cv_methods);
      const sdtr::CohortDataset cohort = load_data(cv_data);
      sdtr::MethodOptions opts;
      opts.nuisance = nuisance(cv_nu);
      const sdtr::CvReport report = sdtr::cross_validate_methods(cohort, methods, cv_repeats, seed, opts);
      emit(cv_text, [&](std::ostream& out) { sdtr::write_text(out, report); });
      if (!cv_json.empty()) emit(cv_json, [&](std::ostream& out) { sdtr::write_json(out, report); });
    } else if (*bench_cmd) {
      const auto methods = parse_methods(bench_methods);
      bench_cfg.seed = seed;
      sdtr::BenchmarkOptions opts;
      opts.threads = bench_threads;
      const sdtr::BenchmarkReport report =
          sdtr::run_benchmark(bench_cfg, bench_n, bench_reps, bench_m, methods, seed, opts);
      emit(bench_text, [&](std::ostream& out) { sdtr::write_text(out, report); });
      if (!bench_json.empty()) emit(bench_json, [&](std::ostream& out) { sdtr::write_json(out, report); });
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const sdtr::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const sdtr::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  }
  return kOk;
}
