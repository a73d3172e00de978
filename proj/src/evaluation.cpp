#include "sdtr/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <iomanip>
#include <mutex>
#include <numeric>
#include <ostream>
#include <sstream>
#include <thread>

#include "json.hpp"

#include "sdtr/error.hpp"

namespace sdtr {

namespace {

// Runs body(i) for i in [0, count) on up to `threads` workers. Results are
// written by index so the outcome does not depend on scheduling.
template <typename Body>
void parallel_for(std::size_t count, unsigned threads, Body&& body) {
  const unsigned workers = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(count)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < count;) body(i);
    });
  }
  for (auto& t : pool) t.join();
}

double sample_sd(const std::vector<double>& v, double mean) {
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

}  // namespace

std::string method_name(Method m) {
  switch (m) {
    case Method::cq: return "cq";
    case Method::csql: return "csql";
    case Method::csol: return "csol";
  }
  return "?";
}

std::optional<Method> parse_method(const std::string& name) {
  if (name == "cq") return Method::cq;
  if (name == "csql") return Method::csql;
  if (name == "csol") return Method::csol;
  return std::nullopt;
}

std::string method_label(Method m) {
  switch (m) {
    case Method::cq: return "censored Q-learning";
    case Method::csql: return "censored shared-Q-learning";
    case Method::csol: return "censored shared-O-learning";
  }
  return "?";
}

const FeatureSpec& FittedModel::feature_spec() const {
  return std::visit([](const auto& m) -> const FeatureSpec& { return m.feature_spec; }, model);
}

Regime stagewise_regime(const StagewiseQModel& model, const FeatureMap& map) {
  return [model, map](std::size_t stage, const Eigen::VectorXd& cov) {
    return recommend_stagewise(model, map.decision_features(cov), stage);
  };
}

Regime FittedModel::regime(const std::vector<std::string>& covariate_names) const {
  const FeatureMap map(feature_spec(), covariate_names);
  if (const auto* q = std::get_if<StagewiseQModel>(&model)) return stagewise_regime(*q, map);
  if (const auto* s = std::get_if<SharedQModel>(&model)) return shared_regime(s->shared_psi, map);
  return shared_regime(std::get<SharedOModel>(model).psi, map);
}

FittedModel fit_method(const CohortDataset& cohort, Method method, const MethodOptions& options) {
  const NuisanceOptions& nu = options.nuisance;
  const CensoringModel cens =
      fit_censoring(cohort, nu.censoring, nu.censoring_regressors, nu.survival_floor);
  FittedModel out;
  out.method = method;
  switch (method) {
    case Method::cq:
      out.model = fit_censored_q(cohort, cens);
      break;
    case Method::csql:
      out.model = fit_censored_shared_q(cohort, cens, options.shared_q);
      break;
    case Method::csol:
      out.model = fit_censored_shared_o(cohort, estimate_propensity(cohort, nu.propensity), cens,
                                        options.shared_o);
      break;
  }
  return out;
}

CvReport cross_validate_methods(const CohortDataset& cohort, const std::vector<Method>& methods,
                                std::size_t repeats, std::uint64_t seed,
                                const MethodOptions& options) {
  if (methods.size() < 2) throw DataError("cross-validation needs at least two methods");
  if (repeats < 1) throw DataError("cross-validation needs at least one repeat");
  if (cohort.size() < 4) throw DataError("cohort too small to split in halves");

  CvReport report;
  report.methods = methods;
  report.repeats = repeats;
  report.values.assign(methods.size(), 0.0);
  report.evaluations.assign(methods.size(), 0);
  const NuisanceOptions& nu = options.nuisance;

  std::vector<std::size_t> order(cohort.size());
  for (std::size_t r = 0; r < repeats; ++r) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng = substream(seed, r);
    std::shuffle(order.begin(), order.end(), rng);
    const std::size_t half = order.size() / 2;
    const std::vector<std::size_t> a(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(half));
    const std::vector<std::size_t> b(order.begin() + static_cast<std::ptrdiff_t>(half), order.end());
    const CohortDataset parts[2] = {cohort.subset(a), cohort.subset(b)};

    for (int dir = 0; dir < 2; ++dir) {
      const CohortDataset& train = parts[dir];
      const CohortDataset& test = parts[1 - dir];
      std::optional<CensoringModel> cens;
      std::optional<PropensityModel> prop;
      try {
        cens = fit_censoring(train, nu.censoring, nu.censoring_regressors, nu.survival_floor);
        prop = estimate_propensity(train, nu.propensity);
      } catch (const std::exception& e) {
        report.warnings.push_back("repeat " + std::to_string(r + 1) +
                                  ": nuisance fit failed, split skipped: " + e.what());
        continue;
      }
      for (std::size_t m = 0; m < methods.size(); ++m) {
        try {
          const FittedModel fit = fit_method(train, methods[m], options);
          const double v = value_estimate(test, fit.regime(test.covariate_names), *prop, *cens);
          report.values[m] += v;
          ++report.evaluations[m];
        } catch (const std::exception& e) {
          report.warnings.push_back("repeat " + std::to_string(r + 1) + ": " +
                                    method_name(methods[m]) + " skipped: " + e.what());
        }
      }
    }
  }
  std::optional<std::size_t> best;
  for (std::size_t m = 0; m < methods.size(); ++m) {
    if (report.evaluations[m] == 0) {
      report.values[m] = std::nan("");
      continue;
    }
    report.values[m] /= static_cast<double>(report.evaluations[m]);
    if (!best || report.values[m] > report.values[*best]) best = m;
  }
  if (!best) throw NumericalError("every method failed in every cross-validation repeat");
  report.chosen = methods[*best];
  return report;
}

ConcordanceCurves concordance_km(const CohortDataset& cohort, const Regime& regime) {
  std::vector<double> t_in, t_out;
  std::vector<bool> e_in, e_out;
  for (const auto& tr : cohort.trajectories) {
    bool agrees = true;
    for (std::size_t j = 0; j < tr.horizon() && agrees; ++j) {
      if (tr.informative(j) && regime(j, tr.stages[j].covariates) != tr.stages[j].action) {
        agrees = false;
      }
    }
    const double total = tr.total_reward();
    const bool failed = !tr.censored && total < cohort.tau;
    (agrees ? t_in : t_out).push_back(total);
    (agrees ? e_in : e_out).push_back(failed);
  }
  ConcordanceCurves out;
  out.n_consistent = t_in.size();
  out.n_inconsistent = t_out.size();
  if (!t_in.empty()) out.consistent = fit_kaplan_meier(t_in, e_in, 0.0);
  if (!t_out.empty()) out.inconsistent = fit_kaplan_meier(t_out, e_out, 0.0);
  out.consistent.floor = out.inconsistent.floor = 0.0;
  return out;
}

BenchmarkReport run_benchmark(const sim::SimConfig& config, std::size_t n, std::size_t replicates,
                              std::size_t validation_m, const std::vector<Method>& methods,
                              std::uint64_t seed, const BenchmarkOptions& options) {
  config.validate();
  if (replicates < 1) throw DataError("replicates must be at least 1");
  if (n < 2) throw DataError("training size must be at least 2");
  if (validation_m < 1) throw DataError("validation size must be at least 1");
  if (methods.empty()) throw DataError("no methods requested");

  BenchmarkReport report;
  report.config = config;
  report.n = n;
  report.replicates = replicates;
  report.validation_m = validation_m;
  report.seed = seed;
  {
    Rng rng = substream(seed, 0xFFFFFFFFull);
    report.opt_value = sim::true_value(sim::optimal_regime(), config, validation_m, rng);
  }

  // values[r][m]; NaN marks a failed fit.
  std::vector<std::vector<double>> values(replicates,
                                          std::vector<double>(methods.size(), std::nan("")));
  std::vector<std::vector<std::string>> notes(replicates);
  parallel_for(replicates, options.threads, [&](std::size_t r) {
    const std::uint64_t rseed = derive_seed(seed, r);
    Rng train_rng = substream(rseed, 0);
    const CohortDataset cohort = sim::simulate_cohort(config, n, train_rng);
    for (std::size_t m = 0; m < methods.size(); ++m) {
      try {
        const FittedModel fit = fit_method(cohort, methods[m], options.methods);
        // Same validation patients for every method within a replicate.
        Rng val_rng = substream(rseed, 1);
        values[r][m] =
            sim::true_value(fit.regime(cohort.covariate_names), config, validation_m, val_rng);
      } catch (const std::exception& e) {
        notes[r].push_back("replicate " + std::to_string(r + 1) + ": " + method_name(methods[m]) +
                           " failed: " + e.what());
      }
    }
  });

  for (const auto& nr : notes) report.warnings.insert(report.warnings.end(), nr.begin(), nr.end());
  for (std::size_t m = 0; m < methods.size(); ++m) {
    MethodSummary s;
    s.method = methods[m];
    for (std::size_t r = 0; r < replicates; ++r)
      if (!std::isnan(values[r][m])) s.values.push_back(values[r][m]);
    if (!s.values.empty()) {
      s.mean = std::accumulate(s.values.begin(), s.values.end(), 0.0) /
               static_cast<double>(s.values.size());
      if (s.values.size() > 1) s.sd = sample_sd(s.values, s.mean);
    } else {
      s.mean = std::nan("");
    }
    report.methods.push_back(std::move(s));
  }
  return report;
}

void write_text(std::ostream& out, const BenchmarkReport& r) {
  out << "scenario " << r.config.scenario << ", T = " << r.config.horizon << ", n = " << r.n
      << ", replicates = " << r.replicates << ", validation = " << r.validation_m
      << ", seed = " << r.seed << "\n";
  out << std::fixed << std::setprecision(3);
  out << std::left << std::setw(30) << "method" << std::right << std::setw(10) << "mean"
      << std::setw(10) << "sd" << std::setw(8) << "reps" << "\n";
  for (const auto& m : r.methods) {
    out << std::left << std::setw(30) << method_label(m.method) << std::right << std::setw(10)
        << m.mean << std::setw(10);
    if (m.sd) {
      out << *m.sd;
    } else {
      out << "-";
    }
    out << std::setw(8) << m.values.size() << "\n";
  }
  out << std::left << std::setw(30) << "optimal rule" << std::right << std::setw(10) << r.opt_value
      << "\n";
  out << "sd is the standard deviation of replicate values\n";
  for (const auto& w : r.warnings) out << "warning: " << w << "\n";
  out.unsetf(std::ios::floatfield);
}

void write_json(std::ostream& out, const BenchmarkReport& r) {
  nlohmann::ordered_json j;
  j["config"] = {{"scenario", r.config.scenario},
                 {"horizon", r.config.horizon},
                 {"censor_upper", r.config.censor_upper},
                 {"stage_length", r.config.stage_length},
                 {"treatment_effects", r.config.treatment_effects},
                 {"discontinuation_rates", r.config.discontinuation_rates}};
  j["n"] = r.n;
  j["replicates"] = r.replicates;
  j["validation_m"] = r.validation_m;
  j["seed"] = r.seed;
  j["opt_value"] = r.opt_value;
  j["methods"] = nlohmann::ordered_json::array();
  for (const auto& m : r.methods) {
    nlohmann::ordered_json e;
    e["method"] = method_name(m.method);
    e["mean"] = m.mean;
    e["sd"] = m.sd ? nlohmann::ordered_json(*m.sd) : nlohmann::ordered_json(nullptr);
    e["effective_replicates"] = m.values.size();
    e["values"] = m.values;
    j["methods"].push_back(std::move(e));
  }
  j["warnings"] = r.warnings;
  out << j.dump(2) << "\n";
}

void write_text(std::ostream& out, const CvReport& r) {
  out << "cross-validated values over " << r.repeats << " repeat(s)\n";
  out << std::fixed << std::setprecision(4);
  for (std::size_t m = 0; m < r.methods.size(); ++m) {
    out << std::left << std::setw(30) << method_label(r.methods[m]) << std::right << std::setw(12)
        << r.values[m] << (r.methods[m] == r.chosen ? "  *" : "") << "\n";
  }
  out << "chosen: " << method_name(r.chosen) << "\n";
  for (const auto& w : r.warnings) out << "warning: " << w << "\n";
  out.unsetf(std::ios::floatfield);
}

void write_json(std::ostream& out, const CvReport& r) {
  nlohmann::ordered_json j;
  j["repeats"] = r.repeats;
  j["methods"] = nlohmann::ordered_json::array();
  for (std::size_t m = 0; m < r.methods.size(); ++m) {
    j["methods"].push_back({{"method", method_name(r.methods[m])},
                            {"value", std::isnan(r.values[m]) ? nlohmann::ordered_json(nullptr)
                                                               : nlohmann::ordered_json(r.values[m])},
                            {"evaluations", r.evaluations[m]}});
  }
  j["chosen"] = method_name(r.chosen);
  j["warnings"] = r.warnings;
  out << j.dump(2) << "\n";
}

void write_curve_csv(std::ostream& out, const SurvivalCurve& curve) {
  out << "time,probability\n" << std::setprecision(10) << 0.0 << "," << 1.0 << "\n";
  for (std::size_t k = 0; k < curve.times.size(); ++k) {
    out << curve.times[k] << "," << curve.probabilities[k] << "\n";
  }
}

}  // namespace sdtr
