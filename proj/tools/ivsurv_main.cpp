// Command-line front end: estimate treatment effects on user data, run the
// simulation designs, and build preference-based instruments.
//
// Exit codes: 0 ok, 2 configuration error, 3 data error, 4 estimation error.
// Progress and warnings go to stderr; data artifacts go only to --output
// (or stdout when no output path is given).

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "ivsurv/dataset.hpp"
#include "ivsurv/errors.hpp"
#include "ivsurv/estimator.hpp"
#include "ivsurv/nuisance.hpp"
#include "ivsurv/simulate.hpp"

using nlohmann::json;

namespace {

struct Flags {
  std::string config_path;
  std::optional<std::string> input, output, format, set, censoring_arm;
  std::optional<std::vector<std::string>> methods;
  std::optional<std::vector<double>> horizons, quantiles;
  std::optional<int> k_folds, workers, scenario, min_patients;
  std::optional<double> alpha, threshold;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> reps, n, oracle_reps;
};

json load_config(const std::string& path, const std::string& command) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw ivsurv::ConfigError("cannot open config file: " + path);
  json cfg;
  try {
    in >> cfg;
  } catch (const json::exception& e) {
    throw ivsurv::ConfigError("invalid config JSON: " + std::string(e.what()));
  }
  if (!cfg.is_object()) throw ivsurv::ConfigError("config must be a JSON object");
  if (cfg.contains("command") && cfg["command"].get<std::string>() != command) {
    throw ivsurv::ConfigError("config command '" +
                              cfg["command"].get<std::string>() +
                              "' does not match subcommand '" + command + "'");
  }
  return cfg;
}

template <typename T>
T merged(const std::optional<T>& flag, const json& cfg, const std::string& key,
         T fallback) {
  if (flag) return *flag;
  if (cfg.contains(key)) {
    try {
      return cfg.at(key).get<T>();
    } catch (const json::exception&) {
      throw ivsurv::ConfigError("config key '" + key + "' has the wrong type");
    }
  }
  return fallback;
}

template <typename T>
std::optional<T> merged_opt(const std::optional<T>& flag, const json& cfg,
                            const std::string& key) {
  if (flag) return flag;
  if (cfg.contains(key) && !cfg.at(key).is_null()) {
    try {
      return cfg.at(key).get<T>();
    } catch (const json::exception&) {
      throw ivsurv::ConfigError("config key '" + key + "' has the wrong type");
    }
  }
  return std::nullopt;
}

ivsurv::CsvSchema schema_from_config(const json& cfg) {
  ivsurv::CsvSchema schema;
  if (!cfg.contains("schema")) return schema;
  const json& s = cfg.at("schema");
  if (s.contains("time")) schema.time = s.at("time").get<std::string>();
  if (s.contains("event")) schema.event = s.at("event").get<std::string>();
  if (s.contains("treatment")) schema.treatment = s.at("treatment").get<std::string>();
  if (s.contains("instrument"))
    schema.instrument = s.at("instrument").get<std::string>();
  if (s.contains("provider")) schema.provider = s.at("provider").get<std::string>();
  if (s.contains("covariates"))
    schema.covariates = s.at("covariates").get<std::vector<std::string>>();
  return schema;
}

std::vector<ivsurv::Method> parse_methods(const std::vector<std::string>& names) {
  std::vector<ivsurv::Method> out;
  for (const auto& n : names) out.push_back(ivsurv::method_from_name(n));
  if (out.empty()) throw ivsurv::ConfigError("empty method list");
  return out;
}

// Artifact sink: --output path or stdout.
void write_artifact(const std::optional<std::string>& path, const std::string& body) {
  if (path && !path->empty() && *path != "-") {
    std::ofstream out(*path, std::ios::binary);
    if (!out) throw ivsurv::DataError("cannot write output file: " + *path);
    out << body;
  } else {
    std::cout << body;
  }
}

int cmd_estimate(const Flags& flags) {
  const json cfg = load_config(flags.config_path, "estimate");
  const std::string input = merged(flags.input, cfg, "input", std::string());
  if (input.empty()) throw ivsurv::ConfigError("estimate requires --input");
  const std::string format = merged(flags.format, cfg, "format", std::string("csv"));
  if (format != "csv" && format != "json") {
    throw ivsurv::ConfigError("format must be csv or json");
  }
  const double alpha = merged(flags.alpha, cfg, "alpha", 0.05);
  if (!(alpha > 0.0 && alpha < 1.0)) throw ivsurv::ConfigError("alpha must be in (0,1)");
  const std::uint64_t seed = merged(flags.seed, cfg, "seed", std::uint64_t{0});
  const auto k_folds = merged_opt(flags.k_folds, cfg, "k_folds");
  if (k_folds && *k_folds < 2) throw ivsurv::ConfigError("K must be >= 2 or omitted");
  const auto methods = parse_methods(merged(flags.methods, cfg, "methods",
                                            std::vector<std::string>{"onestep"}));

  const ivsurv::Cohort cohort = ivsurv::load_cohort(input, schema_from_config(cfg));
  std::cerr << "loaded " << cohort.size() << " records ("
            << cohort.covariate_dim() << " covariates) from " << input << "\n";

  std::vector<double> horizons = merged(flags.horizons, cfg, "horizons",
                                        std::vector<double>{});
  if (horizons.empty()) {
    const std::vector<double> quantiles =
        merged(flags.quantiles, cfg, "quantiles",
               std::vector<double>{0.3, 0.4, 0.5, 0.6});
    for (double q : quantiles) horizons.push_back(ivsurv::event_time_quantile(cohort, q));
  }
  if (horizons.empty()) throw ivsurv::ConfigError("no horizons requested");

  const std::string censoring_arm =
      merged(flags.censoring_arm, cfg, "censoring_arm", std::string("instrument"));
  ivsurv::ArmSource cens_arm;
  if (censoring_arm == "instrument") {
    cens_arm = ivsurv::ArmSource::instrument;
  } else if (censoring_arm == "treatment") {
    cens_arm = ivsurv::ArmSource::treatment;
  } else {
    throw ivsurv::ConfigError("censoring_arm must be instrument or treatment");
  }

  // learner selection by registry name; cox/logistic are in-repo
  std::string cif_name = "cox", cens_name = "cox", prop_name = "logistic",
              prev_name = "logistic";
  if (cfg.contains("learners")) {
    const json& l = cfg.at("learners");
    if (l.contains("cif")) cif_name = l.at("cif").get<std::string>();
    if (l.contains("censoring")) cens_name = l.at("censoring").get<std::string>();
    if (l.contains("propensity")) prop_name = l.at("propensity").get<std::string>();
    if (l.contains("prevalence")) prev_name = l.at("prevalence").get<std::string>();
  }
  const int p = cohort.covariate_dim();
  ivsurv::LearnerSpec learners;
  learners.fit_cif = ivsurv::make_survival_fitter(
      cif_name, ivsurv::FeatureMap::arm_plus_covariates(ivsurv::ArmSource::instrument, p),
      ivsurv::SurvivalOutcome::failure);
  learners.fit_censoring = ivsurv::make_survival_fitter(
      cens_name, ivsurv::FeatureMap::arm_plus_covariates(cens_arm, p),
      ivsurv::SurvivalOutcome::censoring);
  learners.fit_propensity = ivsurv::make_binary_fitter(
      prop_name, ivsurv::FeatureMap::arm_plus_covariates(ivsurv::ArmSource::instrument, p),
      ivsurv::BinaryTarget::treatment);
  learners.fit_prevalence = ivsurv::make_binary_fitter(
      prev_name, ivsurv::FeatureMap::covariates(p), ivsurv::BinaryTarget::instrument);

  const bool needs_bundle =
      std::find(methods.begin(), methods.end(), ivsurv::Method::plugin) != methods.end() ||
      std::find(methods.begin(), methods.end(), ivsurv::Method::onestep) != methods.end();

  ivsurv::BundleAccessor bundle;
  if (needs_bundle) {
    std::optional<ivsurv::FoldAssignment> folds;
    if (k_folds) folds = ivsurv::make_folds(cohort.size(), *k_folds, seed);
    bundle = ivsurv::BundleAccessor::fit(cohort, learners, folds);
    if (k_folds) std::cerr << "cross-fitting with K=" << *k_folds << " folds\n";
  }

  std::vector<ivsurv::AteResult> results;
  for (double t : horizons) {
    for (ivsurv::Method m : methods) {
      switch (m) {
        case ivsurv::Method::plugin:
          results.push_back(ivsurv::estimate_plugin(cohort, bundle, t));
          std::cerr << "plugin t=" << t
                    << ": no per-dataset standard error (see docs)\n";
          break;
        case ivsurv::Method::onestep: {
          auto fit = ivsurv::estimate_onestep(cohort, bundle, t, alpha);
          if (fit.result.clipped_fraction > 0.0) {
            std::cerr << "onestep t=" << t << ": clipped fraction "
                      << fit.result.clipped_fraction << "\n";
          }
          if (fit.result.degenerate_variance) {
            std::cerr << "onestep t=" << t << ": degenerate variance warning\n";
          }
          results.push_back(fit.result);
          break;
        }
        case ivsurv::Method::gformula:
          results.push_back(ivsurv::estimate_gformula(cohort, t));
          break;
      }
    }
  }

  std::string body;
  if (format == "csv") {
    body = ivsurv::ate_csv_header() + "\n";
    for (const auto& r : results) body += ivsurv::ate_csv_row(r) + "\n";
  } else {
    json arr = json::array();
    for (const auto& r : results) arr.push_back(ivsurv::ate_to_json(r));
    body = json{{"input", input}, {"alpha", alpha}, {"seed", seed},
                {"results", std::move(arr)}}
               .dump(2) +
           "\n";
  }
  write_artifact(merged_opt(flags.output, cfg, "output"), body);
  return 0;
}

int cmd_simulate(const Flags& flags) {
  const json cfg = load_config(flags.config_path, "simulate");
  ivsurv::DgpSpec spec;
  spec.set = ivsurv::dgp_set_from_name(
      merged(flags.set, cfg, "set", std::string("set1_weak")));
  spec.n = merged(flags.n, cfg, "n", std::size_t{1000});
  spec.scenario = merged(flags.scenario, cfg, "scenario", 1);

  ivsurv::McOptions opts;
  opts.replicates = merged(flags.reps, cfg, "reps", std::size_t{500});
  opts.quantiles = merged(flags.quantiles, cfg, "quantiles",
                          std::vector<double>{0.3, 0.4, 0.5, 0.6});
  opts.base_seed = merged(flags.seed, cfg, "seed", std::uint64_t{1});
  opts.workers = merged(flags.workers, cfg, "workers", 1);
  opts.alpha = merged(flags.alpha, cfg, "alpha", 0.05);
  opts.oracle_reps = merged(flags.oracle_reps, cfg, "oracle_reps",
                            std::size_t{1000000});
  const auto k_folds = merged_opt(flags.k_folds, cfg, "k_folds");
  if (k_folds && *k_folds < 2) throw ivsurv::ConfigError("K must be >= 2 or omitted");
  opts.k_folds = k_folds;

  const auto methods = parse_methods(merged(
      flags.methods, cfg, "methods",
      std::vector<std::string>{"gformula", "plugin", "onestep"}));
  const std::string format = merged(flags.format, cfg, "format", std::string("json"));
  if (format != "csv" && format != "json") {
    throw ivsurv::ConfigError("format must be csv or json");
  }

  std::cerr << "simulating " << ivsurv::dgp_set_name(spec.set) << " scenario "
            << spec.scenario << ": B=" << opts.replicates << ", n=" << spec.n
            << ", workers=" << opts.workers << "\n";
  const ivsurv::McReport report = ivsurv::run_mc(spec, methods, opts);
  if (report.failures > 0) {
    std::cerr << report.failures << " replicate(s) failed and were excluded\n";
    for (const auto& msg : report.failure_samples) std::cerr << "  " << msg << "\n";
  }
  std::cerr << "mean event fraction " << report.mean_event_fraction
            << ", mean clamped treatment-probability fraction "
            << report.mean_clamped_fraction << "\n";

  const std::string body =
      format == "csv" ? report.to_csv() : report.to_json().dump(2) + "\n";
  write_artifact(merged_opt(flags.output, cfg, "output"), body);
  return 0;
}

int cmd_build_iv(const Flags& flags) {
  const json cfg = load_config(flags.config_path, "build-iv");
  const std::string input = merged(flags.input, cfg, "input", std::string());
  if (input.empty()) throw ivsurv::ConfigError("build-iv requires --input");
  const auto threshold = merged_opt(flags.threshold, cfg, "threshold");
  if (!threshold) throw ivsurv::ConfigError("build-iv requires --threshold");
  if (!(*threshold > 0.0 && *threshold < 1.0)) {
    throw ivsurv::ConfigError("threshold must be in (0,1)");
  }
  const int min_patients = merged(flags.min_patients, cfg, "min_patients", 1);

  const auto encounters = ivsurv::load_encounters(input, schema_from_config(cfg));
  ivsurv::PreferenceIvReport report;
  const ivsurv::Cohort cohort =
      ivsurv::build_preference_iv(encounters, *threshold, min_patients, &report);

  for (const auto& p : report.providers) {
    std::cerr << "provider " << p.provider_id << ": n=" << p.n_encounters
              << " treated_fraction=" << p.fraction_treated << " -> "
              << (p.kept ? (p.instrument ? "instrument=1" : "instrument=0")
                         : "excluded")
              << "\n";
  }
  std::cerr << report.rows_excluded << " rows excluded\n";

  const auto output = merged_opt(flags.output, cfg, "output");
  if (output && !output->empty() && *output != "-") {
    ivsurv::write_cohort(cohort, *output);
  } else {
    ivsurv::write_cohort(cohort, std::cout);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"doubly robust instrumental-variable treatment effects for "
               "right-censored time-to-event data"};
  app.require_subcommand(1);

  Flags flags;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", flags.config_path, "JSON config file (flags win)");
    sub->add_option("--input", flags.input, "input CSV path");
    sub->add_option("--output", flags.output, "output artifact path (default stdout)");
    sub->add_option("--format", flags.format, "output format: csv or json");
    sub->add_option("--seed", flags.seed, "RNG seed");
  };

  CLI::App* est = app.add_subcommand("estimate", "estimate the ATE on a cohort CSV");
  add_common(est);
  est->add_option("--methods", flags.methods, "comma-separated estimator list")
      ->delimiter(',');
  est->add_option("--horizons", flags.horizons, "explicit horizon times")
      ->delimiter(',');
  est->add_option("--quantiles", flags.quantiles, "horizon quantiles of observed time")
      ->delimiter(',');
  est->add_option("--k-folds", flags.k_folds, "cross-fitting folds (>= 2)");
  est->add_option("--alpha", flags.alpha, "CI level (default 0.05)");
  est->add_option("--censoring-arm", flags.censoring_arm,
                  "censoring model arm: instrument (default) or treatment");

  CLI::App* sim = app.add_subcommand("simulate", "run a Monte Carlo study");
  add_common(sim);
  sim->add_option("--set", flags.set,
                  "design: set1_weak, set1_strong, set2, set3");
  sim->add_option("--reps", flags.reps, "Monte Carlo replicates");
  sim->add_option("--n", flags.n, "sample size per replicate");
  sim->add_option("--methods", flags.methods, "comma-separated estimator list")
      ->delimiter(',');
  sim->add_option("--quantiles", flags.quantiles, "horizon quantiles")->delimiter(',');
  sim->add_option("--scenario", flags.scenario, "set2 misspecification scenario 1-7");
  sim->add_option("--workers", flags.workers, "worker threads (results invariant)");
  sim->add_option("--k-folds", flags.k_folds, "cross-fitting folds (>= 2)");
  sim->add_option("--alpha", flags.alpha, "CI level");
  sim->add_option("--oracle-reps", flags.oracle_reps,
                  "potential-outcome draws for the true ATE");

  CLI::App* iv = app.add_subcommand("build-iv",
                                    "derive a preference-based instrument from "
                                    "provider encounter records");
  add_common(iv);
  iv->add_option("--threshold", flags.threshold,
                 "high-preference cutoff on the treated fraction, in (0,1)");
  iv->add_option("--min-patients", flags.min_patients,
                 "drop providers with fewer encounters than this");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    return 2;
  }

  try {
    if (est->parsed()) return cmd_estimate(flags);
    if (sim->parsed()) return cmd_simulate(flags);
    if (iv->parsed()) return cmd_build_iv(flags);
    std::cerr << "no subcommand\n";
    return 2;
  } catch (const ivsurv::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const ivsurv::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const ivsurv::EstimationError& e) {
    std::cerr << "estimation error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
}
