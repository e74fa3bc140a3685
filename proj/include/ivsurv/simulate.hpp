#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "ivsurv/dataset.hpp"
#include "ivsurv/estimator.hpp"
#include "ivsurv/nuisance.hpp"
#include "ivsurv/rng.hpp"

namespace ivsurv {

enum class DgpSet { set1_weak, set1_strong, set2, set3 };

std::string dgp_set_name(DgpSet set);
DgpSet dgp_set_from_name(const std::string& name);

/// Which nuisance models are fitted with the deliberately wrong feature
/// set (covariate omissions plus transformed covariates). Analysis-side
/// only: generated data never depends on these flags.
struct MisspecFlags {
  bool outcome = false;
  bool treatment = false;
  bool censoring = false;
  bool instrument = false;
};

/// Scenario grid: 1 = all correct; 2 = outcome; 3 = treatment;
/// 4 = censoring; 5 = instrument; 6 = censoring + instrument;
/// 7 = treatment + censoring.
MisspecFlags scenario_flags(int scenario);

struct DgpSpec {
  DgpSet set = DgpSet::set1_weak;
  std::size_t n = 1000;
  int scenario = 1;  // only set2 supports scenarios > 1
  std::uint64_t seed = 0;
};

struct LatentRecord {
  double u = 0.0;            // unmeasured confounder
  double event_time = 0.0;   // uncensored failure draw
  double censor_time = 0.0;  // censoring draw
  double instrument_prob = 0.0;
};

struct GeneratedData {
  Cohort cohort;
  std::vector<LatentRecord> latent;
  std::size_t clamped_treatment_draws = 0;  // probabilities clamped into [0,1]
};

GeneratedData generate(const DgpSpec& spec);

// True-model components, exposed so tests and oracles can evaluate them
// directly. The treatment probability is the raw logistic-plus-shift value
// before clamping to [0,1].
double dgp_instrument_prob(DgpSet set, const Eigen::VectorXd& x);
double dgp_treatment_prob_raw(DgpSet set, const Eigen::VectorXd& x, bool z, double u);
double dgp_event_mean(DgpSet set, const Eigen::VectorXd& x, bool a, double u);
double dgp_censor_mean(DgpSet set, const Eigen::VectorXd& x, bool a);

/// True ATE at the horizon via a potential-outcome simulation: draws of
/// (X, U) with a shared exponential quantile produce both potential failure
/// times. Uses an internal fixed seed so the value depends only on the set,
/// horizon, and replication count; results are cached per process.
double true_ate(DgpSet set, double horizon, std::size_t oracle_reps = 1000000);

/// Core used by true_ate: mean over draws of 1(T1 <= t) - 1(T0 <= t) where
/// draw_pair produces one (T1, T0) pair per call.
double potential_cif_contrast(
    const std::function<std::pair<double, double>(RngStream&)>& draw_pair,
    double horizon, std::size_t reps, std::uint64_t seed);

/// Learners for a scenario: correct maps fit (z, x1..x4) survival/propensity
/// models and (x1..x4) prevalence; misspecified maps substitute transformed
/// covariates and omit the documented columns.
LearnerSpec scenario_learners(DgpSet set, int scenario);
SurvivalFitter scenario_gformula_fitter(DgpSet set, int scenario);

struct McCell {
  double bias = 0.0;
  double mean_abs_bias = 0.0;
  double rmse = 0.0;
  double coverage = 0.0;
  double mean_ci_width = 0.0;
};

/// Aggregates one method x horizon cell. When per-replicate CI bounds are
/// absent, intervals use the sampling standard error across replicates.
McCell aggregate_cell(std::span<const double> estimates,
                      std::span<const double> ci_low, std::span<const double> ci_high,
                      double truth, double alpha);

struct McOptions {
  std::size_t replicates = 500;
  std::vector<double> quantiles = {0.3, 0.4, 0.5, 0.6};
  std::uint64_t base_seed = 1;
  int workers = 1;
  std::size_t oracle_reps = 1000000;
  std::optional<int> k_folds;
  double alpha = 0.05;
  double max_failure_fraction = 0.05;
};

struct McReport {
  std::string set;
  int scenario = 1;
  std::size_t n = 0;
  std::size_t replicates = 0;  // requested
  std::size_t completed = 0;
  std::size_t failures = 0;
  std::uint64_t seed = 0;
  std::size_t oracle_reps = 0;
  std::vector<double> quantiles;
  std::vector<double> horizons;
  std::vector<double> truths;
  std::vector<Method> methods;
  std::vector<std::vector<McCell>> cells;  // [method][horizon]
  double mean_event_fraction = 0.0;
  double mean_clamped_fraction = 0.0;
  std::vector<std::string> failure_samples;  // first few failure messages

  nlohmann::json to_json() const;
  std::string to_csv() const;
};

/// Horizons frozen from the observed-time quantiles of one calibration
/// draw of size 10*n under the same design.
std::vector<double> mc_horizons(const DgpSpec& spec, const std::vector<double>& quantiles,
                                std::uint64_t base_seed);

/// Monte Carlo study: per replicate, generate data, fit the scenario's
/// nuisances, estimate with each method at each horizon; report bias, RMSE,
/// coverage, and CI width against the potential-outcome truth. Replicate r
/// always uses the stream derived from (base_seed, r), so reports are
/// byte-identical for any worker count.
McReport run_mc(const DgpSpec& spec, const std::vector<Method>& methods,
                const McOptions& options = {});

}  // namespace ivsurv
