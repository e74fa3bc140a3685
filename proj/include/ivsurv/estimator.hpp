#pragma once

#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "ivsurv/dataset.hpp"
#include "ivsurv/nuisance.hpp"

namespace ivsurv {

/// Probabilities entering influence-function denominators are clamped to
/// [kProbClipFloor, 1 - kProbClipFloor]; clamped evaluations are counted.
inline constexpr double kProbClipFloor = 1e-4;

/// |treatment contrast| below this floor raises WeakInstrumentError rather
/// than silently truncating.
inline constexpr double kWaldDenominatorFloor = 1e-3;

struct ClipCounter {
  long long clipped = 0;
  long long total = 0;

  double clip(double v) {
    ++total;
    if (v < kProbClipFloor) {
      ++clipped;
      return kProbClipFloor;
    }
    if (v > 1.0 - kProbClipFloor) {
      ++clipped;
      return 1.0 - kProbClipFloor;
    }
    return v;
  }
  double fraction() const {
    return total == 0 ? 0.0 : static_cast<double>(clipped) / static_cast<double>(total);
  }
};

enum class Method { plugin, onestep, gformula };

std::string method_name(Method m);
Method method_from_name(const std::string& name);

/// Point estimate with inference at one horizon. Methods without a
/// per-dataset standard error (plug-in, G-formula) report se_available =
/// false and a collapsed interval; their simulation CIs come from sampling
/// standard errors in the Monte Carlo engine.
struct AteResult {
  double horizon = 0.0;
  double estimate = 0.0;
  double std_err = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  Method method = Method::onestep;
  std::size_t n = 0;
  double clipped_fraction = 0.0;
  std::size_t floored_subjects = 0;  // contrasts truncated at the floor
  bool se_available = false;
  bool degenerate_variance = false;
};

/// Per-subject influence-function constituents at a fixed horizon.
struct EifRow {
  double outcome_term = 0.0;       // martingale-residual correction
  double treatment_term = 0.0;     // treatment-residual correction
  double wald_ratio = 0.0;         // conditional Wald ratio at this X
  double treatment_contrast = 0.0; // instrument contrast in treatment prob.
  double eif = 0.0;                // centered influence value
};

/// (cif_z1 - cif_z0) / (treat_z1 - treat_z0), with a hard error when the
/// denominator magnitude falls below the floor.
double conditional_wald(double cif_z1, double cif_z0, double treat_z1,
                        double treat_z0, double denom_floor = kWaldDenominatorFloor);

AteResult estimate_plugin(const Cohort& cohort, const BundleAccessor& nuisances,
                          double horizon);

/// Martingale-residual term of the influence function: the weighted sum of
/// survival-ratio integrand values against the residual dN - Y dLambda over
/// [0, min(observed time, horizon)]. The compensator part runs over the CIF
/// model's event grid; the counting-process jump sits at the subject's own
/// event time. Survival quantities inside the integrand are left limits.
double eif_outcome_term(const ObservedRecord& record, const NuisanceBundle& bundle,
                        double horizon, ClipCounter* clips = nullptr);

/// Treatment-residual term: sign(z)/gamma(z|x) * (1(A=1) - pi(1|z,x)).
double eif_treatment_term(const ObservedRecord& record, const NuisanceBundle& bundle,
                          ClipCounter* clips = nullptr);

struct VarianceCi {
  double std_err = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  bool degenerate = false;
};

/// sigma^2 = mean of squared influence values; std_err = sigma/sqrt(n);
/// interval = estimate +/- z_{1-alpha/2} * std_err.
VarianceCi variance_ci(std::span<const double> eif_values, double estimate,
                       std::size_t n, double alpha);

struct OneStepFit {
  AteResult result;
  std::vector<EifRow> rows;
};

/// One-step estimator: the empirical mean of
///   wald + outcome_term/contrast - wald * treatment_term/contrast,
/// with EIF-based variance. Under cross-fitting the estimate is the mean of
/// fold-level means and the variance pools all cross-fitted EIF values.
OneStepFit estimate_onestep(const Cohort& cohort, const BundleAccessor& nuisances,
                            double horizon, double alpha = 0.05);

/// G-formula comparator: fits an outcome model on (treatment, covariates)
/// and averages cif(t|a=1,x) - cif(t|a=0,x). Ignores the instrument.
AteResult estimate_gformula(const Cohort& cohort, double horizon,
                            const SurvivalFitter& outcome_fitter = {});
AteResult estimate_gformula(const Cohort& cohort, const SurvivalModel& outcome_model,
                            double horizon);

nlohmann::json ate_to_json(const AteResult& r);
std::string ate_csv_header();
std::string ate_csv_row(const AteResult& r);

}  // namespace ivsurv
