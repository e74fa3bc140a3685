#include "ivsurv/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <sstream>

#include "ivsurv/errors.hpp"
#include "ivsurv/mathutil.hpp"

namespace ivsurv {

std::string method_name(Method m) {
  switch (m) {
    case Method::plugin: return "plugin";
    case Method::onestep: return "onestep";
    case Method::gformula: return "gformula";
  }
  return "?";
}

Method method_from_name(const std::string& name) {
  if (name == "plugin") return Method::plugin;
  if (name == "onestep") return Method::onestep;
  if (name == "gformula") return Method::gformula;
  throw ConfigError("unknown method '" + name + "'");
}

double conditional_wald(double cif_z1, double cif_z0, double treat_z1,
                        double treat_z0, double denom_floor) {
  const double denom = treat_z1 - treat_z0;
  if (std::abs(denom) < denom_floor) {
    throw WeakInstrumentError(
        "instrument-treatment contrast " + std::to_string(denom) +
            " below floor " + std::to_string(denom_floor),
        -1);
  }
  return (cif_z1 - cif_z0) / denom;
}

namespace {

// Experimental stabilization policy switch (dev only): 0=raw, 1=clamp ratio,
// 2=truncate denominator + clamp ratio, 3=2 + zero corrections at floor hits.
int stabilization_policy() {
  static const int policy = [] {
    const char* env = std::getenv("IVSURV_STAB_POLICY");
    return env ? std::atoi(env) : 2;
  }();
  return policy;
}

double stabilization_floor() {
  static const double floor_value = [] {
    const char* env = std::getenv("IVSURV_STAB_FLOOR");
    return env ? std::atof(env) : kWaldDenominatorFloor;
  }();
  return floor_value;
}

void check_horizon(const Cohort& cohort, double t) {
  if (!(t >= 0.0) || !std::isfinite(t)) {
    throw EstimationError("horizon must be finite and nonnegative");
  }
  if (t > cohort.max_time()) {
    throw EstimationError("horizon " + std::to_string(t) +
                          " exceeds the largest observed time " +
                          std::to_string(cohort.max_time()));
  }
}

// Mean under optional cross-fitting: the plain empirical mean without
// folds, otherwise the average of fold-level means.
double pooled_or_fold_mean(const std::vector<double>& values,
                           const BundleAccessor& acc) {
  if (!acc.cross_fitted()) return mean(values);
  const int k = acc.fold_count();
  std::vector<double> fold_sum(k, 0.0);
  std::vector<std::size_t> fold_n(k, 0);
  const auto& fold_of = acc.fold_of();
  for (std::size_t i = 0; i < values.size(); ++i) {
    fold_sum[fold_of[i]] += values[i];
    ++fold_n[fold_of[i]];
  }
  std::vector<double> fold_means(k);
  for (int f = 0; f < k; ++f) {
    fold_means[f] = fold_n[f] == 0 ? 0.0 : fold_sum[f] / static_cast<double>(fold_n[f]);
  }
  return mean(fold_means);
}

struct CurveWorkspace {
  std::vector<double> cif_cum_before, cif_jumps;
  std::vector<double> cens_cum_before, cens_jumps;
};

double outcome_term_impl(const ObservedRecord& r, const NuisanceBundle& b,
                         double horizon, ClipCounter& clips, CurveWorkspace& ws) {
  const bool z = r.instrument;
  const double gamma1 = b.prevalence->prob1(false, r.covariates);
  const double gamma_z = clips.clip(z ? gamma1 : 1.0 - gamma1);
  const double weight = (z ? 1.0 : -1.0) / gamma_z;

  const double surv_t = clips.clip(b.cif->survival(z, r.covariates, horizon));

  const auto& grid = b.cif->event_grid();
  const auto& cgrid = b.censoring->event_grid();
  b.cif->conditional_curve(z, r.covariates, ws.cif_cum_before, ws.cif_jumps);
  b.censoring->conditional_curve(z, r.covariates, ws.cens_cum_before, ws.cens_jumps);

  const double upper = std::min(r.time_obs, horizon);
  double inner = 0.0;
  double cens_cum = 0.0;  // censoring cumulative hazard after the last knot < s
  std::size_t j = 0;
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const double s = grid[k];
    if (s > upper) break;
    if (ws.cif_jumps[k] == 0.0) continue;
    while (j < cgrid.size() && cgrid[j] < s) {
      cens_cum = ws.cens_cum_before[j] + ws.cens_jumps[j];
      ++j;
    }
    const double cens_surv_minus = clips.clip(std::exp(-cens_cum));
    const double event_surv_minus = clips.clip(std::exp(-ws.cif_cum_before[k]));
    inner -= ws.cif_jumps[k] / (event_surv_minus * cens_surv_minus);
  }
  if (r.event && r.time_obs <= horizon) {
    const double event_surv_minus =
        clips.clip(b.cif->survival(z, r.covariates, r.time_obs, /*left_limit=*/true));
    const double cens_surv_minus = clips.clip(
        b.censoring->survival(z, r.covariates, r.time_obs, /*left_limit=*/true));
    inner += 1.0 / (event_surv_minus * cens_surv_minus);
  }
  return weight * surv_t * inner;
}

double treatment_term_impl(const ObservedRecord& r, const NuisanceBundle& b,
                           ClipCounter& clips) {
  const bool z = r.instrument;
  const double gamma1 = b.prevalence->prob1(false, r.covariates);
  const double gamma_z = clips.clip(z ? gamma1 : 1.0 - gamma1);
  const double pi1 = clips.clip(b.propensity->prob1(z, r.covariates));
  return ((z ? 1.0 : -1.0) / gamma_z) * ((r.treatment ? 1.0 : 0.0) - pi1);
}

}  // namespace

double eif_outcome_term(const ObservedRecord& record, const NuisanceBundle& bundle,
                        double horizon, ClipCounter* clips) {
  ClipCounter local;
  CurveWorkspace ws;
  return outcome_term_impl(record, bundle, horizon, clips ? *clips : local, ws);
}

double eif_treatment_term(const ObservedRecord& record, const NuisanceBundle& bundle,
                          ClipCounter* clips) {
  ClipCounter local;
  return treatment_term_impl(record, bundle, clips ? *clips : local);
}

namespace {

struct WaldParts {
  double ratio = 0.0;     // stabilized conditional Wald ratio
  double contrast = 0.0;  // denominator after any truncation
  bool floored = false;   // |raw contrast| fell below the floor
};

// Per-subject conditional Wald ratio with finite-sample stabilization: the
// treatment contrast is truncated (sign-preserving) at the floor and the
// ratio is clamped into [-1, 1], the range of a difference of CIFs.
WaldParts stabilized_wald(double f1, double f0, double p1, double p0) {
  WaldParts w;
  const double raw = p1 - p0;
  w.floored = std::abs(raw) < stabilization_floor();
  const int policy = stabilization_policy();
  if (policy == 0) {
    w.contrast = raw;
    w.ratio = (f1 - f0) / raw;
    return w;
  }
  if (policy == 1) {
    w.contrast = raw;
    w.ratio = std::clamp((f1 - f0) / raw, -1.0, 1.0);
    return w;
  }
  w.contrast = w.floored
                   ? (raw < 0 ? -stabilization_floor() : stabilization_floor())
                   : raw;
  w.ratio = std::clamp((f1 - f0) / w.contrast, -1.0, 1.0);
  return w;
}

// Relevance is a population property. A handful of floor hits reflects
// saturated tail predictions; a weak instrument floors the bulk.
void check_relevance(std::size_t floored, std::size_t n) {
  if (floored * 2 > n) {
    throw WeakInstrumentError(
        "instrument-treatment contrast below floor " +
            std::to_string(stabilization_floor()) + " for " +
            std::to_string(floored) + " of " + std::to_string(n) + " subjects",
        -1);
  }
}

}  // namespace

AteResult estimate_plugin(const Cohort& cohort, const BundleAccessor& nuisances,
                          double horizon) {
  check_horizon(cohort, horizon);
  const std::size_t n = cohort.size();
  if (stabilization_policy() == 4) {
    std::vector<double> num(n), den(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& r = cohort[i];
      const auto& b = nuisances.for_subject(i);
      num[i] = b.cif->cif(true, r.covariates, horizon) -
               b.cif->cif(false, r.covariates, horizon);
      den[i] = b.propensity->prob1(true, r.covariates) -
               b.propensity->prob1(false, r.covariates);
    }
    const double psi_r = pooled_or_fold_mean(num, nuisances);
    const double psi_a = pooled_or_fold_mean(den, nuisances);
    AteResult res;
    res.horizon = horizon;
    res.estimate = conditional_wald(psi_r, 0.0, psi_a, 0.0);
    res.ci_low = res.ci_high = res.estimate;
    res.method = Method::plugin;
    res.n = n;
    res.se_available = false;
    return res;
  }
  std::vector<double> values(n);
  std::size_t floored = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = cohort[i];
    const auto& b = nuisances.for_subject(i);
    const double f1 = b.cif->cif(true, r.covariates, horizon);
    const double f0 = b.cif->cif(false, r.covariates, horizon);
    const double p1 = b.propensity->prob1(true, r.covariates);
    const double p0 = b.propensity->prob1(false, r.covariates);
    const WaldParts w = stabilized_wald(f1, f0, p1, p0);
    if (w.floored) ++floored;
    values[i] = w.ratio;
  }
  check_relevance(floored, n);
  AteResult res;
  res.horizon = horizon;
  res.estimate = pooled_or_fold_mean(values, nuisances);
  res.ci_low = res.ci_high = res.estimate;
  res.method = Method::plugin;
  res.n = n;
  res.floored_subjects = floored;
  res.se_available = false;
  return res;
}

VarianceCi variance_ci(std::span<const double> eif_values, double estimate,
                       std::size_t n, double alpha) {
  if (n < 2) throw EstimationError("variance requires n >= 2");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha must be in (0,1)");
  std::vector<double> sq(eif_values.size());
  for (std::size_t i = 0; i < eif_values.size(); ++i) sq[i] = eif_values[i] * eif_values[i];
  const double sigma2 = mean(sq);
  VarianceCi out;
  out.std_err = std::sqrt(sigma2 / static_cast<double>(n));
  const auto [mn, mx] = std::minmax_element(eif_values.begin(), eif_values.end());
  out.degenerate = eif_values.empty() || *mn == *mx;
  const double z = norm_quantile(1.0 - alpha / 2.0);
  out.ci_low = estimate - z * out.std_err;
  out.ci_high = estimate + z * out.std_err;
  return out;
}

namespace {

// Ratio-of-marginal-means one-step: all divisions use the cohort-level
// treatment contrast, so the estimator stays stable when conditional
// contrasts saturate. Influence rows carry the delta-method values.
OneStepFit onestep_marginal(const Cohort& cohort, const BundleAccessor& nuisances,
                            double horizon, double alpha) {
  const std::size_t n = cohort.size();
  ClipCounter clips;
  CurveWorkspace ws;
  std::vector<double> num(n), den(n), dr(n), da(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = cohort[i];
    const auto& b = nuisances.for_subject(i);
    num[i] = b.cif->cif(true, r.covariates, horizon) -
             b.cif->cif(false, r.covariates, horizon);
    den[i] = b.propensity->prob1(true, r.covariates) -
             b.propensity->prob1(false, r.covariates);
    dr[i] = outcome_term_impl(r, b, horizon, clips, ws);
    da[i] = treatment_term_impl(r, b, clips);
  }
  const double psi_r = pooled_or_fold_mean(num, nuisances);
  const double psi_a = pooled_or_fold_mean(den, nuisances);
  const double plugin = conditional_wald(psi_r, 0.0, psi_a, 0.0);
  const double mean_dr = pooled_or_fold_mean(dr, nuisances);
  const double mean_da = pooled_or_fold_mean(da, nuisances);
  const double estimate = plugin + (mean_dr - plugin * mean_da) / psi_a;

  std::vector<EifRow> rows(n);
  std::vector<double> eif(n);
  for (std::size_t i = 0; i < n; ++i) {
    eif[i] = (num[i] - estimate * den[i] + dr[i] - estimate * da[i]) / psi_a;
    rows[i] = {dr[i], da[i], num[i] / psi_a, den[i], 0.0};
  }
  const double center = mean(eif);
  for (std::size_t i = 0; i < n; ++i) {
    eif[i] -= center;
    rows[i].eif = eif[i];
  }
  const VarianceCi v = variance_ci(eif, estimate, n, alpha);

  OneStepFit fit;
  fit.result.horizon = horizon;
  fit.result.estimate = estimate;
  fit.result.std_err = v.std_err;
  fit.result.ci_low = v.ci_low;
  fit.result.ci_high = v.ci_high;
  fit.result.method = Method::onestep;
  fit.result.n = n;
  fit.result.clipped_fraction = clips.fraction();
  fit.result.se_available = true;
  fit.result.degenerate_variance = v.degenerate;
  fit.rows = std::move(rows);
  return fit;
}

}  // namespace

OneStepFit estimate_onestep(const Cohort& cohort, const BundleAccessor& nuisances,
                            double horizon, double alpha) {
  check_horizon(cohort, horizon);
  if (stabilization_policy() == 4) {
    return onestep_marginal(cohort, nuisances, horizon, alpha);
  }
  const std::size_t n = cohort.size();
  ClipCounter clips;
  CurveWorkspace ws;
  std::vector<double> summand(n);
  std::vector<EifRow> rows(n);
  std::size_t floored = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = cohort[i];
    const auto& b = nuisances.for_subject(i);
    const double f1 = b.cif->cif(true, r.covariates, horizon);
    const double f0 = b.cif->cif(false, r.covariates, horizon);
    const double p1 = b.propensity->prob1(true, r.covariates);
    const double p0 = b.propensity->prob1(false, r.covariates);
    const WaldParts w = stabilized_wald(f1, f0, p1, p0);
    if (w.floored) ++floored;
    double dr = outcome_term_impl(r, b, horizon, clips, ws);
    double da = treatment_term_impl(r, b, clips);
    if (stabilization_policy() == 3 && w.floored) {
      dr = 0.0;
      da = 0.0;
    }
    summand[i] = w.ratio + dr / w.contrast - w.ratio * da / w.contrast;
    rows[i] = {dr, da, w.ratio, w.contrast, 0.0};
  }
  check_relevance(floored, n);
  const double estimate = pooled_or_fold_mean(summand, nuisances);
  std::vector<double> eif(n);
  for (std::size_t i = 0; i < n; ++i) {
    eif[i] = summand[i] - estimate;
    rows[i].eif = eif[i];
  }
  const VarianceCi v = variance_ci(eif, estimate, n, alpha);

  OneStepFit fit;
  fit.result.horizon = horizon;
  fit.result.estimate = estimate;
  fit.result.std_err = v.std_err;
  fit.result.ci_low = v.ci_low;
  fit.result.ci_high = v.ci_high;
  fit.result.method = Method::onestep;
  fit.result.n = n;
  fit.result.clipped_fraction = clips.fraction();
  fit.result.floored_subjects = floored;
  fit.result.se_available = true;
  fit.result.degenerate_variance = v.degenerate;
  fit.rows = std::move(rows);
  return fit;
}

AteResult estimate_gformula(const Cohort& cohort, const SurvivalModel& outcome_model,
                            double horizon) {
  check_horizon(cohort, horizon);
  const std::size_t n = cohort.size();
  std::vector<double> values(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& x = cohort[i].covariates;
    values[i] = outcome_model.cif(true, x, horizon) - outcome_model.cif(false, x, horizon);
  }
  AteResult res;
  res.horizon = horizon;
  res.estimate = mean(values);
  res.ci_low = res.ci_high = res.estimate;
  res.method = Method::gformula;
  res.n = n;
  res.se_available = false;
  return res;
}

AteResult estimate_gformula(const Cohort& cohort, double horizon,
                            const SurvivalFitter& outcome_fitter) {
  std::shared_ptr<const SurvivalModel> model;
  if (outcome_fitter) {
    model = outcome_fitter(cohort);
  } else {
    const FeatureMap map =
        FeatureMap::arm_plus_covariates(ArmSource::treatment, cohort.covariate_dim());
    model = std::make_shared<const CoxSurvivalModel>(
        fit_cox(cohort, map, SurvivalOutcome::failure));
  }
  return estimate_gformula(cohort, *model, horizon);
}

nlohmann::json ate_to_json(const AteResult& r) {
  return {{"horizon", r.horizon},
          {"method", method_name(r.method)},
          {"estimate", r.estimate},
          {"std_err", r.std_err},
          {"ci_low", r.ci_low},
          {"ci_high", r.ci_high},
          {"n", r.n},
          {"clipped_fraction", r.clipped_fraction},
          {"se_available", r.se_available},
          {"degenerate_variance", r.degenerate_variance}};
}

std::string ate_csv_header() {
  return "horizon,method,estimate,std_err,ci_low,ci_high,clipped_fraction";
}

std::string ate_csv_row(const AteResult& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%.12g,%s,%.12g,%.12g,%.12g,%.12g,%.6g", r.horizon,
                method_name(r.method).c_str(), r.estimate, r.std_err, r.ci_low,
                r.ci_high, r.clipped_fraction);
  return buf;
}

}  // namespace ivsurv
