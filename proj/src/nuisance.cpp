#include "ivsurv/nuisance.hpp"

#include <algorithm>
#include <map>
#include <mutex>
#include <numeric>

#include "ivsurv/errors.hpp"
#include "ivsurv/rng.hpp"

namespace ivsurv {

FoldAssignment make_folds(std::size_t n, int k, std::uint64_t seed) {
  if (k < 2) throw ConfigError("K must be >= 2 or omitted");
  if (static_cast<std::size_t>(k) > n) {
    throw ConfigError("K exceeds the number of subjects");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  RngStream rng(seed);
  for (std::size_t i = n; i > 1; --i) {  // Fisher-Yates
    const auto j = static_cast<std::size_t>(rng.uniform() * static_cast<double>(i));
    std::swap(order[i - 1], order[std::min(j, i - 1)]);
  }
  FoldAssignment fa;
  fa.k = k;
  fa.seed = seed;
  fa.fold_of.resize(n);
  for (std::size_t pos = 0; pos < n; ++pos) {
    fa.fold_of[order[pos]] = static_cast<int>(pos % static_cast<std::size_t>(k));
  }
  return fa;
}

LearnerSpec LearnerSpec::cox_logistic(FeatureMap cif_map, FeatureMap censoring_map,
                                      FeatureMap propensity_map,
                                      FeatureMap prevalence_map) {
  LearnerSpec spec;
  spec.fit_cif = [m = std::move(cif_map)](const Cohort& c) {
    return std::make_shared<const CoxSurvivalModel>(
        fit_cox(c, m, SurvivalOutcome::failure));
  };
  spec.fit_censoring = [m = std::move(censoring_map)](const Cohort& c) {
    return std::make_shared<const CoxSurvivalModel>(
        fit_cox(c, m, SurvivalOutcome::censoring));
  };
  spec.fit_propensity = [m = std::move(propensity_map)](const Cohort& c) {
    return std::make_shared<const LogisticBinaryModel>(
        fit_logistic(c, m, BinaryTarget::treatment));
  };
  spec.fit_prevalence = [m = std::move(prevalence_map)](const Cohort& c) {
    return std::make_shared<const LogisticBinaryModel>(
        fit_logistic(c, m, BinaryTarget::instrument));
  };
  return spec;
}

LearnerSpec LearnerSpec::cox_logistic_default(int p, ArmSource censoring_arm) {
  return cox_logistic(FeatureMap::arm_plus_covariates(ArmSource::instrument, p),
                      FeatureMap::arm_plus_covariates(censoring_arm, p),
                      FeatureMap::arm_plus_covariates(ArmSource::instrument, p),
                      FeatureMap::covariates(p));
}

namespace {

std::pair<std::vector<ObservedRecord>, std::vector<ObservedRecord>> split_by_arm(
    const Cohort& cohort, ArmSource split_by) {
  std::pair<std::vector<ObservedRecord>, std::vector<ObservedRecord>> out;
  for (const auto& r : cohort.records()) {
    const bool arm = split_by == ArmSource::treatment ? r.treatment : r.instrument;
    (arm ? out.second : out.first).push_back(r);
  }
  return out;
}

}  // namespace

SurvivalFitter make_stratified_cox_fitter(FeatureMap per_arm_map,
                                          SurvivalOutcome outcome,
                                          ArmSource split_by) {
  return [map = std::move(per_arm_map), outcome, split_by](const Cohort& c) {
    auto [records0, records1] = split_by_arm(c, split_by);
    auto m0 = std::make_shared<const CoxSurvivalModel>(
        fit_cox(records0, map, outcome));
    auto m1 = std::make_shared<const CoxSurvivalModel>(
        fit_cox(records1, map, outcome));
    return std::make_shared<const StratifiedSurvivalModel>(std::move(m0),
                                                           std::move(m1));
  };
}

BinaryFitter make_stratified_propensity_fitter(FeatureMap per_arm_map) {
  return [map = std::move(per_arm_map)](const Cohort& c) {
    auto [records0, records1] = split_by_arm(c, ArmSource::instrument);
    auto m0 = std::make_shared<const LogisticBinaryModel>(
        fit_logistic(records0, map, BinaryTarget::treatment));
    auto m1 = std::make_shared<const LogisticBinaryModel>(
        fit_logistic(records1, map, BinaryTarget::treatment));
    return std::make_shared<const StratifiedBinaryModel>(std::move(m0), std::move(m1));
  };
}

namespace {

NuisanceBundle fit_bundle_on(const Cohort& cohort, const LearnerSpec& spec) {
  NuisanceBundle b;
  b.cif = spec.fit_cif(cohort);
  b.censoring = spec.fit_censoring(cohort);
  b.propensity = spec.fit_propensity(cohort);
  b.prevalence = spec.fit_prevalence(cohort);
  return b;
}

}  // namespace

BundleAccessor BundleAccessor::single(NuisanceBundle bundle) {
  BundleAccessor acc;
  acc.bundles_.push_back(std::move(bundle));
  return acc;
}

BundleAccessor BundleAccessor::fit(const Cohort& cohort, const LearnerSpec& spec,
                                   const std::optional<FoldAssignment>& folds) {
  BundleAccessor acc;
  if (!folds) {
    acc.bundles_.push_back(fit_bundle_on(cohort, spec));
    return acc;
  }
  const auto& fa = *folds;
  if (fa.fold_of.size() != cohort.size()) {
    throw ConfigError("fold assignment does not match cohort size");
  }
  acc.bundle_of_ = fa.fold_of;
  for (int fold = 0; fold < fa.k; ++fold) {
    std::vector<ObservedRecord> training;
    training.reserve(cohort.size());
    for (std::size_t i = 0; i < cohort.size(); ++i) {
      if (fa.fold_of[i] != fold) training.push_back(cohort[i]);
    }
    try {
      const Cohort train(std::move(training));
      acc.bundles_.push_back(fit_bundle_on(train, spec));
    } catch (const Error& e) {
      throw EstimationError("fold " + std::to_string(fold + 1) + ": " + e.what());
    }
  }
  return acc;
}

namespace {

using SurvivalFactory = std::function<SurvivalFitter(FeatureMap, SurvivalOutcome)>;
using BinaryFactory = std::function<BinaryFitter(FeatureMap, BinaryTarget)>;

std::mutex& registry_mutex() {
  static std::mutex m;
  return m;
}

std::map<std::string, SurvivalFactory>& survival_registry() {
  static std::map<std::string, SurvivalFactory> reg = {
      {"cox", [](FeatureMap map, SurvivalOutcome outcome) -> SurvivalFitter {
         return [map = std::move(map), outcome](const Cohort& c) {
           return std::make_shared<const CoxSurvivalModel>(fit_cox(c, map, outcome));
         };
       }}};
  return reg;
}

std::map<std::string, BinaryFactory>& binary_registry() {
  static std::map<std::string, BinaryFactory> reg = {
      {"logistic", [](FeatureMap map, BinaryTarget target) -> BinaryFitter {
         return [map = std::move(map), target](const Cohort& c) {
           return std::make_shared<const LogisticBinaryModel>(
               fit_logistic(c, map, target));
         };
       }}};
  return reg;
}

}  // namespace

void register_survival_learner(const std::string& name, SurvivalFactory factory) {
  std::lock_guard<std::mutex> lock(registry_mutex());
  survival_registry()[name] = std::move(factory);
}

void register_binary_learner(const std::string& name, BinaryFactory factory) {
  std::lock_guard<std::mutex> lock(registry_mutex());
  binary_registry()[name] = std::move(factory);
}

SurvivalFitter make_survival_fitter(const std::string& name, FeatureMap map,
                                    SurvivalOutcome outcome) {
  std::lock_guard<std::mutex> lock(registry_mutex());
  auto it = survival_registry().find(name);
  if (it == survival_registry().end()) {
    throw ConfigError("unknown survival learner '" + name + "'");
  }
  return it->second(std::move(map), outcome);
}

BinaryFitter make_binary_fitter(const std::string& name, FeatureMap map,
                                BinaryTarget target) {
  std::lock_guard<std::mutex> lock(registry_mutex());
  auto it = binary_registry().find(name);
  if (it == binary_registry().end()) {
    throw ConfigError("unknown binary learner '" + name + "'");
  }
  return it->second(std::move(map), target);
}

}  // namespace ivsurv
