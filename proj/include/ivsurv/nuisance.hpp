#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ivsurv/cox.hpp"
#include "ivsurv/dataset.hpp"
#include "ivsurv/logistic.hpp"
#include "ivsurv/models.hpp"

namespace ivsurv {

/// Deterministic K-fold partition: fold sizes differ by at most one and the
/// assignment is a pure function of (n, K, seed).
struct FoldAssignment {
  std::vector<int> fold_of;  // values in [0, K)
  int k = 0;
  std::uint64_t seed = 0;
};

FoldAssignment make_folds(std::size_t n, int k, std::uint64_t seed);

/// The four fitted nuisance functions used by the estimators:
/// conditional CIF, censoring survival, treatment probability given
/// (instrument, covariates), and instrument prevalence given covariates.
struct NuisanceBundle {
  std::shared_ptr<const SurvivalModel> cif;
  std::shared_ptr<const SurvivalModel> censoring;
  std::shared_ptr<const BinaryModel> propensity;
  std::shared_ptr<const BinaryModel> prevalence;
};

using SurvivalFitter =
    std::function<std::shared_ptr<const SurvivalModel>(const Cohort&)>;
using BinaryFitter = std::function<std::shared_ptr<const BinaryModel>(const Cohort&)>;

/// Learner selection per nuisance. Any fitter returning objects that
/// implement the SurvivalModel / BinaryModel interfaces plugs in here;
/// the defaults are the in-repo Cox and logistic learners.
struct LearnerSpec {
  SurvivalFitter fit_cif;
  SurvivalFitter fit_censoring;
  BinaryFitter fit_propensity;
  BinaryFitter fit_prevalence;

  /// Cox/logistic learners over the given feature maps. The censoring map
  /// defaults to conditioning on the instrument; pass a treatment-armed map
  /// to condition censoring on (treatment, covariates) instead.
  static LearnerSpec cox_logistic(FeatureMap cif_map, FeatureMap censoring_map,
                                  FeatureMap propensity_map, FeatureMap prevalence_map);

  /// Canonical maps for a p-covariate cohort: (z, x1..xp) for survival and
  /// propensity models, (x1..xp) for the prevalence model.
  static LearnerSpec cox_logistic_default(int p,
                                          ArmSource censoring_arm = ArmSource::instrument);
};

/// Serves each subject the nuisance bundle it may be evaluated under.
/// Without folds a single bundle (fitted on all data) serves everyone;
/// with folds, subject i is served by the bundle fitted on the complement
/// of i's fold.
class BundleAccessor {
 public:
  static BundleAccessor fit(const Cohort& cohort, const LearnerSpec& spec,
                            const std::optional<FoldAssignment>& folds = {});

  /// Wraps externally fitted models as a single-bundle accessor.
  static BundleAccessor single(NuisanceBundle bundle);

  const NuisanceBundle& for_subject(std::size_t i) const {
    return bundles_[bundle_of_.empty() ? 0 : bundle_of_[i]];
  }
  bool cross_fitted() const { return bundles_.size() > 1; }
  int fold_count() const { return static_cast<int>(bundles_.size()); }
  const std::vector<int>& fold_of() const { return bundle_of_; }

 private:
  std::vector<NuisanceBundle> bundles_;
  std::vector<int> bundle_of_;
};

/// Arm-stratified learners: one model per level of the split variable,
/// each fitted on that subset with the per-arm feature map (no arm term).
SurvivalFitter make_stratified_cox_fitter(FeatureMap per_arm_map,
                                          SurvivalOutcome outcome,
                                          ArmSource split_by);
BinaryFitter make_stratified_propensity_fitter(FeatureMap per_arm_map);

/// Registry mapping config names to learner factories so external learners
/// can participate in CLI runs. "cox" and "logistic" are pre-registered.
void register_survival_learner(
    const std::string& name,
    std::function<SurvivalFitter(FeatureMap, SurvivalOutcome)> factory);
void register_binary_learner(
    const std::string& name,
    std::function<BinaryFitter(FeatureMap, BinaryTarget)> factory);
SurvivalFitter make_survival_fitter(const std::string& name, FeatureMap map,
                                    SurvivalOutcome outcome);
BinaryFitter make_binary_fitter(const std::string& name, FeatureMap map,
                                BinaryTarget target);

}  // namespace ivsurv
