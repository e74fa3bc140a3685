#pragma once

#include <Eigen/Core>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"

#include "ivsurv/dataset.hpp"

namespace ivsurv {

/// Which binary field of a record (if any) enters a model as its leading
/// "arm" feature. Outcome/censoring/propensity models condition on the
/// instrument; the G-formula outcome model conditions on the treatment.
enum class ArmSource { none, instrument, treatment };

/// Declares which inputs enter a model and in what order: an optional arm
/// indicator followed by named scalar functions of the covariate vector.
class FeatureMap {
 public:
  struct Term {
    std::string name;
    std::function<double(const Eigen::VectorXd&)> eval;
  };

  FeatureMap() = default;
  explicit FeatureMap(ArmSource arm) : arm_(arm) {}

  /// arm + x1..xp
  static FeatureMap arm_plus_covariates(ArmSource arm, int p);
  /// x1..xp only
  static FeatureMap covariates(int p);

  FeatureMap& add_covariate(int index);  // named x<index+1>
  FeatureMap& add_term(std::string name,
                       std::function<double(const Eigen::VectorXd&)> eval);

  ArmSource arm_source() const { return arm_; }
  bool uses_arm() const { return arm_ != ArmSource::none; }
  int dim() const { return (uses_arm() ? 1 : 0) + static_cast<int>(terms_.size()); }
  const std::vector<Term>& terms() const { return terms_; }

  /// Design row for prediction inputs (arm ignored when arm_source is none).
  Eigen::VectorXd eval(bool arm, const Eigen::VectorXd& x) const;
  /// Design row for a training record, pulling the arm from the record.
  Eigen::VectorXd eval(const ObservedRecord& r) const;

  std::vector<std::string> feature_names() const;
  nlohmann::json to_json() const;

 private:
  ArmSource arm_ = ArmSource::none;
  std::vector<Term> terms_;
};

/// Fitted conditional survival object. Implementations expose the event-time
/// grid of the training data and conditional cumulative-hazard step
/// functions over it; cumulative incidence and survival derive from those.
///
/// Any object with these signatures can replace the in-repo Cox learner.
class SurvivalModel {
 public:
  virtual ~SurvivalModel() = default;

  /// Distinct training event times, ascending.
  virtual const std::vector<double>& event_grid() const = 0;

  /// Conditional step curve sampled on event_grid(): cum_before[k] is the
  /// cumulative hazard just before grid point k, jumps[k] the hazard jump
  /// at grid point k. Vectors are resized by the callee.
  virtual void conditional_curve(bool arm, const Eigen::VectorXd& x,
                                 std::vector<double>& cum_before,
                                 std::vector<double>& jumps) const = 0;

  /// Cumulative hazard at time t (left limit excludes a jump at t itself).
  virtual double cum_hazard(bool arm, const Eigen::VectorXd& x, double t,
                            bool left_limit = false) const = 0;

  /// F(t | arm, x) = 1 - exp(-Lambda(t | arm, x)).
  double cif(bool arm, const Eigen::VectorXd& x, double t,
             bool left_limit = false) const {
    return 1.0 - std::exp(-cum_hazard(arm, x, t, left_limit));
  }

  /// S(t | arm, x) = exp(-Lambda(t | arm, x)); used for censoring survival.
  double survival(bool arm, const Eigen::VectorXd& x, double t,
                  bool left_limit = false) const {
    return std::exp(-cum_hazard(arm, x, t, left_limit));
  }

  virtual nlohmann::json to_json() const { return nlohmann::json::object(); }
};

/// Fitted conditional probability object; prob1 must lie strictly in (0,1)
/// for finite inputs. Any object with this signature can replace the
/// in-repo logistic learner.
class BinaryModel {
 public:
  virtual ~BinaryModel() = default;
  virtual double prob1(bool arm, const Eigen::VectorXd& x) const = 0;
  virtual nlohmann::json to_json() const { return nlohmann::json::object(); }
};

/// Cox proportional hazards model with a Breslow baseline: the conditional
/// cumulative hazard is baseline(t) * exp(coefficients . features).
class CoxSurvivalModel final : public SurvivalModel {
 public:
  CoxSurvivalModel(Eigen::VectorXd coefficients, std::vector<double> grid_times,
                   std::vector<double> baseline_jumps, FeatureMap fmap);

  const Eigen::VectorXd& coefficients() const { return coefficients_; }
  const FeatureMap& feature_map() const { return fmap_; }
  const std::vector<double>& baseline_jumps() const { return base_jumps_; }
  double baseline_cum_hazard(double t, bool left_limit = false) const;

  const std::vector<double>& event_grid() const override { return times_; }
  void conditional_curve(bool arm, const Eigen::VectorXd& x,
                         std::vector<double>& cum_before,
                         std::vector<double>& jumps) const override;
  double cum_hazard(bool arm, const Eigen::VectorXd& x, double t,
                    bool left_limit = false) const override;
  nlohmann::json to_json() const override;

 private:
  double relative_risk(bool arm, const Eigen::VectorXd& x) const;

  Eigen::VectorXd coefficients_;
  std::vector<double> times_;      // ascending distinct event times
  std::vector<double> base_jumps_; // Breslow increments at times_
  std::vector<double> base_cum_;   // prefix sums of base_jumps_
  FeatureMap fmap_;
};

/// Survival model composed of two arm-specific fits. The event grid is the
/// union of the arms' grids; each arm's hazard jumps land on its own times.
class StratifiedSurvivalModel final : public SurvivalModel {
 public:
  StratifiedSurvivalModel(std::shared_ptr<const SurvivalModel> arm0,
                          std::shared_ptr<const SurvivalModel> arm1);

  const std::vector<double>& event_grid() const override { return grid_; }
  void conditional_curve(bool arm, const Eigen::VectorXd& x,
                         std::vector<double>& cum_before,
                         std::vector<double>& jumps) const override;
  double cum_hazard(bool arm, const Eigen::VectorXd& x, double t,
                    bool left_limit = false) const override;
  nlohmann::json to_json() const override;

 private:
  const SurvivalModel& of(bool arm) const { return arm ? *arm1_ : *arm0_; }

  std::shared_ptr<const SurvivalModel> arm0_, arm1_;
  std::vector<double> grid_;                 // merged, ascending
  std::vector<std::ptrdiff_t> index0_, index1_;  // merged idx -> arm grid idx or -1
};

/// Binary model composed of two arm-specific fits.
class StratifiedBinaryModel final : public BinaryModel {
 public:
  StratifiedBinaryModel(std::shared_ptr<const BinaryModel> arm0,
                        std::shared_ptr<const BinaryModel> arm1)
      : arm0_(std::move(arm0)), arm1_(std::move(arm1)) {}
  double prob1(bool arm, const Eigen::VectorXd& x) const override {
    return (arm ? *arm1_ : *arm0_).prob1(arm, x);
  }
  nlohmann::json to_json() const override;

 private:
  std::shared_ptr<const BinaryModel> arm0_, arm1_;
};

/// Logistic regression with intercept: P(target=1) = expit(b0 + b . features).
class LogisticBinaryModel final : public BinaryModel {
 public:
  LogisticBinaryModel(Eigen::VectorXd coefficients, FeatureMap fmap);

  /// Coefficient vector, intercept first.
  const Eigen::VectorXd& coefficients() const { return coefficients_; }
  const FeatureMap& feature_map() const { return fmap_; }

  double prob1(bool arm, const Eigen::VectorXd& x) const override;
  nlohmann::json to_json() const override;

 private:
  Eigen::VectorXd coefficients_;
  FeatureMap fmap_;
};

}  // namespace ivsurv
