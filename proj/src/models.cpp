#include "ivsurv/models.hpp"

#include <algorithm>
#include <cmath>

#include "ivsurv/errors.hpp"
#include "ivsurv/mathutil.hpp"

namespace ivsurv {

FeatureMap FeatureMap::arm_plus_covariates(ArmSource arm, int p) {
  FeatureMap m(arm);
  for (int j = 0; j < p; ++j) m.add_covariate(j);
  return m;
}

FeatureMap FeatureMap::covariates(int p) {
  return arm_plus_covariates(ArmSource::none, p);
}

FeatureMap& FeatureMap::add_covariate(int index) {
  terms_.push_back({"x" + std::to_string(index + 1),
                    [index](const Eigen::VectorXd& x) { return x[index]; }});
  return *this;
}

FeatureMap& FeatureMap::add_term(std::string name,
                                 std::function<double(const Eigen::VectorXd&)> eval) {
  terms_.push_back({std::move(name), std::move(eval)});
  return *this;
}

Eigen::VectorXd FeatureMap::eval(bool arm, const Eigen::VectorXd& x) const {
  Eigen::VectorXd row(dim());
  int k = 0;
  if (uses_arm()) row[k++] = arm ? 1.0 : 0.0;
  for (const auto& t : terms_) row[k++] = t.eval(x);
  return row;
}

Eigen::VectorXd FeatureMap::eval(const ObservedRecord& r) const {
  const bool arm = arm_ == ArmSource::treatment ? r.treatment : r.instrument;
  return eval(arm, r.covariates);
}

std::vector<std::string> FeatureMap::feature_names() const {
  std::vector<std::string> names;
  if (arm_ == ArmSource::instrument) names.push_back("z");
  if (arm_ == ArmSource::treatment) names.push_back("a");
  for (const auto& t : terms_) names.push_back(t.name);
  return names;
}

nlohmann::json FeatureMap::to_json() const {
  const char* arm = arm_ == ArmSource::instrument ? "instrument"
                    : arm_ == ArmSource::treatment ? "treatment"
                                                   : "none";
  return {{"arm", arm}, {"features", feature_names()}};
}

CoxSurvivalModel::CoxSurvivalModel(Eigen::VectorXd coefficients,
                                   std::vector<double> grid_times,
                                   std::vector<double> baseline_jumps,
                                   FeatureMap fmap)
    : coefficients_(std::move(coefficients)),
      times_(std::move(grid_times)),
      base_jumps_(std::move(baseline_jumps)),
      fmap_(std::move(fmap)) {
  if (times_.size() != base_jumps_.size()) {
    throw EstimationError("baseline grid and jump sizes differ");
  }
  base_cum_.resize(base_jumps_.size());
  double running = 0.0;
  for (std::size_t k = 0; k < base_jumps_.size(); ++k) {
    running += base_jumps_[k];
    base_cum_[k] = running;
  }
}

double CoxSurvivalModel::relative_risk(bool arm, const Eigen::VectorXd& x) const {
  return std::exp(coefficients_.dot(fmap_.eval(arm, x)));
}

double CoxSurvivalModel::baseline_cum_hazard(double t, bool left_limit) const {
  // index of the last grid time <= t (or < t for the left limit)
  auto it = left_limit ? std::lower_bound(times_.begin(), times_.end(), t)
                       : std::upper_bound(times_.begin(), times_.end(), t);
  if (it == times_.begin()) return 0.0;
  return base_cum_[static_cast<std::size_t>(it - times_.begin()) - 1];
}

void CoxSurvivalModel::conditional_curve(bool arm, const Eigen::VectorXd& x,
                                         std::vector<double>& cum_before,
                                         std::vector<double>& jumps) const {
  const double r = relative_risk(arm, x);
  const std::size_t m = times_.size();
  cum_before.resize(m);
  jumps.resize(m);
  double running = 0.0;
  for (std::size_t k = 0; k < m; ++k) {
    cum_before[k] = running;
    jumps[k] = r * base_jumps_[k];
    running += jumps[k];
  }
}

double CoxSurvivalModel::cum_hazard(bool arm, const Eigen::VectorXd& x, double t,
                                    bool left_limit) const {
  return relative_risk(arm, x) * baseline_cum_hazard(t, left_limit);
}

nlohmann::json CoxSurvivalModel::to_json() const {
  return {{"model", "cox"},
          {"coefficients", std::vector<double>(coefficients_.begin(), coefficients_.end())},
          {"baseline_times", times_},
          {"baseline_jumps", base_jumps_},
          {"feature_map", fmap_.to_json()}};
}

StratifiedSurvivalModel::StratifiedSurvivalModel(
    std::shared_ptr<const SurvivalModel> arm0, std::shared_ptr<const SurvivalModel> arm1)
    : arm0_(std::move(arm0)), arm1_(std::move(arm1)) {
  const auto& g0 = arm0_->event_grid();
  const auto& g1 = arm1_->event_grid();
  grid_.resize(g0.size() + g1.size());
  std::merge(g0.begin(), g0.end(), g1.begin(), g1.end(), grid_.begin());
  grid_.erase(std::unique(grid_.begin(), grid_.end()), grid_.end());
  index0_.assign(grid_.size(), -1);
  index1_.assign(grid_.size(), -1);
  std::size_t i0 = 0, i1 = 0;
  for (std::size_t k = 0; k < grid_.size(); ++k) {
    if (i0 < g0.size() && g0[i0] == grid_[k]) index0_[k] = static_cast<std::ptrdiff_t>(i0++);
    if (i1 < g1.size() && g1[i1] == grid_[k]) index1_[k] = static_cast<std::ptrdiff_t>(i1++);
  }
}

void StratifiedSurvivalModel::conditional_curve(bool arm, const Eigen::VectorXd& x,
                                                std::vector<double>& cum_before,
                                                std::vector<double>& jumps) const {
  std::vector<double> arm_cum, arm_jumps;
  of(arm).conditional_curve(arm, x, arm_cum, arm_jumps);
  const auto& index = arm ? index1_ : index0_;
  cum_before.assign(grid_.size(), 0.0);
  jumps.assign(grid_.size(), 0.0);
  double running = 0.0;
  for (std::size_t k = 0; k < grid_.size(); ++k) {
    cum_before[k] = running;
    if (index[k] >= 0) {
      jumps[k] = arm_jumps[static_cast<std::size_t>(index[k])];
      running += jumps[k];
    }
  }
}

double StratifiedSurvivalModel::cum_hazard(bool arm, const Eigen::VectorXd& x, double t,
                                           bool left_limit) const {
  return of(arm).cum_hazard(arm, x, t, left_limit);
}

nlohmann::json StratifiedSurvivalModel::to_json() const {
  return {{"model", "stratified"},
          {"arm0", arm0_->to_json()},
          {"arm1", arm1_->to_json()}};
}

nlohmann::json StratifiedBinaryModel::to_json() const {
  return {{"model", "stratified"},
          {"arm0", arm0_->to_json()},
          {"arm1", arm1_->to_json()}};
}

LogisticBinaryModel::LogisticBinaryModel(Eigen::VectorXd coefficients, FeatureMap fmap)
    : coefficients_(std::move(coefficients)), fmap_(std::move(fmap)) {
  if (coefficients_.size() != fmap_.dim() + 1) {
    throw EstimationError("logistic coefficient length must be features + intercept");
  }
}

double LogisticBinaryModel::prob1(bool arm, const Eigen::VectorXd& x) const {
  const Eigen::VectorXd row = fmap_.eval(arm, x);
  return expit(coefficients_[0] + coefficients_.tail(row.size()).dot(row));
}

nlohmann::json LogisticBinaryModel::to_json() const {
  return {{"model", "logistic"},
          {"coefficients", std::vector<double>(coefficients_.begin(), coefficients_.end())},
          {"intercept_first", true},
          {"feature_map", fmap_.to_json()}};
}

}  // namespace ivsurv
