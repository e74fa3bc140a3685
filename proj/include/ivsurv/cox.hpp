#pragma once

#include <Eigen/Core>
#include <memory>

#include "ivsurv/dataset.hpp"
#include "ivsurv/models.hpp"

namespace ivsurv {

enum class SurvivalOutcome { failure, censoring };

struct CoxFitOptions {
  int max_iterations = 100;
  int max_step_halvings = 30;
  double gradient_tol = 1e-8;     // L2 norm of the score
  double divergence_norm = 30.0;  // |beta|_inf beyond this => monotone likelihood
};

/// Fits a Cox proportional hazards model by damped Newton-Raphson on the
/// Breslow-tie-corrected partial likelihood and attaches the Breslow
/// baseline cumulative hazard at the fitted coefficients.
///
/// With outcome == censoring the event indicator is flipped so that
/// censoring is modeled as the event. Constant feature columns are frozen
/// at coefficient 0 (they cancel from the partial likelihood).
CoxSurvivalModel fit_cox(const Cohort& cohort, const FeatureMap& features,
                         SurvivalOutcome outcome, const CoxFitOptions& opts = {});

/// Record-level variant used by stratified fits on cohort subsets (which
/// need not satisfy the Cohort invariants).
CoxSurvivalModel fit_cox(const std::vector<ObservedRecord>& records,
                         const FeatureMap& features, SurvivalOutcome outcome,
                         const CoxFitOptions& opts = {});

/// Baseline-stratified Cox fit: one set of covariate coefficients shared
/// across the two levels of `split_by`, with a separate Breslow baseline per
/// level (the coxph strata() idiom). `features` must not include the arm.
/// Returns the two per-arm models wrapped behind the SurvivalModel surface.
std::shared_ptr<const SurvivalModel> fit_cox_strata(
    const std::vector<ObservedRecord>& records, const FeatureMap& features,
    SurvivalOutcome outcome, ArmSource split_by, const CoxFitOptions& opts = {});

/// Design extracted from a cohort for partial-likelihood evaluation.
struct CoxDesign {
  Eigen::MatrixXd x;          // n rows of features
  Eigen::VectorXd time;       // observed times
  std::vector<char> status;   // 1 = event of the requested kind
};

CoxDesign make_cox_design(const std::vector<ObservedRecord>& records,
                          const FeatureMap& features, SurvivalOutcome outcome);

/// Breslow partial log-likelihood and its analytic derivatives; used by the
/// fitter and directly by gradient-check tests.
double cox_partial_loglik(const CoxDesign& d, const Eigen::VectorXd& beta);
Eigen::VectorXd cox_score(const CoxDesign& d, const Eigen::VectorXd& beta);
Eigen::MatrixXd cox_information(const CoxDesign& d, const Eigen::VectorXd& beta);

}  // namespace ivsurv
