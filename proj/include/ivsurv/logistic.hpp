#pragma once

#include <Eigen/Core>

#include "ivsurv/dataset.hpp"
#include "ivsurv/models.hpp"

namespace ivsurv {

enum class BinaryTarget { treatment, instrument };

struct LogisticFitOptions {
  int max_iterations = 100;
  int max_step_halvings = 30;
  double gradient_tol = 1e-10;
  double divergence_norm = 30.0;  // |beta|_inf beyond this => separation
};

/// Fits logistic regression (intercept + feature map) by damped Newton on
/// the Bernoulli log-likelihood. Constant feature columns are frozen at 0.
LogisticBinaryModel fit_logistic(const Cohort& cohort, const FeatureMap& features,
                                 BinaryTarget target,
                                 const LogisticFitOptions& opts = {});
LogisticBinaryModel fit_logistic(const std::vector<ObservedRecord>& records,
                                 const FeatureMap& features, BinaryTarget target,
                                 const LogisticFitOptions& opts = {});

/// Design matrix (intercept column first) and 0/1 targets.
struct LogisticDesign {
  Eigen::MatrixXd x;
  Eigen::VectorXd y;
};

LogisticDesign make_logistic_design(const std::vector<ObservedRecord>& records,
                                    const FeatureMap& features, BinaryTarget target);

double logistic_loglik(const LogisticDesign& d, const Eigen::VectorXd& beta);
Eigen::VectorXd logistic_gradient(const LogisticDesign& d, const Eigen::VectorXd& beta);
Eigen::MatrixXd logistic_hessian(const LogisticDesign& d, const Eigen::VectorXd& beta);

}  // namespace ivsurv
