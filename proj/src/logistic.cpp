#include "ivsurv/logistic.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "ivsurv/errors.hpp"
#include "ivsurv/mathutil.hpp"

namespace ivsurv {

LogisticDesign make_logistic_design(const std::vector<ObservedRecord>& records,
                                    const FeatureMap& features, BinaryTarget target) {
  const auto n = static_cast<Eigen::Index>(records.size());
  LogisticDesign d;
  d.x.resize(n, features.dim() + 1);
  d.y.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = records[static_cast<std::size_t>(i)];
    d.x(i, 0) = 1.0;
    d.x.row(i).tail(features.dim()) = features.eval(r);
    const bool y = target == BinaryTarget::treatment ? r.treatment : r.instrument;
    d.y[i] = y ? 1.0 : 0.0;
  }
  return d;
}

double logistic_loglik(const LogisticDesign& d, const Eigen::VectorXd& beta) {
  const Eigen::VectorXd eta = d.x * beta;
  double ll = 0.0;
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    // y*eta - log(1+exp(eta)), written overflow-safe
    const double e = eta[i];
    ll += d.y[i] * e - (e > 0 ? e + std::log1p(std::exp(-e)) : std::log1p(std::exp(e)));
  }
  return ll;
}

Eigen::VectorXd logistic_gradient(const LogisticDesign& d, const Eigen::VectorXd& beta) {
  const Eigen::VectorXd eta = d.x * beta;
  Eigen::VectorXd resid(eta.size());
  for (Eigen::Index i = 0; i < eta.size(); ++i) resid[i] = d.y[i] - expit(eta[i]);
  return d.x.transpose() * resid;
}

Eigen::MatrixXd logistic_hessian(const LogisticDesign& d, const Eigen::VectorXd& beta) {
  const Eigen::VectorXd eta = d.x * beta;
  Eigen::VectorXd w(eta.size());
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    const double p = expit(eta[i]);
    w[i] = p * (1.0 - p);
  }
  return -(d.x.transpose() * w.asDiagonal() * d.x);
}

LogisticBinaryModel fit_logistic(const Cohort& cohort, const FeatureMap& features,
                                 BinaryTarget target, const LogisticFitOptions& opts) {
  return fit_logistic(cohort.records(), features, target, opts);
}

LogisticBinaryModel fit_logistic(const std::vector<ObservedRecord>& records,
                                 const FeatureMap& features, BinaryTarget target,
                                 const LogisticFitOptions& opts) {
  const LogisticDesign d = make_logistic_design(records, features, target);

  const double ybar = d.y.mean();
  if (ybar == 0.0 || ybar == 1.0) {
    throw EstimationError(target == BinaryTarget::treatment
                              ? "treatment target is constant"
                              : "instrument target is constant");
  }

  // Freeze non-varying feature columns (collinear with the intercept).
  std::vector<Eigen::Index> active = {0};
  for (Eigen::Index j = 1; j < d.x.cols(); ++j) {
    if (d.x.col(j).maxCoeff() > d.x.col(j).minCoeff()) active.push_back(j);
  }
  LogisticDesign da;
  da.y = d.y;
  da.x.resize(d.x.rows(), static_cast<Eigen::Index>(active.size()));
  for (std::size_t j = 0; j < active.size(); ++j) {
    da.x.col(static_cast<Eigen::Index>(j)) = d.x.col(active[j]);
  }

  Eigen::VectorXd b = Eigen::VectorXd::Zero(da.x.cols());
  double ll = logistic_loglik(da, b);
  bool converged = false;
  for (int iter = 0; iter < opts.max_iterations; ++iter) {
    const Eigen::VectorXd g = logistic_gradient(da, b);
    if (g.norm() < opts.gradient_tol) {
      converged = true;
      break;
    }
    const Eigen::MatrixXd h = logistic_hessian(da, b);
    Eigen::VectorXd step = (-h).ldlt().solve(g);
    if (!step.allFinite()) {
      throw ConvergenceError("logistic information matrix is singular");
    }
    const double slack = 1e-13 * (std::abs(ll) + 1.0);
    double new_ll = logistic_loglik(da, b + step);
    int halvings = 0;
    while (!(new_ll >= ll - slack) && halvings < opts.max_step_halvings) {
      step *= 0.5;
      new_ll = logistic_loglik(da, b + step);
      ++halvings;
    }
    if (!(new_ll >= ll - slack)) {
      throw ConvergenceError("logistic fit stalled: step halving failed");
    }
    b += step;
    ll = new_ll;
    if (b.lpNorm<Eigen::Infinity>() > opts.divergence_norm) {
      throw ConvergenceError("logistic coefficient diverging (separation)");
    }
  }
  if (!converged && logistic_gradient(da, b).norm() >= opts.gradient_tol) {
    throw ConvergenceError("logistic fit did not converge in " +
                           std::to_string(opts.max_iterations) + " iterations");
  }
  // polish to drive the gradient to the floating-point floor
  const Eigen::VectorXd polish =
      (-logistic_hessian(da, b)).ldlt().solve(logistic_gradient(da, b));
  if (polish.allFinite()) b += polish;

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(d.x.cols());
  for (std::size_t j = 0; j < active.size(); ++j) beta[active[j]] = b[j];
  return LogisticBinaryModel(std::move(beta), features);
}

}  // namespace ivsurv
