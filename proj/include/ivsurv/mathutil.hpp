#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace ivsurv {

/// Logistic function 1/(1+exp(-x)), safe against overflow.
double expit(double x);

/// Inverse CDF of the standard normal distribution.
/// Rational approximation refined by one Halley step; absolute error
/// is far below 1e-8 over (0,1).
double norm_quantile(double p);

/// Sum with a fixed pairwise reduction tree. The result depends only on
/// the order of `values`, not on how the caller produced them, so
/// concurrent producers that write into fixed slots get reproducible sums.
double pairwise_sum(std::span<const double> values);

double mean(std::span<const double> values);

/// Sample standard deviation (denominator n-1). Returns 0 for n < 2.
double sample_sd(std::span<const double> values);

/// Linear-interpolation sample quantile (order statistics at h=(n-1)q).
/// `q` must lie in (0,1); values are copied and sorted internally.
double sample_quantile(std::span<const double> values, double q);

}  // namespace ivsurv
