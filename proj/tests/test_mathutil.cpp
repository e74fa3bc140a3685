#include <cmath>
#include <numbers>
#include <vector>

#include "doctest.h"
#include "ivsurv/errors.hpp"
#include "ivsurv/mathutil.hpp"
#include "ivsurv/rng.hpp"

using namespace ivsurv;

namespace {

// Bisection inverse of the erfc-based normal CDF; slow but independent.
double qnorm_bisect(double p) {
  double lo = -10.0, hi = 10.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (0.5 * std::erfc(-mid / std::numbers::sqrt2) < p) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

}  // namespace

TEST_CASE("norm_quantile matches an independent bisection oracle") {
  for (double p : {1e-6, 0.001, 0.025, 0.2, 0.5, 0.8, 0.975, 0.999, 1.0 - 1e-6}) {
    CHECK(norm_quantile(p) == doctest::Approx(qnorm_bisect(p)).epsilon(1e-9));
  }
  CHECK(norm_quantile(0.5) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(norm_quantile(0.975) == doctest::Approx(1.959963984540054).epsilon(1e-9));
  CHECK(norm_quantile(0.3) == doctest::Approx(-norm_quantile(0.7)).epsilon(1e-12));
  CHECK_THROWS_AS(norm_quantile(0.0), ConfigError);
  CHECK_THROWS_AS(norm_quantile(1.0), ConfigError);
}

TEST_CASE("pairwise_sum equals plain summation on benign data") {
  RngStream rng(7);
  std::vector<double> v(1000);
  long double ref = 0.0;
  for (auto& x : v) {
    x = rng.uniform(-1.0, 1.0);
    ref += x;
  }
  CHECK(pairwise_sum(v) == doctest::Approx(static_cast<double>(ref)).epsilon(1e-13));
}

TEST_CASE("sample_quantile interpolates order statistics") {
  std::vector<double> odd = {5, 1, 3, 2, 4};
  CHECK(sample_quantile(odd, 0.5) == doctest::Approx(3.0));
  std::vector<double> even = {4, 1, 3, 2};
  CHECK(sample_quantile(even, 0.5) == doctest::Approx(2.5));
  CHECK_THROWS_AS(sample_quantile(odd, 0.0), ConfigError);
  CHECK_THROWS_AS(sample_quantile(odd, 1.0), ConfigError);
}

TEST_CASE("sample_quantile is nondecreasing in q") {
  RngStream rng(11);
  std::vector<double> v(57);
  for (auto& x : v) x = rng.exponential(2.0);
  double prev = -1.0;
  for (double q = 0.05; q < 1.0; q += 0.05) {
    const double cur = sample_quantile(v, q);
    CHECK(cur >= prev);
    prev = cur;
  }
}

TEST_CASE("rng substreams are deterministic and distinct") {
  RngStream a = RngStream::substream(42, 3);
  RngStream b = RngStream::substream(42, 3);
  RngStream c = RngStream::substream(42, 4);
  bool all_equal = true;
  bool any_equal_c = false;
  for (int i = 0; i < 100; ++i) {
    const double va = a.uniform();
    const double vb = b.uniform();
    const double vc = c.uniform();
    all_equal = all_equal && va == vb;
    any_equal_c = any_equal_c || va == vc;
  }
  CHECK(all_equal);
  CHECK_FALSE(any_equal_c);
}

TEST_CASE("rng normal moments are sane") {
  RngStream rng(5);
  const int n = 20000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    sum += x;
    sq += x * x;
  }
  CHECK(sum / n == doctest::Approx(0.0).epsilon(0.05));
  CHECK(std::abs(sum / n) < 4.0 / std::sqrt(static_cast<double>(n)));
  CHECK(sq / n == doctest::Approx(1.0).epsilon(0.05));
}
