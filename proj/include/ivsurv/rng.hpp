#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "ivsurv/mathutil.hpp"

namespace ivsurv {

/// Deterministic random stream. Substreams derived from the same base seed
/// are statistically independent, so replicate r can always be regenerated
/// from (base_seed, r) regardless of scheduling.
///
/// All variates are produced by inverse-CDF transforms of 53-bit uniforms,
/// which keeps sequences bit-identical across platforms (the standard
/// <random> distributions make no such guarantee).
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : engine_(mix(mix(seed) ^ kPhi)) {}

  /// Seed value for stream `stream_id` under `base_seed`.
  static std::uint64_t derive_seed(std::uint64_t base_seed, std::uint64_t stream_id) {
    return mix(base_seed + kPhi * (stream_id + 1));
  }

  static RngStream substream(std::uint64_t base_seed, std::uint64_t stream_id) {
    return RngStream(derive_seed(base_seed, stream_id));
  }

  /// Uniform on the open interval (0,1).
  double uniform() {
    return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  bool bernoulli(double p) { return uniform() < p; }

  double normal() { return norm_quantile(uniform()); }

  double exponential(double mean) { return -mean * std::log(uniform()); }

 private:
  static constexpr std::uint64_t kPhi = 0x9e3779b97f4a7c15ull;

  static std::uint64_t mix(std::uint64_t x) {  // splitmix64 finalizer
    x += kPhi;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
  }

  std::mt19937_64 engine_;
};

}  // namespace ivsurv
