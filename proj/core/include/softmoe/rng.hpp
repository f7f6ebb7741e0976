#pragma once

#include <cstdint>

#include "softmoe/tensor.hpp"

namespace softmoe {

/// Counter-based deterministic RNG (splitmix64 stream). The same seed always
/// produces the same bit-exact draw sequence, independent of platform RNG
/// library details.
class Rng {
 public:
  explicit Rng(uint64_t seed) : seed_(seed), counter_(0) {}

  uint64_t seed() const { return seed_; }
  uint64_t counter() const { return counter_; }

  uint64_t next_u64();

  /// Uniform in [0, 1).
  double uniform();

  /// Uniform in [lo, hi).
  double uniform(double lo, double hi);

  /// Standard normal via Box-Muller (two uniform draws per sample).
  double normal();

  /// Derive an independent stream, e.g. one per sweep cell or per sample.
  static Rng fork(uint64_t seed, uint64_t stream, uint64_t substream = 0);

 private:
  uint64_t seed_;
  uint64_t counter_;
};

/// I.i.d. uniform on +-sqrt(6 / (fan_in + fan_out)); deterministic under seed.
Tensor glorot_init(Rng& rng, long fan_in, long fan_out);

/// Tensor of i.i.d. standard normals with the given dims.
Tensor normal_tensor(Rng& rng, std::vector<long> dims, double stddev = 1.0);

}  // namespace softmoe
