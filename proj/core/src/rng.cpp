#include "softmoe/rng.hpp"

#include <cmath>

namespace softmoe {

namespace {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

uint64_t Rng::next_u64() {
  counter_ += 1;
  return splitmix64(seed_ * 0x9e3779b97f4a7c15ULL + counter_);
}

double Rng::uniform() {
  // 53 mantissa bits -> [0, 1)
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
  // Box-Muller; guard u1 > 0 so log is finite.
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

Rng Rng::fork(uint64_t seed, uint64_t stream, uint64_t substream) {
  uint64_t mixed = splitmix64(seed ^ splitmix64(stream + 0x51ed2701));
  mixed = splitmix64(mixed ^ splitmix64(substream + 0xabcd9e3));
  return Rng(mixed);
}

Tensor glorot_init(Rng& rng, long fan_in, long fan_out) {
  if (fan_in <= 0 || fan_out <= 0) throw ShapeError("glorot_init: fans must be positive");
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t({fan_in, fan_out});
  for (long i = 0; i < t.numel(); ++i) t.at(i) = rng.uniform(-bound, bound);
  return t;
}

Tensor normal_tensor(Rng& rng, std::vector<long> dims, double stddev) {
  Tensor t(std::move(dims));
  for (long i = 0; i < t.numel(); ++i) t.at(i) = stddev * rng.normal();
  return t;
}

}  // namespace softmoe
