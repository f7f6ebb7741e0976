#pragma once

#include <string>
#include <vector>

#include "softmoe/rng.hpp"

namespace softmoe {

/// Single-thread forward+backward wall-time grid over routers x expert
/// counts at a fixed total slot count.
struct BenchGrid {
  std::vector<std::string> routers = {"soft", "tokens_choice"};
  std::vector<long> expert_counts = {8, 64, 256};
  long total_slots = 256;  // soft layers use p = total_slots / experts
  long tokens = 256;
  long d = 64;
  long d_mlp = 128;
  long reps = 20;    // measured reps (median reported)
  long warmup = 3;   // discarded
};

struct BenchRow {
  std::string router;
  long experts = 0;  // 0 for the dense reference row
  long slots = 0;
  double median_ms = 0.0;
  long reps = 0;
};

std::vector<BenchRow> throughput_bench(const BenchGrid& grid, uint64_t seed);

}  // namespace softmoe
