#pragma once

#include <string>
#include <vector>

#include "softmoe/rng.hpp"
#include "softmoe/tensor.hpp"

namespace softmoe {

/// One grid point of the softmax-saturation study: width d, whether the
/// routing logits were re-normalized, and the resulting mean max weights.
struct CollapseRecord {
  long d = 0;
  bool normalized = false;
  double mean_max_dispatch = 0.0;  // mean over trials
  double mean_max_combine = 0.0;
  std::vector<double> trial_max_dispatch;  // per-trial means over slots/tokens
  std::vector<double> trial_max_combine;
};

struct CollapseReport {
  long tokens = 0;
  long slots = 0;
  long trials = 0;
  std::vector<CollapseRecord> records;
};

/// For each width d: draw Glorot slot projections and a random token batch,
/// layer-normalize the tokens (unit gain, zero bias), form routing logits
/// with or without the l2 re-normalization (scale = 1), and record the mean
/// max dispatch weight per slot and mean max combine weight per token.
CollapseReport collapse_experiment(const std::vector<long>& dims, long trials,
                                   bool normalized, Rng& rng, long tokens = 256,
                                   long slots = 256);

/// Per-token summed dispatch weight: sum_j D[i][j].
std::vector<double> token_contribution(const Tensor& dispatch);

/// Quantiles (inclusive linear interpolation) of a sample at the given cut
/// points in [0, 1].
std::vector<double> quantiles(std::vector<double> values,
                              const std::vector<double>& cuts);

enum class WeightOrientation { kDispatch, kCombine };

/// Sorted-descending cumulative weight per slot (dispatch columns) or per
/// token (combine rows); each curve ends at 1 within 1e-9. Throws
/// NumericError if the matrix is not stochastic in the stated orientation.
/// Row r of the result is the curve for slot/token r.
Tensor cumulative_weight_curves(const Tensor& weights, WeightOrientation orientation);

/// Cosine similarity between every pair of slot parameter columns;
/// symmetric with unit diagonal.
Tensor slot_correlation(const Tensor& phi, double eps = 1e-6);

}  // namespace softmoe
