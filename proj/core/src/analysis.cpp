#include "softmoe/analysis.hpp"

#include <algorithm>
#include <cmath>

namespace softmoe {

CollapseReport collapse_experiment(const std::vector<long>& dims, long trials,
                                   bool normalized, Rng& rng, long tokens,
                                   long slots) {
  if (dims.size() < 2) throw UsageError("collapse_experiment: need >= 2 widths");
  if (trials < 1) throw UsageError("collapse_experiment: trials must be >= 1");
  CollapseReport report;
  report.tokens = tokens;
  report.slots = slots;
  report.trials = trials;

  for (long d : dims) {
    CollapseRecord rec;
    rec.d = d;
    rec.normalized = normalized;
    const Tensor gain = Tensor::full({1, d}, 1.0);
    const Tensor bias = Tensor::zeros({1, d});
    for (long t = 0; t < trials; ++t) {
      Tensor phi = glorot_init(rng, d, slots);
      Tensor x = normal_tensor(rng, {tokens, d});
      Tensor xln = layer_norm_rows(x, gain, bias);
      Tensor logits;
      if (normalized) {
        // scale = 1 (init value); l2-normalize token rows and phi columns
        logits = matmul(l2_normalize(xln, 1), l2_normalize(phi, 0));
      } else {
        logits = matmul(xln, phi);
      }
      const Tensor dispatch = softmax_over_axis(logits, 0);
      const Tensor combine = softmax_over_axis(logits, 1);
      double disp = 0.0;
      for (long j = 0; j < slots; ++j) {
        double mx = dispatch.at(0, j);
        for (long i = 1; i < tokens; ++i) mx = std::max(mx, dispatch.at(i, j));
        disp += mx;
      }
      disp /= static_cast<double>(slots);
      double comb = 0.0;
      for (long i = 0; i < tokens; ++i) {
        double mx = combine.at(i, 0);
        for (long j = 1; j < slots; ++j) mx = std::max(mx, combine.at(i, j));
        comb += mx;
      }
      comb /= static_cast<double>(tokens);
      rec.trial_max_dispatch.push_back(disp);
      rec.trial_max_combine.push_back(comb);
      rec.mean_max_dispatch += disp;
      rec.mean_max_combine += comb;
    }
    rec.mean_max_dispatch /= static_cast<double>(trials);
    rec.mean_max_combine /= static_cast<double>(trials);
    report.records.push_back(std::move(rec));
  }
  return report;
}

std::vector<double> token_contribution(const Tensor& dispatch) {
  if (dispatch.rank() != 2) throw ShapeError("token_contribution expects rank-2");
  std::vector<double> sums(static_cast<size_t>(dispatch.rows()), 0.0);
  for (long i = 0; i < dispatch.rows(); ++i)
    for (long j = 0; j < dispatch.cols(); ++j)
      sums[static_cast<size_t>(i)] += dispatch.at(i, j);
  return sums;
}

std::vector<double> quantiles(std::vector<double> values,
                              const std::vector<double>& cuts) {
  if (values.empty()) throw UsageError("quantiles: empty sample");
  std::sort(values.begin(), values.end());
  std::vector<double> out;
  out.reserve(cuts.size());
  const double n = static_cast<double>(values.size());
  for (double q : cuts) {
    const double pos = std::clamp(q, 0.0, 1.0) * (n - 1.0);
    const long lo = static_cast<long>(std::floor(pos));
    const long hi = static_cast<long>(std::ceil(pos));
    const double frac = pos - static_cast<double>(lo);
    out.push_back(values[static_cast<size_t>(lo)] * (1.0 - frac) +
                  values[static_cast<size_t>(hi)] * frac);
  }
  return out;
}

Tensor cumulative_weight_curves(const Tensor& weights,
                                WeightOrientation orientation) {
  if (weights.rank() != 2) throw ShapeError("cumulative_weight_curves expects rank-2");
  const bool dispatch = orientation == WeightOrientation::kDispatch;
  const long curves = dispatch ? weights.cols() : weights.rows();
  const long length = dispatch ? weights.rows() : weights.cols();

  Tensor out({curves, length});
  std::vector<double> slice(static_cast<size_t>(length));
  for (long c = 0; c < curves; ++c) {
    double total = 0.0;
    for (long k = 0; k < length; ++k) {
      slice[static_cast<size_t>(k)] = dispatch ? weights.at(k, c) : weights.at(c, k);
      total += slice[static_cast<size_t>(k)];
    }
    if (std::abs(total - 1.0) > 1e-6)
      throw NumericError(
          "cumulative_weight_curves: matrix is not stochastic in the "
          "requested orientation");
    std::sort(slice.begin(), slice.end(), std::greater<double>());
    double acc = 0.0;
    for (long k = 0; k < length; ++k) {
      acc += slice[static_cast<size_t>(k)];
      out.at(c, k) = acc;
    }
  }
  return out;
}

Tensor slot_correlation(const Tensor& phi, double eps) {
  if (phi.rank() != 2) throw ShapeError("slot_correlation expects rank-2 phi");
  // columns scaled by 1/max(norm, eps): unit diagonal for any nonzero column
  Tensor normed({phi.rows(), phi.cols()});
  for (long j = 0; j < phi.cols(); ++j) {
    double sq = 0.0;
    for (long i = 0; i < phi.rows(); ++i) sq += phi.at(i, j) * phi.at(i, j);
    const double inv = 1.0 / std::max(std::sqrt(sq), eps);
    for (long i = 0; i < phi.rows(); ++i) normed.at(i, j) = phi.at(i, j) * inv;
  }
  Tensor gram({phi.cols(), phi.cols()});
  gemm_acc(gram, normed, true, normed, false);
  for (long i = 0; i < gram.rows(); ++i) {
    for (long j = 0; j < gram.cols(); ++j)
      gram.at(i, j) = std::clamp(gram.at(i, j), -1.0, 1.0);
    gram.at(i, i) = 1.0;
  }
  return gram;
}

}  // namespace softmoe
