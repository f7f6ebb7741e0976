#pragma once

#include <string>
#include <vector>

#include "softmoe/tensor.hpp"

namespace softmoe {

/// Define-by-run reverse-mode autodiff over a small, closed operator set.
/// Values are computed eagerly as nodes are added; backward() walks the tape
/// in reverse, touching each node exactly once. All arithmetic is 64-bit.
///
/// Every op validates that its output is finite and throws NumericError
/// otherwise, so divergence is caught at the op that produced it.
class Graph {
 public:
  using Id = int;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // --- leaves ---
  Id input(Tensor v, bool requires_grad = false);
  Id constant(Tensor v) { return input(std::move(v), false); }
  Id param(const std::string& name, const Tensor& v);

  // --- operators ---
  Id matmul(Id a, Id b);
  /// b may match a's shape, be a [1 x k] row broadcast over rows, or a
  /// [1 x 1] scalar.
  Id add(Id a, Id b);
  /// b may match a's shape, be a [1 x 1] scalar, or a [r x 1] column
  /// broadcast across each row.
  Id mul(Id a, Id b);
  Id softmax(Id a, int axis);
  Id l2_normalize(Id a, int axis, double eps = 1e-6);
  Id gelu(Id a);
  /// Row-wise layer norm with learnable gain/bias nodes of shape [1 x cols].
  Id layer_norm(Id x, Id gain, Id bias, double eps = 1e-6);
  Id reshape(Id a, std::vector<long> dims);
  Id transpose(Id a);
  Id reduce_sum(Id a, int axis);   // keepdims
  Id reduce_mean(Id a, int axis);  // keepdims
  Id reduce_sum_all(Id a);         // -> [1 x 1]
  Id reduce_mean_all(Id a);        // -> [1 x 1]
  Id gather_rows(Id a, std::vector<long> idx);
  Id gather_cols(Id a, std::vector<long> idx);
  Id concat_rows(const std::vector<Id>& parts);
  Id concat_cols(const std::vector<Id>& parts);
  /// Rows of src land at out[idx[r], :] (+=); the adjoint of gather_rows.
  Id scatter_rows(Id src, std::vector<long> idx, long out_rows);
  /// Mean over rows of (logsumexp(row) - row[label]); stable.
  Id softmax_cross_entropy(Id logits, std::vector<int> labels);
  /// Squared coefficient of variation (population) of a [1 x k] vector.
  Id cv_squared(Id a);

  // --- execution ---
  /// Seeds d(loss)/d(loss) = 1 and accumulates gradients into every node
  /// reachable from a differentiable leaf. `loss` must be [1 x 1].
  void backward(Id loss);

  const Tensor& value(Id id) const { return nodes_[static_cast<size_t>(id)].value; }
  /// Gradient accumulated by the last backward(); zeros if the node was
  /// never reached.
  const Tensor& grad(Id id) const;
  bool requires_grad(Id id) const {
    return nodes_[static_cast<size_t>(id)].requires_grad;
  }

  const std::vector<std::pair<std::string, Id>>& params() const { return params_; }

  size_t size() const { return nodes_.size(); }
  /// Forward-pass FLOP tally (multiply-accumulate counted as 2 FLOPs;
  /// data-movement ops count 0).
  double flops() const { return flops_; }

 private:
  enum class Op {
    kInput, kMatmul, kAdd, kMul, kSoftmax, kL2Normalize, kGelu, kLayerNorm,
    kReshape, kTranspose, kReduceSum, kReduceMean, kGatherRows, kGatherCols,
    kConcatRows, kConcatCols, kScatterRows, kCrossEntropy, kCvSquared,
  };

  struct Node {
    Op op;
    std::vector<Id> parents;
    Tensor value;
    Tensor grad;  // allocated on demand during backward
    bool requires_grad = false;
    bool grad_live = false;
    int axis = 0;
    double eps = 0.0;
    bool all_reduce = false;
    std::vector<long> indices;
    std::vector<int> labels;
  };

  Id push(Node n);
  Node& at(Id id) { return nodes_[static_cast<size_t>(id)]; }
  const Node& at(Id id) const { return nodes_[static_cast<size_t>(id)]; }
  Tensor& grad_buf(Id id);
  bool any_parent_grad(const std::vector<Id>& ps) const;
  void backward_node(Id id);

  std::vector<Node> nodes_;
  std::vector<std::pair<std::string, Id>> params_;
  double flops_ = 0.0;
  bool ran_backward_ = false;
  Tensor zero_grad_dummy_;
};

}  // namespace softmoe
