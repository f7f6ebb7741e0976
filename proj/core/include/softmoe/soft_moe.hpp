#pragma once

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "softmoe/graph.hpp"
#include "softmoe/rng.hpp"
#include "softmoe/tensor.hpp"

namespace softmoe {

/// Per-token MLP: dense(d -> d_mlp), GELU, dense(d_mlp -> d), biases included.
struct ExpertMlp {
  Tensor w1;  // [d x d_mlp]
  Tensor b1;  // [1 x d_mlp]
  Tensor w2;  // [d_mlp x d]
  Tensor b2;  // [1 x d]
};

/// Parameters of one soft-routing layer: slot projections phi [d x (n*p)],
/// the trainable logit scale used with the normalization, and n experts of
/// identical architecture with distinct weights.
struct SoftMoeParams {
  Tensor phi;
  Tensor scale = Tensor::scalar(1.0);  // trainable scalar, kept [1 x 1]
  bool normalize = true;
  std::vector<ExpertMlp> experts;
  long slots_per_expert = 1;

  long num_experts() const { return static_cast<long>(experts.size()); }
  long num_slots() const { return num_experts() * slots_per_expert; }
  long width() const { return phi.rows(); }

  static SoftMoeParams init(Rng& rng, long d, long d_mlp, long experts,
                            long slots_per_expert, bool normalize = true);
  void validate() const;
};

/// Paired routing matrices for one sequence: dispatch columns sum to 1
/// (tokens -> slots), combine rows sum to 1 (slots -> tokens).
struct RoutingWeights {
  Tensor dispatch;  // [m x (n*p)]
  Tensor combine;   // [m x (n*p)]
  Tensor logits;    // [m x (n*p)]
};

/// slot i is owned by expert floor(i / p): contiguous blocks of p slots.
std::vector<long> allocate_slots(long experts, long slots_per_expert);

// --- value-level operations ---

/// Routing logits: X phi, or with normalization
/// l2_normalize(X, rows) * (scale * l2_normalize(phi, cols)).
Tensor compute_logits(const Tensor& x, const SoftMoeParams& params);

/// Column-wise softmax of the logits (normalized over tokens per slot).
Tensor dispatch_weights(const Tensor& logits);

/// Row-wise softmax of the logits (normalized over all slots per token).
Tensor combine_weights(const Tensor& logits);

struct SoftMoeOutput {
  Tensor y;
  RoutingWeights weights;
};

/// Full layer: slots = D^T X, slot i processed by expert floor(i/p),
/// Y = C Ytilde.
SoftMoeOutput soft_moe_forward(const Tensor& x, const SoftMoeParams& params);

// --- graph-building API (used by the encoder and the gradient tests) ---

struct ExpertMlpIds {
  Graph::Id w1, b1, w2, b2;
};

struct SoftMoeGraphRefs {
  Graph::Id phi = -1;
  Graph::Id scale = -1;
  std::vector<ExpertMlpIds> experts;
  long slots_per_expert = 1;
  bool normalize = true;
};

/// Registers all layer parameters on the graph under `prefix`.
SoftMoeGraphRefs bind_soft_moe_params(Graph& g, const SoftMoeParams& params,
                                      const std::string& prefix);

struct SoftMoeNodes {
  Graph::Id y = -1;
  Graph::Id logits = -1;
  Graph::Id dispatch = -1;
  Graph::Id combine = -1;
};

/// Custom expert application hook; the default applies the bound MLPs.
/// Receives the rows of slot input belonging to one expert.
using ExpertApply = std::function<Graph::Id(Graph&, long expert, Graph::Id slot_rows)>;

SoftMoeNodes soft_moe_forward_graph(Graph& g, Graph::Id x,
                                    const SoftMoeGraphRefs& refs);
SoftMoeNodes soft_moe_forward_graph(Graph& g, Graph::Id x,
                                    const SoftMoeGraphRefs& refs,
                                    const ExpertApply& apply);

/// Shared slot-filling skeleton: slots = dispatch^T x, expert floor(i/p) on
/// slot i, y = combine * slot outputs. The ablation variants substitute
/// fixed dispatch/combine nodes here.
Graph::Id routed_expert_graph(Graph& g, Graph::Id x, Graph::Id dispatch,
                              Graph::Id combine, const SoftMoeGraphRefs& refs,
                              const ExpertApply& apply);

ExpertApply default_expert_apply(const SoftMoeGraphRefs& refs);

/// dense(w1,b1) -> GELU -> dense(w2,b2) applied to each row of `rows`.
Graph::Id expert_mlp_graph(Graph& g, const ExpertMlpIds& ids, Graph::Id rows);

ExpertMlp init_expert(Rng& rng, long d, long d_mlp);

}  // namespace softmoe
