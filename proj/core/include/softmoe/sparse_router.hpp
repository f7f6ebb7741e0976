#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "softmoe/graph.hpp"
#include "softmoe/rng.hpp"
#include "softmoe/soft_moe.hpp"
#include "softmoe/tensor.hpp"

namespace softmoe {

/// Per-(token, expert) routing probabilities: row-wise softmax of a linear
/// router head over the tokens of one group.
struct RouterScores {
  Tensor gates;  // [T x E], rows sum to 1

  long tokens() const { return gates.rows(); }
  long experts() const { return gates.cols(); }
};

RouterScores scores_from_logits(const Tensor& logits);

/// Hard assignment produced by a sparse router. Buffers hold (token, gate)
/// pairs in claim order; a token in no buffer is dropped.
struct SparseAssignment {
  struct Pick {
    long token;
    double gate;
  };
  std::vector<std::vector<Pick>> buffers;  // one per expert, length <= capacity
  std::vector<long> dropped;               // ascending token indices
  long group_tokens = 0;
  long capacity = 0;
  long top_k = 0;  // 0 for Experts Choice
  double capacity_mult = 1.0;
  bool bpr = false;
  long successful_claims = 0;

  long experts() const { return static_cast<long>(buffers.size()); }
  std::vector<long> per_expert_load() const;
  /// How many buffers contain each token.
  std::vector<long> selection_counts() const;
};

struct DropStats {
  double drop_rate = 0.0;                // |dropped| / T
  std::vector<long> per_expert_load;
  double multi_select_rate = 0.0;        // tokens in >= 2 buffers
};

DropStats drop_stats(const SparseAssignment& a);

/// Top-K routing with expert buffers of capacity ceil(c*K*T/E). Tokens are
/// processed in index order, or in decreasing max-gate order when bpr is on;
/// each claims its top-K experts in decreasing gate order, skipping full
/// buffers. Dropped iff all K choices were full.
SparseAssignment tokens_choice_route(const RouterScores& scores, long k, double c,
                                     bool bpr);

/// Each expert picks its top-C tokens of its gate column, C = round(c*T/E)
/// clamped to >= 1, ties broken toward the lower token index.
SparseAssignment experts_choice_route(const RouterScores& scores, double c);

/// Output token i = sum over buffers containing i of gate * f_e(x_i);
/// dropped tokens produce a zero row (the encoder residual carries them).
Tensor sparse_forward(const Tensor& x, const SparseAssignment& assignment,
                      const std::vector<ExpertMlp>& experts);

/// Graph version; `gates` must be the [T x E] node the assignment was built
/// from so gradients reach the router head through the gate weights.
Graph::Id sparse_forward_graph(Graph& g, Graph::Id x, Graph::Id gates,
                               const SparseAssignment& assignment,
                               const std::vector<ExpertMlpIds>& experts);

/// Mean of the squared coefficients of variation of per-expert summed gates
/// (importance) and per-expert assigned counts (load); 0 iff perfectly
/// balanced. Intended for Tokens Choice training.
double load_balance_loss(const RouterScores& scores, const SparseAssignment& a);

/// Differentiable version: the importance term is computed on the graph, the
/// load term enters as a constant, so the value matches load_balance_loss.
Graph::Id load_balance_loss_graph(Graph& g, Graph::Id gates,
                                  const SparseAssignment& a);

// --- Appendix-B style dropping sweep ---

struct SweepCell {
  std::string router;  // "tokens_choice" | "experts_choice"
  long experts = 8;
  long k = 1;       // tokens choice only (0 in experts-choice rows)
  double c = 1.0;
  bool bpr = false; // tokens choice only
  long group_tokens = 256;
};

struct SweepRow {
  SweepCell cell;
  double drop_rate = 0.0;          // means over trials
  double multi_select_rate = 0.0;
  double max_load = 0.0;
  double min_load = 0.0;
};

struct SweepConfig {
  std::vector<std::string> routers = {"tokens_choice", "experts_choice"};
  std::vector<long> expert_counts = {8, 16, 32, 64, 128};
  std::vector<double> capacity_mults = {1.0, 1.125};
  std::vector<long> ks = {1};
  std::vector<int> bprs = {0, 1};
  long group_tokens = 256;
  long trials = 100;
};

std::vector<SweepCell> enumerate_cells(const SweepConfig& cfg);

/// One row per cell, averaged over `trials` random Gaussian-logit score
/// matrices; deterministic under seed regardless of `parallel`.
std::vector<SweepRow> dropping_sweep(const SweepConfig& cfg, uint64_t seed,
                                     int parallel = 1);

/// Random row-stochastic gates from iid standard-normal logits.
RouterScores random_scores(Rng& rng, long tokens, long experts);

}  // namespace softmoe
