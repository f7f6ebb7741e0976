#pragma once

#include <optional>
#include <string>
#include <vector>

#include "softmoe/graph.hpp"
#include "softmoe/rng.hpp"
#include "softmoe/soft_moe.hpp"
#include "softmoe/sparse_router.hpp"
#include "softmoe/variants.hpp"

namespace softmoe {

enum class RouterKind { kDense, kSoft, kTokensChoice, kExpertsChoice, kVariant };

RouterKind parse_router(const std::string& name);
std::string router_name(RouterKind kind);

struct MoeConfig {
  std::vector<long> layers;  // block indices carrying an MoE in place of the MLP
  RouterKind router = RouterKind::kSoft;
  VariantKind variant = VariantKind::kUniform;
  long experts = 16;
  long slots_per_expert = 1;
  long top_k = 1;
  double capacity = 1.0;
  bool bpr = false;
  long group_size = 1;  // sequences routed jointly (sparse routers)
  bool normalize = true;
};

/// Backbone description driving both training and the FLOP model.
struct EncoderConfig {
  long image_size = 32;
  long patch = 4;
  long channels = 1;
  long depth = 4;
  long d = 64;
  long heads = 4;
  long d_mlp = 256;
  long classes = 8;
  MoeConfig moe;

  long tokens_per_side() const { return image_size / patch; }
  long tokens() const { return tokens_per_side() * tokens_per_side(); }
  long patch_dim() const { return patch * patch * channels; }
  bool is_moe_layer(long block) const;
  void validate() const;
};

/// Non-overlapping raster-order patches, each flattened row-major to
/// patch*patch*C values. Input is [H x W x C] (rank 3) or [H x W].
Tensor patchify(const Tensor& image, long patch);
Tensor unpatchify(const Tensor& tokens, long image_size, long patch, long channels);

struct LayerNormParams {
  Tensor gain, bias;
};

struct AttentionParams {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
};

struct BlockParams {
  LayerNormParams ln1, ln2;
  AttentionParams attn;
  bool is_moe = false;
  ExpertMlp mlp;                          // dense blocks
  SoftMoeParams soft;                     // soft / variant blocks
  Tensor router_head;                     // [d x E], sparse routers
  std::vector<ExpertMlp> sparse_experts;  // sparse routers
};

/// Pre-norm ViT encoder with global-average-pool head (no class token) and
/// MoE blocks substituted at the configured depths.
class Encoder {
 public:
  Encoder(EncoderConfig cfg, Rng& rng);

  const EncoderConfig& config() const { return cfg_; }

  /// Writable references to every parameter tensor, in a fixed order.
  std::vector<std::pair<std::string, Tensor*>> param_refs();
  std::vector<std::pair<std::string, const Tensor*>> param_refs() const;
  long param_count() const;
  /// Parameter count of one block's MLP-or-MoE stage (routing params included).
  long ffn_param_count(long block) const;

  struct LayerDiag {
    long block = 0;
    double drop_rate = 0.0;           // sparse routers, mean over groups
    double pre_residual_row_spread = 0.0;
    std::vector<RoutingWeights> routing;  // per sequence, when captured
  };

  struct ForwardResult {
    Graph::Id class_logits = -1;  // [batch x classes]
    std::vector<Graph::Id> encoded;     // per-sequence final [m x d] states
    std::vector<LayerDiag> moe_diags;
    std::vector<Graph::Id> aux_losses;  // tokens-choice balance terms
    double drop_rate = 0.0;             // mean over MoE layers
    double aux_loss = 0.0;              // mean over aux nodes (value)
  };

  struct ForwardOptions {
    bool capture_routing = false;
  };

  /// Builds the whole batch forward on `g`. Sequences are processed
  /// independently except that sparse routers pool `group_size` consecutive
  /// sequences per routing group.
  ForwardResult forward(Graph& g, const std::vector<Tensor>& images,
                        ForwardOptions opts) const;
  ForwardResult forward(Graph& g, const std::vector<Tensor>& images) const {
    return forward(g, images, ForwardOptions{});
  }

  /// Forward of a single sequence; output is the [m x d] encoder state
  /// before the classifier head (used by the determinism checks).
  Tensor encode(const Tensor& image) const;

  struct Bound;  // graph-bound parameter ids (implementation detail)

 private:
  Bound bind(Graph& g) const;

  EncoderConfig cfg_;
  Tensor embed_w_, embed_b_, posemb_;
  std::vector<BlockParams> blocks_;
  LayerNormParams final_ln_;
  Tensor head_w_, head_b_;
};

}  // namespace softmoe
