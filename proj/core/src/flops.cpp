#include "softmoe/flops.hpp"

namespace softmoe {

std::vector<std::pair<std::string, double>> CostModel::components() const {
  return {{"patch_embed", patch_embed},
          {"attention_proj", attention_proj},
          {"attention_scores", attention_scores},
          {"mlp_dense", mlp_dense},
          {"moe_experts", moe_experts},
          {"moe_routing", moe_routing},
          {"head", head}};
}

CostModel flop_estimate(const EncoderConfig& cfg, long resolution) {
  if (resolution < cfg.patch || resolution % cfg.patch != 0)
    throw UsageError("flop_estimate: patch must divide resolution");
  const double m = static_cast<double>((resolution / cfg.patch) *
                                       (resolution / cfg.patch));
  const double d = static_cast<double>(cfg.d);
  const double d_mlp = static_cast<double>(cfg.d_mlp);
  const double slots = static_cast<double>(cfg.moe.experts * cfg.moe.slots_per_expert);
  const bool sparse_router = cfg.moe.router == RouterKind::kTokensChoice ||
                             cfg.moe.router == RouterKind::kExpertsChoice;

  CostModel c;
  c.patch_embed = 2.0 * m * static_cast<double>(cfg.patch_dim()) * d;
  c.head = 2.0 * d * static_cast<double>(cfg.classes);
  for (long b = 0; b < cfg.depth; ++b) {
    c.attention_proj += 8.0 * m * d * d;       // q, k, v, o projections
    c.attention_scores += 4.0 * m * m * d;     // QK^T and AV
    const bool moe = cfg.is_moe_layer(b) && cfg.moe.router != RouterKind::kDense;
    if (!moe) {
      c.mlp_dense += 4.0 * m * d * d_mlp;
    } else if (sparse_router) {
      // router head; per-token expert work at multiplier c (K choices for
      // tokens choice, buffer slack for experts choice)
      c.moe_routing += 2.0 * m * static_cast<double>(cfg.moe.experts) * d;
      const double mult = cfg.moe.router == RouterKind::kTokensChoice
                              ? cfg.moe.capacity * static_cast<double>(cfg.moe.top_k)
                              : cfg.moe.capacity;
      c.moe_experts += 4.0 * m * mult * d * d_mlp;
    } else {
      c.moe_experts += 4.0 * slots * d * d_mlp;
      c.moe_routing += 6.0 * m * slots * d;  // logits + dispatch + combine
    }
  }
  return c;
}

namespace {

EncoderConfig backbone(long patch, long depth, long d, long heads, long d_mlp) {
  EncoderConfig cfg;
  cfg.image_size = 224;
  cfg.patch = patch;
  cfg.channels = 3;
  cfg.depth = depth;
  cfg.d = d;
  cfg.heads = heads;
  cfg.d_mlp = d_mlp;
  cfg.classes = 1000;
  cfg.moe.layers.clear();
  return cfg;
}

void moe_second_half(EncoderConfig& cfg, long experts) {
  cfg.moe.router = RouterKind::kSoft;
  cfg.moe.experts = experts;
  cfg.moe.slots_per_expert = 1;
  for (long b = cfg.depth / 2; b < cfg.depth; ++b) cfg.moe.layers.push_back(b);
}

}  // namespace

EncoderConfig model_preset(const std::string& name) {
  EncoderConfig cfg;
  if (name == "vit-s16") return backbone(16, 12, 384, 6, 1536);
  if (name == "vit-b16") return backbone(16, 12, 768, 12, 3072);
  if (name == "vit-l16") return backbone(16, 24, 1024, 16, 4096);
  if (name == "vit-h14") return backbone(14, 32, 1280, 16, 5120);
  if (name == "softmoe-s16-128e") {
    cfg = backbone(16, 12, 384, 6, 1536);
    moe_second_half(cfg, 128);
    return cfg;
  }
  if (name == "softmoe-s14-256e") {
    cfg = backbone(14, 12, 384, 6, 1536);
    moe_second_half(cfg, 256);
    return cfg;
  }
  if (name == "softmoe-b16-128e") {
    cfg = backbone(16, 12, 768, 12, 3072);
    moe_second_half(cfg, 128);
    return cfg;
  }
  if (name == "softmoe-l16-128e") {
    cfg = backbone(16, 24, 1024, 16, 4096);
    moe_second_half(cfg, 128);
    return cfg;
  }
  if (name == "softmoe-h14-128e") {
    cfg = backbone(14, 32, 1280, 16, 5120);
    moe_second_half(cfg, 128);
    return cfg;
  }
  if (name == "softmoe-h14-256e") {
    cfg = backbone(14, 32, 1280, 16, 5120);
    moe_second_half(cfg, 256);
    return cfg;
  }
  throw UsageError("unknown model preset '" + name + "'");
}

std::vector<std::string> model_preset_names() {
  return {"vit-s16",          "vit-b16",          "vit-l16",
          "vit-h14",          "softmoe-s16-128e", "softmoe-s14-256e",
          "softmoe-b16-128e", "softmoe-l16-128e", "softmoe-h14-128e",
          "softmoe-h14-256e"};
}

}  // namespace softmoe
