#pragma once

#include <string>
#include <vector>

#include "softmoe/encoder.hpp"

namespace softmoe {

/// Per-image forward FLOPs by component, one multiply-accumulate counted as
/// 2 FLOPs. Attention projections are the four d x d maps; scores/values are
/// the two m^2 d contractions; MoE routing covers the logits, dispatch and
/// combine contractions (2*m*slots*d each).
struct CostModel {
  double patch_embed = 0.0;
  double attention_proj = 0.0;
  double attention_scores = 0.0;
  double mlp_dense = 0.0;
  double moe_experts = 0.0;
  double moe_routing = 0.0;
  double head = 0.0;

  double total() const {
    return patch_embed + attention_proj + attention_scores + mlp_dense +
           moe_experts + moe_routing + head;
  }
  std::vector<std::pair<std::string, double>> components() const;
};

/// Analytic per-image forward cost of the configured encoder evaluated at
/// the given input resolution (the config's own image_size is ignored).
CostModel flop_estimate(const EncoderConfig& cfg, long resolution);

/// Named paper-scale configurations: vit-{s16,b16,l16,h14} and
/// softmoe-{s16,b16,l16,h14}-128e / softmoe-s14-256e / softmoe-h14-256e.
EncoderConfig model_preset(const std::string& name);
std::vector<std::string> model_preset_names();

}  // namespace softmoe
