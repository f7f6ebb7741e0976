#pragma once

#include <string>

#include "softmoe/soft_moe.hpp"

namespace softmoe {

/// Fixed-routing ablations sharing the soft layer's forward skeleton.
/// Identity requires a square routing matrix (m == n*p).
enum class VariantKind { kSoft, kIdentity, kUniform, kUniformSoft, kSoftUniform };

VariantKind parse_variant(const std::string& name);
std::string variant_name(VariantKind kind);

/// Dispatch/combine for the chosen variant. Fixed variants report zero
/// logits; the learned sides use the usual X*phi logits.
RoutingWeights variant_weights(const Tensor& x, const SoftMoeParams& params,
                               VariantKind kind);

Tensor variant_forward(const Tensor& x, const SoftMoeParams& params,
                       VariantKind kind);

SoftMoeNodes variant_forward_graph(Graph& g, Graph::Id x,
                                   const SoftMoeGraphRefs& refs, VariantKind kind);
SoftMoeNodes variant_forward_graph(Graph& g, Graph::Id x,
                                   const SoftMoeGraphRefs& refs, VariantKind kind,
                                   const ExpertApply& apply);

}  // namespace softmoe
