#include "softmoe/variants.hpp"

namespace softmoe {

VariantKind parse_variant(const std::string& name) {
  if (name == "soft") return VariantKind::kSoft;
  if (name == "identity") return VariantKind::kIdentity;
  if (name == "uniform") return VariantKind::kUniform;
  if (name == "uniform_soft") return VariantKind::kUniformSoft;
  if (name == "soft_uniform") return VariantKind::kSoftUniform;
  throw UsageError("unknown routing variant '" + name + "'");
}

std::string variant_name(VariantKind kind) {
  switch (kind) {
    case VariantKind::kSoft: return "soft";
    case VariantKind::kIdentity: return "identity";
    case VariantKind::kUniform: return "uniform";
    case VariantKind::kUniformSoft: return "uniform_soft";
    case VariantKind::kSoftUniform: return "soft_uniform";
  }
  throw UsageError("unreachable variant kind");
}

namespace {

void require_square(long m, long slots) {
  if (m != slots)
    throw UsageError("identity routing requires tokens == slots (got " +
                     std::to_string(m) + " tokens, " + std::to_string(slots) +
                     " slots)");
}

}  // namespace

RoutingWeights variant_weights(const Tensor& x, const SoftMoeParams& params,
                               VariantKind kind) {
  const long m = x.rows();
  const long slots = params.num_slots();
  RoutingWeights w;
  switch (kind) {
    case VariantKind::kSoft: {
      w.logits = compute_logits(x, params);
      w.dispatch = dispatch_weights(w.logits);
      w.combine = combine_weights(w.logits);
      break;
    }
    case VariantKind::kIdentity: {
      require_square(m, slots);
      w.logits = Tensor::zeros({m, slots});
      w.dispatch = Tensor::identity(m);
      w.combine = Tensor::identity(m);
      break;
    }
    case VariantKind::kUniform: {
      w.logits = Tensor::zeros({m, slots});
      w.dispatch = Tensor::full({m, slots}, 1.0 / static_cast<double>(m));
      w.combine = Tensor::full({m, slots}, 1.0 / static_cast<double>(slots));
      break;
    }
    case VariantKind::kUniformSoft: {
      w.logits = compute_logits(x, params);
      w.dispatch = Tensor::full({m, slots}, 1.0 / static_cast<double>(m));
      w.combine = combine_weights(w.logits);
      break;
    }
    case VariantKind::kSoftUniform: {
      w.logits = compute_logits(x, params);
      w.dispatch = dispatch_weights(w.logits);
      w.combine = Tensor::full({m, slots}, 1.0 / static_cast<double>(slots));
      break;
    }
  }
  return w;
}

Tensor variant_forward(const Tensor& x, const SoftMoeParams& params,
                       VariantKind kind) {
  Graph g;
  Graph::Id xid = g.input(x, false);
  SoftMoeGraphRefs refs = bind_soft_moe_params(g, params, "moe.");
  return g.value(variant_forward_graph(g, xid, refs, kind).y);
}

SoftMoeNodes variant_forward_graph(Graph& g, Graph::Id x,
                                   const SoftMoeGraphRefs& refs,
                                   VariantKind kind) {
  return variant_forward_graph(g, x, refs, kind, default_expert_apply(refs));
}

SoftMoeNodes variant_forward_graph(Graph& g, Graph::Id x,
                                   const SoftMoeGraphRefs& refs, VariantKind kind,
                                   const ExpertApply& apply) {
  if (kind == VariantKind::kSoft) return soft_moe_forward_graph(g, x, refs, apply);

  const long m = g.value(x).rows();
  const long slots = static_cast<long>(refs.experts.size()) * refs.slots_per_expert;
  SoftMoeNodes nodes;

  auto soft_logits = [&]() {
    if (refs.normalize) {
      Graph::Id xn = g.l2_normalize(x, 1);
      Graph::Id pn = g.mul(g.l2_normalize(refs.phi, 0), refs.scale);
      return g.matmul(xn, pn);
    }
    return g.matmul(x, refs.phi);
  };

  switch (kind) {
    case VariantKind::kIdentity:
      require_square(m, slots);
      nodes.logits = g.constant(Tensor::zeros({m, slots}));
      nodes.dispatch = g.constant(Tensor::identity(m));
      nodes.combine = g.constant(Tensor::identity(m));
      break;
    case VariantKind::kUniform:
      nodes.logits = g.constant(Tensor::zeros({m, slots}));
      nodes.dispatch =
          g.constant(Tensor::full({m, slots}, 1.0 / static_cast<double>(m)));
      nodes.combine =
          g.constant(Tensor::full({m, slots}, 1.0 / static_cast<double>(slots)));
      break;
    case VariantKind::kUniformSoft:
      nodes.logits = soft_logits();
      nodes.dispatch =
          g.constant(Tensor::full({m, slots}, 1.0 / static_cast<double>(m)));
      nodes.combine = g.softmax(nodes.logits, 1);
      break;
    case VariantKind::kSoftUniform:
      nodes.logits = soft_logits();
      nodes.dispatch = g.softmax(nodes.logits, 0);
      nodes.combine =
          g.constant(Tensor::full({m, slots}, 1.0 / static_cast<double>(slots)));
      break;
    case VariantKind::kSoft:
      break;  // handled above
  }
  nodes.y = routed_expert_graph(g, x, nodes.dispatch, nodes.combine, refs, apply);
  return nodes;
}

}  // namespace softmoe
