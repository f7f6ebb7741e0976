#include "softmoe/soft_moe.hpp"

namespace softmoe {

ExpertMlp init_expert(Rng& rng, long d, long d_mlp) {
  ExpertMlp e;
  e.w1 = glorot_init(rng, d, d_mlp);
  e.b1 = Tensor::zeros({1, d_mlp});
  e.w2 = glorot_init(rng, d_mlp, d);
  e.b2 = Tensor::zeros({1, d});
  return e;
}

SoftMoeParams SoftMoeParams::init(Rng& rng, long d, long d_mlp, long experts,
                                  long slots_per_expert, bool normalize) {
  if (experts < 1 || slots_per_expert < 1)
    throw ShapeError("soft moe: experts and slots per expert must be >= 1");
  SoftMoeParams p;
  p.phi = glorot_init(rng, d, experts * slots_per_expert);
  p.scale = Tensor::scalar(1.0);
  p.normalize = normalize;
  p.slots_per_expert = slots_per_expert;
  p.experts.reserve(static_cast<size_t>(experts));
  for (long e = 0; e < experts; ++e) p.experts.push_back(init_expert(rng, d, d_mlp));
  p.validate();
  return p;
}

void SoftMoeParams::validate() const {
  if (experts.empty()) throw ShapeError("soft moe: no experts");
  if (slots_per_expert < 1) throw ShapeError("soft moe: slots per expert must be >= 1");
  if (phi.rank() != 2 || phi.cols() != num_slots())
    throw ShapeError("soft moe: phi must be [d x experts*slots]");
  const long d = phi.rows();
  for (const ExpertMlp& e : experts) {
    if (e.w1.rows() != d || e.w2.cols() != d || e.w1.cols() != e.w2.rows() ||
        e.b1.cols() != e.w1.cols() || e.b2.cols() != d)
      throw ShapeError("soft moe: expert shapes do not conform");
  }
}

std::vector<long> allocate_slots(long experts, long slots_per_expert) {
  if (experts < 1 || slots_per_expert < 1)
    throw ShapeError("allocate_slots: arguments must be >= 1");
  std::vector<long> map(static_cast<size_t>(experts * slots_per_expert));
  for (size_t i = 0; i < map.size(); ++i)
    map[i] = static_cast<long>(i) / slots_per_expert;
  return map;
}

Tensor compute_logits(const Tensor& x, const SoftMoeParams& params) {
  if (x.rank() != 2 || x.cols() != params.width())
    throw ShapeError("compute_logits: token width does not match phi");
  check_finite(x, "compute_logits input");
  if (!params.normalize) return matmul(x, params.phi);
  const Tensor xn = l2_normalize(x, 1);
  const Tensor pn = scale(l2_normalize(params.phi, 0), params.scale.at(0));
  return matmul(xn, pn);
}

Tensor dispatch_weights(const Tensor& logits) { return softmax_over_axis(logits, 0); }

Tensor combine_weights(const Tensor& logits) { return softmax_over_axis(logits, 1); }

SoftMoeOutput soft_moe_forward(const Tensor& x, const SoftMoeParams& params) {
  Graph g;
  Graph::Id xid = g.input(x, false);
  SoftMoeGraphRefs refs = bind_soft_moe_params(g, params, "moe.");
  SoftMoeNodes nodes = soft_moe_forward_graph(g, xid, refs);
  SoftMoeOutput out;
  out.y = g.value(nodes.y);
  out.weights.dispatch = g.value(nodes.dispatch);
  out.weights.combine = g.value(nodes.combine);
  out.weights.logits = g.value(nodes.logits);
  return out;
}

SoftMoeGraphRefs bind_soft_moe_params(Graph& g, const SoftMoeParams& params,
                                      const std::string& prefix) {
  params.validate();
  SoftMoeGraphRefs refs;
  refs.slots_per_expert = params.slots_per_expert;
  refs.normalize = params.normalize;
  refs.phi = g.param(prefix + "phi", params.phi);
  refs.scale = g.param(prefix + "scale", params.scale);
  for (size_t e = 0; e < params.experts.size(); ++e) {
    const ExpertMlp& ex = params.experts[e];
    const std::string ep = prefix + "expert" + std::to_string(e) + ".";
    refs.experts.push_back({g.param(ep + "w1", ex.w1), g.param(ep + "b1", ex.b1),
                            g.param(ep + "w2", ex.w2), g.param(ep + "b2", ex.b2)});
  }
  return refs;
}

Graph::Id expert_mlp_graph(Graph& g, const ExpertMlpIds& ids, Graph::Id rows) {
  Graph::Id h = g.gelu(g.add(g.matmul(rows, ids.w1), ids.b1));
  return g.add(g.matmul(h, ids.w2), ids.b2);
}

ExpertApply default_expert_apply(const SoftMoeGraphRefs& refs) {
  return [&refs](Graph& gg, long e, Graph::Id rows) {
    return expert_mlp_graph(gg, refs.experts[static_cast<size_t>(e)], rows);
  };
}

Graph::Id routed_expert_graph(Graph& g, Graph::Id x, Graph::Id dispatch,
                              Graph::Id combine, const SoftMoeGraphRefs& refs,
                              const ExpertApply& apply) {
  const long experts = static_cast<long>(refs.experts.size());
  const long p = refs.slots_per_expert;
  Graph::Id slots = g.matmul(g.transpose(dispatch), x);
  std::vector<Graph::Id> outs;
  outs.reserve(static_cast<size_t>(experts));
  for (long e = 0; e < experts; ++e) {
    std::vector<long> idx(static_cast<size_t>(p));
    for (long s = 0; s < p; ++s) idx[static_cast<size_t>(s)] = e * p + s;
    Graph::Id rows = g.gather_rows(slots, std::move(idx));
    outs.push_back(apply(g, e, rows));
  }
  Graph::Id slots_out = experts == 1 ? outs[0] : g.concat_rows(outs);
  return g.matmul(combine, slots_out);
}

SoftMoeNodes soft_moe_forward_graph(Graph& g, Graph::Id x,
                                    const SoftMoeGraphRefs& refs) {
  return soft_moe_forward_graph(g, x, refs, default_expert_apply(refs));
}

SoftMoeNodes soft_moe_forward_graph(Graph& g, Graph::Id x,
                                    const SoftMoeGraphRefs& refs,
                                    const ExpertApply& apply) {
  SoftMoeNodes nodes;
  if (refs.normalize) {
    Graph::Id xn = g.l2_normalize(x, 1);
    Graph::Id pn = g.mul(g.l2_normalize(refs.phi, 0), refs.scale);
    nodes.logits = g.matmul(xn, pn);
  } else {
    nodes.logits = g.matmul(x, refs.phi);
  }
  nodes.dispatch = g.softmax(nodes.logits, 0);
  nodes.combine = g.softmax(nodes.logits, 1);
  nodes.y = routed_expert_graph(g, x, nodes.dispatch, nodes.combine, refs, apply);
  return nodes;
}

}  // namespace softmoe
