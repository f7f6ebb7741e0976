#include "softmoe/encoder.hpp"

#include <algorithm>
#include <cmath>

namespace softmoe {

RouterKind parse_router(const std::string& name) {
  if (name == "dense") return RouterKind::kDense;
  if (name == "soft") return RouterKind::kSoft;
  if (name == "tokens_choice") return RouterKind::kTokensChoice;
  if (name == "experts_choice") return RouterKind::kExpertsChoice;
  if (name == "variant") return RouterKind::kVariant;
  throw UsageError("unknown router '" + name + "'");
}

std::string router_name(RouterKind kind) {
  switch (kind) {
    case RouterKind::kDense: return "dense";
    case RouterKind::kSoft: return "soft";
    case RouterKind::kTokensChoice: return "tokens_choice";
    case RouterKind::kExpertsChoice: return "experts_choice";
    case RouterKind::kVariant: return "variant";
  }
  throw UsageError("unreachable router kind");
}

bool EncoderConfig::is_moe_layer(long block) const {
  return std::find(moe.layers.begin(), moe.layers.end(), block) != moe.layers.end();
}

void EncoderConfig::validate() const {
  if (image_size < 1 || patch < 1 || image_size % patch != 0)
    throw UsageError("encoder config: patch must divide image_size");
  if (depth < 1) throw UsageError("encoder config: depth must be >= 1");
  if (d < 1 || heads < 1 || d % heads != 0)
    throw UsageError("encoder config: heads must divide width d");
  if (d_mlp < 1 || classes < 2) throw UsageError("encoder config: bad d_mlp/classes");
  for (long l : moe.layers)
    if (l < 0 || l >= depth)
      throw UsageError("encoder config: moe layer index " + std::to_string(l) +
                       " out of range for depth " + std::to_string(depth));
  if (moe.experts < 1 || moe.slots_per_expert < 1)
    throw UsageError("encoder config: experts and slots per expert must be >= 1");
  if (!moe.layers.empty()) {
    if (moe.router == RouterKind::kTokensChoice &&
        (moe.top_k < 1 || moe.top_k > moe.experts))
      throw UsageError("encoder config: K must be in [1, experts]");
    if (moe.capacity <= 0.0) throw UsageError("encoder config: capacity must be > 0");
    if (moe.group_size < 1) throw UsageError("encoder config: group_size must be >= 1");
    if (moe.router == RouterKind::kVariant &&
        moe.variant == VariantKind::kIdentity &&
        tokens() != moe.experts * moe.slots_per_expert)
      throw UsageError("encoder config: identity routing requires tokens == slots");
  }
}

Tensor patchify(const Tensor& image, long patch) {
  if (image.rank() != 2 && image.rank() != 3)
    throw ShapeError("patchify expects [H x W] or [H x W x C]");
  const long h = image.dim(0);
  const long w = image.dim(1);
  const long c = image.rank() == 3 ? image.dim(2) : 1;
  if (patch < 1 || h % patch != 0 || w % patch != 0)
    throw ShapeError("patchify: patch must divide both image dims");
  const long side_h = h / patch, side_w = w / patch;
  Tensor out({side_h * side_w, patch * patch * c});
  const double* src = image.data();
  for (long ph = 0; ph < side_h; ++ph)
    for (long pw = 0; pw < side_w; ++pw) {
      const long tok = ph * side_w + pw;
      long k = 0;
      for (long i = 0; i < patch; ++i)
        for (long j = 0; j < patch; ++j)
          for (long ch = 0; ch < c; ++ch)
            out.at(tok, k++) = src[((ph * patch + i) * w + (pw * patch + j)) * c + ch];
    }
  return out;
}

Tensor unpatchify(const Tensor& tokens, long image_size, long patch, long channels) {
  const long side = image_size / patch;
  if (tokens.rank() != 2 || tokens.rows() != side * side ||
      tokens.cols() != patch * patch * channels)
    throw ShapeError("unpatchify: token matrix does not match image spec");
  Tensor img(channels == 1 ? std::vector<long>{image_size, image_size}
                           : std::vector<long>{image_size, image_size, channels});
  double* dst = img.data();
  for (long ph = 0; ph < side; ++ph)
    for (long pw = 0; pw < side; ++pw) {
      const long tok = ph * side + pw;
      long k = 0;
      for (long i = 0; i < patch; ++i)
        for (long j = 0; j < patch; ++j)
          for (long ch = 0; ch < channels; ++ch)
            dst[((ph * patch + i) * image_size + (pw * patch + j)) * channels + ch] =
                tokens.at(tok, k++);
    }
  return img;
}

// ---------------------------------------------------------------------------
// Construction
// ---------------------------------------------------------------------------

Encoder::Encoder(EncoderConfig cfg, Rng& rng) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const long d = cfg_.d;
  embed_w_ = glorot_init(rng, cfg_.patch_dim(), d);
  embed_b_ = Tensor::zeros({1, d});
  posemb_ = normal_tensor(rng, {cfg_.tokens(), d}, 0.02);

  blocks_.resize(static_cast<size_t>(cfg_.depth));
  for (long b = 0; b < cfg_.depth; ++b) {
    BlockParams& blk = blocks_[static_cast<size_t>(b)];
    blk.ln1 = {Tensor::full({1, d}, 1.0), Tensor::zeros({1, d})};
    blk.attn.wq = glorot_init(rng, d, d);
    blk.attn.bq = Tensor::zeros({1, d});
    blk.attn.wk = glorot_init(rng, d, d);
    blk.attn.bk = Tensor::zeros({1, d});
    blk.attn.wv = glorot_init(rng, d, d);
    blk.attn.bv = Tensor::zeros({1, d});
    blk.attn.wo = glorot_init(rng, d, d);
    blk.attn.bo = Tensor::zeros({1, d});
    blk.ln2 = {Tensor::full({1, d}, 1.0), Tensor::zeros({1, d})};

    blk.is_moe = cfg_.is_moe_layer(b);
    if (!blk.is_moe) {
      blk.mlp = init_expert(rng, d, cfg_.d_mlp);
      continue;
    }
    switch (cfg_.moe.router) {
      case RouterKind::kDense:
        blk.is_moe = false;
        blk.mlp = init_expert(rng, d, cfg_.d_mlp);
        break;
      case RouterKind::kSoft:
      case RouterKind::kVariant:
        blk.soft = SoftMoeParams::init(rng, d, cfg_.d_mlp, cfg_.moe.experts,
                                       cfg_.moe.slots_per_expert, cfg_.moe.normalize);
        break;
      case RouterKind::kTokensChoice:
      case RouterKind::kExpertsChoice:
        blk.router_head = glorot_init(rng, d, cfg_.moe.experts);
        blk.sparse_experts.reserve(static_cast<size_t>(cfg_.moe.experts));
        for (long e = 0; e < cfg_.moe.experts; ++e)
          blk.sparse_experts.push_back(init_expert(rng, d, cfg_.d_mlp));
        break;
    }
  }
  final_ln_ = {Tensor::full({1, d}, 1.0), Tensor::zeros({1, d})};
  head_w_ = glorot_init(rng, d, cfg_.classes);
  head_b_ = Tensor::zeros({1, cfg_.classes});
}

// ---------------------------------------------------------------------------
// Parameter registry
// ---------------------------------------------------------------------------

std::vector<std::pair<std::string, Tensor*>> Encoder::param_refs() {
  std::vector<std::pair<std::string, Tensor*>> out;
  out.emplace_back("embed.w", &embed_w_);
  out.emplace_back("embed.b", &embed_b_);
  out.emplace_back("posemb", &posemb_);
  for (size_t b = 0; b < blocks_.size(); ++b) {
    auto& blk = blocks_[b];
    const std::string pre = "block" + std::to_string(b) + ".";
    out.emplace_back(pre + "ln1.g", &blk.ln1.gain);
    out.emplace_back(pre + "ln1.b", &blk.ln1.bias);
    out.emplace_back(pre + "attn.wq", &blk.attn.wq);
    out.emplace_back(pre + "attn.bq", &blk.attn.bq);
    out.emplace_back(pre + "attn.wk", &blk.attn.wk);
    out.emplace_back(pre + "attn.bk", &blk.attn.bk);
    out.emplace_back(pre + "attn.wv", &blk.attn.wv);
    out.emplace_back(pre + "attn.bv", &blk.attn.bv);
    out.emplace_back(pre + "attn.wo", &blk.attn.wo);
    out.emplace_back(pre + "attn.bo", &blk.attn.bo);
    out.emplace_back(pre + "ln2.g", &blk.ln2.gain);
    out.emplace_back(pre + "ln2.b", &blk.ln2.bias);
    if (!blk.is_moe) {
      out.emplace_back(pre + "mlp.w1", &blk.mlp.w1);
      out.emplace_back(pre + "mlp.b1", &blk.mlp.b1);
      out.emplace_back(pre + "mlp.w2", &blk.mlp.w2);
      out.emplace_back(pre + "mlp.b2", &blk.mlp.b2);
    } else if (!blk.sparse_experts.empty()) {
      out.emplace_back(pre + "moe.router.w", &blk.router_head);
      for (size_t e = 0; e < blk.sparse_experts.size(); ++e) {
        auto& ex = blk.sparse_experts[e];
        const std::string ep = pre + "moe.expert" + std::to_string(e) + ".";
        out.emplace_back(ep + "w1", &ex.w1);
        out.emplace_back(ep + "b1", &ex.b1);
        out.emplace_back(ep + "w2", &ex.w2);
        out.emplace_back(ep + "b2", &ex.b2);
      }
    } else {
      out.emplace_back(pre + "moe.phi", &blk.soft.phi);
      out.emplace_back(pre + "moe.scale", &blk.soft.scale);
      for (size_t e = 0; e < blk.soft.experts.size(); ++e) {
        auto& ex = blk.soft.experts[e];
        const std::string ep = pre + "moe.expert" + std::to_string(e) + ".";
        out.emplace_back(ep + "w1", &ex.w1);
        out.emplace_back(ep + "b1", &ex.b1);
        out.emplace_back(ep + "w2", &ex.w2);
        out.emplace_back(ep + "b2", &ex.b2);
      }
    }
  }
  out.emplace_back("final_ln.g", &final_ln_.gain);
  out.emplace_back("final_ln.b", &final_ln_.bias);
  out.emplace_back("head.w", &head_w_);
  out.emplace_back("head.b", &head_b_);
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> Encoder::param_refs() const {
  auto mut = const_cast<Encoder*>(this)->param_refs();
  return {mut.begin(), mut.end()};
}

long Encoder::param_count() const {
  long n = 0;
  for (const auto& [name, t] : param_refs()) n += t->numel();
  return n;
}

long Encoder::ffn_param_count(long block) const {
  const BlockParams& blk = blocks_[static_cast<size_t>(block)];
  auto mlp_count = [](const ExpertMlp& e) {
    return e.w1.numel() + e.b1.numel() + e.w2.numel() + e.b2.numel();
  };
  if (!blk.is_moe) return mlp_count(blk.mlp);
  long n = 0;
  if (!blk.sparse_experts.empty()) {
    n += blk.router_head.numel();
    for (const auto& e : blk.sparse_experts) n += mlp_count(e);
  } else {
    n += blk.soft.phi.numel() + blk.soft.scale.numel();
    for (const auto& e : blk.soft.experts) n += mlp_count(e);
  }
  return n;
}

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

struct Encoder::Bound {
  Graph::Id embed_w, embed_b, posemb;
  struct Block {
    Graph::Id ln1_g, ln1_b, ln2_g, ln2_b;
    Graph::Id wq, bq, wk, bk, wv, bv, wo, bo;
    ExpertMlpIds mlp{};
    SoftMoeGraphRefs soft;
    Graph::Id router = -1;
    std::vector<ExpertMlpIds> sparse_experts;
  };
  std::vector<Block> blocks;
  Graph::Id final_g, final_b, head_w, head_b;
};

Encoder::Bound Encoder::bind(Graph& g) const {
  Bound ids;
  ids.embed_w = g.param("embed.w", embed_w_);
  ids.embed_b = g.param("embed.b", embed_b_);
  ids.posemb = g.param("posemb", posemb_);
  ids.blocks.resize(blocks_.size());
  for (size_t b = 0; b < blocks_.size(); ++b) {
    const BlockParams& blk = blocks_[b];
    Bound::Block& out = ids.blocks[b];
    const std::string pre = "block" + std::to_string(b) + ".";
    out.ln1_g = g.param(pre + "ln1.g", blk.ln1.gain);
    out.ln1_b = g.param(pre + "ln1.b", blk.ln1.bias);
    out.wq = g.param(pre + "attn.wq", blk.attn.wq);
    out.bq = g.param(pre + "attn.bq", blk.attn.bq);
    out.wk = g.param(pre + "attn.wk", blk.attn.wk);
    out.bk = g.param(pre + "attn.bk", blk.attn.bk);
    out.wv = g.param(pre + "attn.wv", blk.attn.wv);
    out.bv = g.param(pre + "attn.bv", blk.attn.bv);
    out.wo = g.param(pre + "attn.wo", blk.attn.wo);
    out.bo = g.param(pre + "attn.bo", blk.attn.bo);
    out.ln2_g = g.param(pre + "ln2.g", blk.ln2.gain);
    out.ln2_b = g.param(pre + "ln2.b", blk.ln2.bias);
    if (!blk.is_moe) {
      out.mlp = {g.param(pre + "mlp.w1", blk.mlp.w1), g.param(pre + "mlp.b1", blk.mlp.b1),
                 g.param(pre + "mlp.w2", blk.mlp.w2), g.param(pre + "mlp.b2", blk.mlp.b2)};
    } else if (!blk.sparse_experts.empty()) {
      out.router = g.param(pre + "moe.router.w", blk.router_head);
      for (size_t e = 0; e < blk.sparse_experts.size(); ++e) {
        const auto& ex = blk.sparse_experts[e];
        const std::string ep = pre + "moe.expert" + std::to_string(e) + ".";
        out.sparse_experts.push_back(
            {g.param(ep + "w1", ex.w1), g.param(ep + "b1", ex.b1),
             g.param(ep + "w2", ex.w2), g.param(ep + "b2", ex.b2)});
      }
    } else {
      out.soft = bind_soft_moe_params(g, blk.soft, pre + "moe.");
    }
  }
  ids.final_g = g.param("final_ln.g", final_ln_.gain);
  ids.final_b = g.param("final_ln.b", final_ln_.bias);
  ids.head_w = g.param("head.w", head_w_);
  ids.head_b = g.param("head.b", head_b_);
  return ids;
}

namespace {

Graph::Id attention_graph(Graph& g, Graph::Id x, const Encoder::Bound::Block& blk,
                          long heads) {
  const long d = g.value(x).cols();
  const long dh = d / heads;
  Graph::Id q = g.add(g.matmul(x, blk.wq), blk.bq);
  Graph::Id k = g.add(g.matmul(x, blk.wk), blk.bk);
  Graph::Id v = g.add(g.matmul(x, blk.wv), blk.bv);
  Graph::Id inv_sqrt = g.constant(Tensor::scalar(1.0 / std::sqrt(static_cast<double>(dh))));
  std::vector<Graph::Id> ctx;
  ctx.reserve(static_cast<size_t>(heads));
  for (long h = 0; h < heads; ++h) {
    std::vector<long> cols(static_cast<size_t>(dh));
    for (long j = 0; j < dh; ++j) cols[static_cast<size_t>(j)] = h * dh + j;
    Graph::Id qh = g.gather_cols(q, cols);
    Graph::Id kh = g.gather_cols(k, cols);
    Graph::Id vh = g.gather_cols(v, cols);
    Graph::Id scores = g.mul(g.matmul(qh, g.transpose(kh)), inv_sqrt);
    Graph::Id attn = g.softmax(scores, 1);
    ctx.push_back(g.matmul(attn, vh));
  }
  Graph::Id merged = heads == 1 ? ctx[0] : g.concat_cols(ctx);
  return g.add(g.matmul(merged, blk.wo), blk.bo);
}

double max_row_spread(const Tensor& t) {
  double spread = 0.0;
  for (long j = 0; j < t.cols(); ++j) {
    double lo = t.at(0, j), hi = t.at(0, j);
    for (long i = 1; i < t.rows(); ++i) {
      lo = std::min(lo, t.at(i, j));
      hi = std::max(hi, t.at(i, j));
    }
    spread = std::max(spread, hi - lo);
  }
  return spread;
}

}  // namespace

Encoder::ForwardResult Encoder::forward(Graph& g, const std::vector<Tensor>& images,
                                        ForwardOptions opts) const {
  if (images.empty()) throw UsageError("encoder forward: empty batch");
  const long batch = static_cast<long>(images.size());
  const long m = cfg_.tokens();
  Bound ids = bind(g);

  std::vector<Graph::Id> x(images.size());
  for (size_t i = 0; i < images.size(); ++i) {
    Tensor tokens = patchify(images[i], cfg_.patch);
    if (tokens.rows() != m || tokens.cols() != cfg_.patch_dim())
      throw ShapeError("encoder forward: image does not match config");
    Graph::Id t = g.input(std::move(tokens), false);
    x[i] = g.add(g.add(g.matmul(t, ids.embed_w), ids.embed_b), ids.posemb);
  }

  ForwardResult result;
  for (long b = 0; b < cfg_.depth; ++b) {
    const Bound::Block& blk = ids.blocks[static_cast<size_t>(b)];
    const BlockParams& bp = blocks_[static_cast<size_t>(b)];
    // attention sublayer
    for (size_t i = 0; i < x.size(); ++i) {
      Graph::Id h = g.layer_norm(x[i], blk.ln1_g, blk.ln1_b);
      x[i] = g.add(x[i], attention_graph(g, h, blk, cfg_.heads));
    }
    // feed-forward / MoE sublayer
    if (!bp.is_moe) {
      for (size_t i = 0; i < x.size(); ++i) {
        Graph::Id h = g.layer_norm(x[i], blk.ln2_g, blk.ln2_b);
        x[i] = g.add(x[i], expert_mlp_graph(g, blk.mlp, h));
      }
      continue;
    }

    LayerDiag diag;
    diag.block = b;
    if (!bp.sparse_experts.empty()) {
      // sparse router over groups of consecutive sequences
      double drop_sum = 0.0;
      long group_count = 0;
      for (long g0 = 0; g0 < batch; g0 += cfg_.moe.group_size) {
        const long gend = std::min(batch, g0 + cfg_.moe.group_size);
        std::vector<Graph::Id> hs;
        for (long i = g0; i < gend; ++i)
          hs.push_back(g.layer_norm(x[static_cast<size_t>(i)], blk.ln2_g, blk.ln2_b));
        Graph::Id hg = hs.size() == 1 ? hs[0] : g.concat_rows(hs);
        Graph::Id gates = g.softmax(g.matmul(hg, blk.router), 1);
        RouterScores scores{g.value(gates)};
        SparseAssignment assignment =
            cfg_.moe.router == RouterKind::kTokensChoice
                ? tokens_choice_route(scores, cfg_.moe.top_k, cfg_.moe.capacity,
                                      cfg_.moe.bpr)
                : experts_choice_route(scores, cfg_.moe.capacity);
        Graph::Id y = sparse_forward_graph(g, hg, gates, assignment, blk.sparse_experts);
        if (cfg_.moe.router == RouterKind::kTokensChoice)
          result.aux_losses.push_back(load_balance_loss_graph(g, gates, assignment));
        drop_sum += drop_stats(assignment).drop_rate;
        ++group_count;
        for (long i = g0; i < gend; ++i) {
          std::vector<long> rows(static_cast<size_t>(m));
          for (long r = 0; r < m; ++r) rows[static_cast<size_t>(r)] = (i - g0) * m + r;
          Graph::Id yi = gend - g0 == 1 ? y : g.gather_rows(y, rows);
          x[static_cast<size_t>(i)] = g.add(x[static_cast<size_t>(i)], yi);
        }
      }
      diag.drop_rate = drop_sum / static_cast<double>(group_count);
    } else {
      for (size_t i = 0; i < x.size(); ++i) {
        Graph::Id h = g.layer_norm(x[i], blk.ln2_g, blk.ln2_b);
        SoftMoeNodes nodes =
            cfg_.moe.router == RouterKind::kSoft
                ? soft_moe_forward_graph(g, h, blk.soft)
                : variant_forward_graph(g, h, blk.soft, cfg_.moe.variant);
        diag.pre_residual_row_spread =
            std::max(diag.pre_residual_row_spread, max_row_spread(g.value(nodes.y)));
        if (opts.capture_routing)
          diag.routing.push_back({g.value(nodes.dispatch), g.value(nodes.combine),
                                  g.value(nodes.logits)});
        x[i] = g.add(x[i], nodes.y);
      }
    }
    result.moe_diags.push_back(std::move(diag));
  }

  std::vector<Graph::Id> logits_rows;
  logits_rows.reserve(x.size());
  result.encoded.reserve(x.size());
  for (size_t i = 0; i < x.size(); ++i) {
    Graph::Id h = g.layer_norm(x[i], ids.final_g, ids.final_b);
    result.encoded.push_back(h);
    Graph::Id pooled = g.reduce_mean(h, 0);  // global average pool -> [1 x d]
    logits_rows.push_back(g.add(g.matmul(pooled, ids.head_w), ids.head_b));
  }
  result.class_logits =
      logits_rows.size() == 1 ? logits_rows[0] : g.concat_rows(logits_rows);

  if (!result.moe_diags.empty()) {
    double s = 0.0;
    for (const auto& dgi : result.moe_diags) s += dgi.drop_rate;
    result.drop_rate = s / static_cast<double>(result.moe_diags.size());
  }
  if (!result.aux_losses.empty()) {
    double s = 0.0;
    for (Graph::Id a : result.aux_losses) s += g.value(a).at(0);
    result.aux_loss = s / static_cast<double>(result.aux_losses.size());
  }
  return result;
}

Tensor Encoder::encode(const Tensor& image) const {
  Graph g;
  ForwardResult r = forward(g, {image});
  return g.value(r.encoded[0]);
}

}  // namespace softmoe
