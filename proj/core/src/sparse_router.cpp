#include "softmoe/sparse_router.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <thread>

namespace softmoe {

RouterScores scores_from_logits(const Tensor& logits) {
  return RouterScores{softmax_over_axis(logits, 1)};
}

RouterScores random_scores(Rng& rng, long tokens, long experts) {
  return scores_from_logits(normal_tensor(rng, {tokens, experts}));
}

std::vector<long> SparseAssignment::per_expert_load() const {
  std::vector<long> load(buffers.size(), 0);
  for (size_t e = 0; e < buffers.size(); ++e)
    load[e] = static_cast<long>(buffers[e].size());
  return load;
}

std::vector<long> SparseAssignment::selection_counts() const {
  std::vector<long> counts(static_cast<size_t>(group_tokens), 0);
  for (const auto& buf : buffers)
    for (const Pick& p : buf) counts[static_cast<size_t>(p.token)] += 1;
  return counts;
}

DropStats drop_stats(const SparseAssignment& a) {
  DropStats s;
  s.per_expert_load = a.per_expert_load();
  s.drop_rate = static_cast<double>(a.dropped.size()) /
                static_cast<double>(a.group_tokens);
  const auto counts = a.selection_counts();
  long multi = 0;
  for (long c : counts)
    if (c >= 2) ++multi;
  s.multi_select_rate = static_cast<double>(multi) / static_cast<double>(a.group_tokens);
  return s;
}

SparseAssignment tokens_choice_route(const RouterScores& scores, long k, double c,
                                     bool bpr) {
  const long T = scores.tokens();
  const long E = scores.experts();
  if (T < 1) throw UsageError("tokens_choice_route: empty group");
  if (k < 1 || k > E) throw UsageError("tokens_choice_route: K must be in [1, E]");
  if (c <= 0.0) throw UsageError("tokens_choice_route: capacity multiplier must be > 0");
  const Tensor& g = scores.gates;

  SparseAssignment a;
  a.group_tokens = T;
  a.top_k = k;
  a.capacity_mult = c;
  a.bpr = bpr;
  a.capacity = static_cast<long>(
      std::ceil(c * static_cast<double>(k) * static_cast<double>(T) /
                static_cast<double>(E)));
  a.buffers.resize(static_cast<size_t>(E));

  std::vector<long> order(static_cast<size_t>(T));
  std::iota(order.begin(), order.end(), 0);
  if (bpr) {
    std::vector<double> max_gate(static_cast<size_t>(T));
    for (long i = 0; i < T; ++i) {
      double m = g.at(i, 0);
      for (long e = 1; e < E; ++e) m = std::max(m, g.at(i, e));
      max_gate[static_cast<size_t>(i)] = m;
    }
    std::stable_sort(order.begin(), order.end(), [&](long x, long y) {
      return max_gate[static_cast<size_t>(x)] > max_gate[static_cast<size_t>(y)];
    });
  }

  for (long i : order) {
    std::vector<long> prefs(static_cast<size_t>(E));
    std::iota(prefs.begin(), prefs.end(), 0);
    std::stable_sort(prefs.begin(), prefs.end(),
                     [&](long x, long y) { return g.at(i, x) > g.at(i, y); });
    long got = 0;
    for (long r = 0; r < k; ++r) {
      const long e = prefs[static_cast<size_t>(r)];
      auto& buf = a.buffers[static_cast<size_t>(e)];
      if (static_cast<long>(buf.size()) < a.capacity) {
        buf.push_back({i, g.at(i, e)});
        ++got;
      }
    }
    a.successful_claims += got;
    if (got == 0) a.dropped.push_back(i);
  }
  std::sort(a.dropped.begin(), a.dropped.end());
  return a;
}

SparseAssignment experts_choice_route(const RouterScores& scores, double c) {
  const long T = scores.tokens();
  const long E = scores.experts();
  if (T < 1) throw UsageError("experts_choice_route: empty group");
  if (c <= 0.0) throw UsageError("experts_choice_route: capacity multiplier must be > 0");
  if (static_cast<double>(E) > c * static_cast<double>(T))
    throw UsageError("experts_choice_route: requires E <= c*T");
  const Tensor& g = scores.gates;

  SparseAssignment a;
  a.group_tokens = T;
  a.capacity_mult = c;
  a.capacity = std::max<long>(
      1, std::llround(c * static_cast<double>(T) / static_cast<double>(E)));
  a.buffers.resize(static_cast<size_t>(E));

  std::vector<long> order(static_cast<size_t>(T));
  for (long e = 0; e < E; ++e) {
    std::iota(order.begin(), order.end(), 0);
    const long take = std::min(a.capacity, T);
    std::partial_sort(order.begin(), order.begin() + take, order.end(),
                      [&](long x, long y) {
                        if (g.at(x, e) != g.at(y, e)) return g.at(x, e) > g.at(y, e);
                        return x < y;  // ties to the lower token index
                      });
    auto& buf = a.buffers[static_cast<size_t>(e)];
    for (long r = 0; r < take; ++r) buf.push_back({order[static_cast<size_t>(r)],
                                                   g.at(order[static_cast<size_t>(r)], e)});
    a.successful_claims += take;
  }

  const auto counts = a.selection_counts();
  for (long i = 0; i < T; ++i)
    if (counts[static_cast<size_t>(i)] == 0) a.dropped.push_back(i);
  return a;
}

Tensor sparse_forward(const Tensor& x, const SparseAssignment& a,
                      const std::vector<ExpertMlp>& experts) {
  if (static_cast<long>(experts.size()) != a.experts())
    throw ShapeError("sparse_forward: expert count mismatch");
  if (x.rows() != a.group_tokens)
    throw ShapeError("sparse_forward: assignment built for a different group");
  Tensor out({x.rows(), x.cols()});
  for (size_t e = 0; e < experts.size(); ++e) {
    const ExpertMlp& ex = experts[e];
    for (const SparseAssignment::Pick& p : a.buffers[e]) {
      Tensor xi({1, x.cols()});
      for (long j = 0; j < x.cols(); ++j) xi.at(0, j) = x.at(p.token, j);
      Tensor h = gelu(add(matmul(xi, ex.w1), ex.b1));
      Tensor y = add(matmul(h, ex.w2), ex.b2);
      for (long j = 0; j < x.cols(); ++j) out.at(p.token, j) += p.gate * y.at(0, j);
    }
  }
  return out;
}

Graph::Id sparse_forward_graph(Graph& g, Graph::Id x, Graph::Id gates,
                               const SparseAssignment& a,
                               const std::vector<ExpertMlpIds>& experts) {
  if (static_cast<long>(experts.size()) != a.experts())
    throw ShapeError("sparse_forward_graph: expert count mismatch");
  const long T = g.value(x).rows();
  if (T != a.group_tokens)
    throw ShapeError("sparse_forward_graph: assignment built for a different group");

  Graph::Id out = -1;
  for (size_t e = 0; e < experts.size(); ++e) {
    const auto& buf = a.buffers[e];
    if (buf.empty()) continue;
    std::vector<long> idx;
    idx.reserve(buf.size());
    for (const auto& p : buf) idx.push_back(p.token);
    Graph::Id rows = g.gather_rows(x, idx);
    Graph::Id y = expert_mlp_graph(g, experts[e], rows);
    // per-row gate weights, differentiable back into the router head
    Graph::Id w = g.gather_cols(g.gather_rows(gates, idx), {static_cast<long>(e)});
    Graph::Id weighted = g.mul(y, w);
    Graph::Id placed = g.scatter_rows(weighted, idx, T);
    out = out < 0 ? placed : g.add(out, placed);
  }
  if (out < 0) out = g.constant(Tensor::zeros(g.value(x).dims()));
  return out;
}

namespace {

double cv_squared_value(const std::vector<double>& xs) {
  const double k = static_cast<double>(xs.size());
  double mean = 0.0;
  for (double v : xs) mean += v;
  mean /= k;
  if (mean == 0.0) return 0.0;
  double var = 0.0;
  for (double v : xs) var += (v - mean) * (v - mean);
  var /= k;
  return var / (mean * mean);
}

}  // namespace

double load_balance_loss(const RouterScores& scores, const SparseAssignment& a) {
  const long E = scores.experts();
  std::vector<double> importance(static_cast<size_t>(E), 0.0);
  for (long i = 0; i < scores.tokens(); ++i)
    for (long e = 0; e < E; ++e) importance[static_cast<size_t>(e)] += scores.gates.at(i, e);
  std::vector<double> load;
  load.reserve(static_cast<size_t>(E));
  for (long l : a.per_expert_load()) load.push_back(static_cast<double>(l));
  return 0.5 * (cv_squared_value(importance) + cv_squared_value(load));
}

Graph::Id load_balance_loss_graph(Graph& g, Graph::Id gates,
                                  const SparseAssignment& a) {
  Graph::Id importance = g.reduce_sum(gates, 0);  // [1 x E]
  Graph::Id cv_imp = g.cv_squared(importance);
  std::vector<double> load;
  for (long l : a.per_expert_load()) load.push_back(static_cast<double>(l));
  Graph::Id cv_load = g.constant(Tensor::scalar(cv_squared_value(load)));
  return g.mul(g.add(cv_imp, cv_load), g.constant(Tensor::scalar(0.5)));
}

std::vector<SweepCell> enumerate_cells(const SweepConfig& cfg) {
  std::vector<SweepCell> cells;
  for (const std::string& router : cfg.routers) {
    for (long E : cfg.expert_counts) {
      for (double c : cfg.capacity_mults) {
        if (router == "experts_choice") {
          cells.push_back({router, E, 0, c, false, cfg.group_tokens});
        } else if (router == "tokens_choice") {
          for (long k : cfg.ks)
            for (int bpr : cfg.bprs)
              cells.push_back({router, E, k, c, bpr != 0, cfg.group_tokens});
        } else {
          throw UsageError("dropping_sweep: unknown router '" + router + "'");
        }
      }
    }
  }
  return cells;
}

std::vector<SweepRow> dropping_sweep(const SweepConfig& cfg, uint64_t seed,
                                     int parallel) {
  if (cfg.trials < 1) throw UsageError("dropping_sweep: trials must be >= 1");
  const std::vector<SweepCell> cells = enumerate_cells(cfg);
  std::vector<SweepRow> rows(cells.size());

  auto run_cell = [&](size_t ci) {
    const SweepCell& cell = cells[ci];
    SweepRow row;
    row.cell = cell;
    for (long t = 0; t < cfg.trials; ++t) {
      Rng rng = Rng::fork(seed, ci, static_cast<uint64_t>(t));
      RouterScores scores = random_scores(rng, cell.group_tokens, cell.experts);
      SparseAssignment a = cell.router == "tokens_choice"
                               ? tokens_choice_route(scores, cell.k, cell.c, cell.bpr)
                               : experts_choice_route(scores, cell.c);
      DropStats s = drop_stats(a);
      row.drop_rate += s.drop_rate;
      row.multi_select_rate += s.multi_select_rate;
      const auto [mn, mx] = std::minmax_element(s.per_expert_load.begin(),
                                                s.per_expert_load.end());
      row.max_load += static_cast<double>(*mx);
      row.min_load += static_cast<double>(*mn);
    }
    const double inv = 1.0 / static_cast<double>(cfg.trials);
    row.drop_rate *= inv;
    row.multi_select_rate *= inv;
    row.max_load *= inv;
    row.min_load *= inv;
    rows[ci] = row;
  };

  if (parallel <= 1) {
    for (size_t ci = 0; ci < cells.size(); ++ci) run_cell(ci);
  } else {
    std::atomic<size_t> next{0};
    auto worker = [&]() {
      for (size_t ci = next.fetch_add(1); ci < cells.size(); ci = next.fetch_add(1))
        run_cell(ci);
    };
    std::vector<std::thread> pool;
    const int n = std::min<int>(parallel, static_cast<int>(cells.size()));
    pool.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  return rows;
}

}  // namespace softmoe
