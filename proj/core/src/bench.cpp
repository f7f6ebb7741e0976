#include "softmoe/bench.hpp"

#include <algorithm>
#include <chrono>

#include "softmoe/soft_moe.hpp"
#include "softmoe/sparse_router.hpp"

namespace softmoe {

namespace {

double median(std::vector<double> xs) {
  std::sort(xs.begin(), xs.end());
  const size_t n = xs.size();
  return n % 2 == 1 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

template <typename Fn>
double timed_median_ms(Fn&& body, long reps, long warmup) {
  for (long r = 0; r < warmup; ++r) body();
  std::vector<double> samples;
  samples.reserve(static_cast<size_t>(reps));
  for (long r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    body();
    const auto t1 = std::chrono::steady_clock::now();
    samples.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  return median(std::move(samples));
}

}  // namespace

std::vector<BenchRow> throughput_bench(const BenchGrid& grid, uint64_t seed) {
  if (grid.reps < 1 || grid.warmup < 0)
    throw UsageError("throughput_bench: bad reps/warmup");
  std::vector<BenchRow> rows;

  for (const std::string& router : grid.routers) {
    if (router == "dense") {
      Rng rng = Rng::fork(seed, 0xdead);
      ExpertMlp mlp = init_expert(rng, grid.d, grid.d_mlp);
      const Tensor x = normal_tensor(rng, {grid.tokens, grid.d});
      auto body = [&]() {
        Graph g;
        Graph::Id xid = g.input(x, true);
        ExpertMlpIds ids{g.param("w1", mlp.w1), g.param("b1", mlp.b1),
                         g.param("w2", mlp.w2), g.param("b2", mlp.b2)};
        g.backward(g.reduce_sum_all(expert_mlp_graph(g, ids, xid)));
      };
      rows.push_back({router, 0, 0, timed_median_ms(body, grid.reps, grid.warmup),
                      grid.reps});
      continue;
    }

    for (size_t ei = 0; ei < grid.expert_counts.size(); ++ei) {
      const long experts = grid.expert_counts[ei];
      BenchRow row;
      row.router = router;
      row.experts = experts;
      row.reps = grid.reps;
      Rng rng = Rng::fork(seed, 0xbe5c, static_cast<uint64_t>(ei));
      if (router == "soft") {
        if (grid.total_slots % experts != 0 || grid.total_slots < experts)
          throw UsageError("throughput_bench: experts must divide total_slots");
        const long p = grid.total_slots / experts;
        row.slots = grid.total_slots;
        SoftMoeParams params =
            SoftMoeParams::init(rng, grid.d, grid.d_mlp, experts, p, true);
        const Tensor x = normal_tensor(rng, {grid.tokens, grid.d});
        auto body = [&]() {
          Graph g;
          Graph::Id xid = g.input(x, true);
          SoftMoeGraphRefs refs = bind_soft_moe_params(g, params, "moe.");
          SoftMoeNodes nodes = soft_moe_forward_graph(g, xid, refs);
          g.backward(g.reduce_sum_all(nodes.y));
        };
        row.median_ms = timed_median_ms(body, grid.reps, grid.warmup);
      } else if (router == "tokens_choice") {
        row.slots = grid.total_slots;
        Tensor head = glorot_init(rng, grid.d, experts);
        std::vector<ExpertMlp> mlps;
        for (long e = 0; e < experts; ++e)
          mlps.push_back(init_expert(rng, grid.d, grid.d_mlp));
        const Tensor x = normal_tensor(rng, {grid.tokens, grid.d});
        auto body = [&]() {
          Graph g;
          Graph::Id xid = g.input(x, true);
          Graph::Id head_id = g.param("router.w", head);
          std::vector<ExpertMlpIds> ids;
          for (long e = 0; e < experts; ++e) {
            const std::string pre = "expert" + std::to_string(e) + ".";
            ids.push_back({g.param(pre + "w1", mlps[static_cast<size_t>(e)].w1),
                           g.param(pre + "b1", mlps[static_cast<size_t>(e)].b1),
                           g.param(pre + "w2", mlps[static_cast<size_t>(e)].w2),
                           g.param(pre + "b2", mlps[static_cast<size_t>(e)].b2)});
          }
          Graph::Id gates = g.softmax(g.matmul(xid, head_id), 1);
          SparseAssignment a =
              tokens_choice_route(RouterScores{g.value(gates)}, 1, 1.0, false);
          Graph::Id y = sparse_forward_graph(g, xid, gates, a, ids);
          g.backward(g.reduce_sum_all(y));
        };
        row.median_ms = timed_median_ms(body, grid.reps, grid.warmup);
      } else {
        throw UsageError("throughput_bench: unknown router '" + router + "'");
      }
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

}  // namespace softmoe
