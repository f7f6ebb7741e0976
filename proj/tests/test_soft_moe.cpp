#include <doctest.h>

#include <cmath>

#include "softmoe/gradcheck.hpp"
#include "softmoe/soft_moe.hpp"

using namespace softmoe;

namespace {

// Straight-line reference for the whole layer: explicit loops only, its own
// softmax/normalize/GELU arithmetic, no shared code with the implementation.
Tensor soft_moe_oracle(const Tensor& x, const SoftMoeParams& p) {
  const long m = x.rows(), d = x.cols();
  const long n = p.num_experts(), slots = p.num_slots(), sp = p.slots_per_expert;
  const long dm = p.experts[0].w1.cols();

  // logits
  std::vector<std::vector<double>> logits(m, std::vector<double>(slots, 0.0));
  if (p.normalize) {
    std::vector<std::vector<double>> xn(m, std::vector<double>(d));
    for (long i = 0; i < m; ++i) {
      double nrm = 0.0;
      for (long j = 0; j < d; ++j) nrm += x.at(i, j) * x.at(i, j);
      nrm = std::sqrt(nrm) + 1e-6;
      for (long j = 0; j < d; ++j) xn[i][j] = x.at(i, j) / nrm;
    }
    std::vector<std::vector<double>> pn(d, std::vector<double>(slots));
    for (long s = 0; s < slots; ++s) {
      double nrm = 0.0;
      for (long j = 0; j < d; ++j) nrm += p.phi.at(j, s) * p.phi.at(j, s);
      nrm = std::sqrt(nrm) + 1e-6;
      for (long j = 0; j < d; ++j)
        pn[j][s] = p.phi.at(j, s) / nrm * p.scale.at(0);
    }
    for (long i = 0; i < m; ++i)
      for (long s = 0; s < slots; ++s)
        for (long j = 0; j < d; ++j) logits[i][s] += xn[i][j] * pn[j][s];
  } else {
    for (long i = 0; i < m; ++i)
      for (long s = 0; s < slots; ++s)
        for (long j = 0; j < d; ++j) logits[i][s] += x.at(i, j) * p.phi.at(j, s);
  }

  // dispatch: softmax over tokens per slot
  std::vector<std::vector<double>> D(m, std::vector<double>(slots));
  for (long s = 0; s < slots; ++s) {
    double mx = logits[0][s];
    for (long i = 1; i < m; ++i) mx = std::max(mx, logits[i][s]);
    double sum = 0.0;
    for (long i = 0; i < m; ++i) {
      D[i][s] = std::exp(logits[i][s] - mx);
      sum += D[i][s];
    }
    for (long i = 0; i < m; ++i) D[i][s] /= sum;
  }
  // combine: softmax over slots per token
  std::vector<std::vector<double>> C(m, std::vector<double>(slots));
  for (long i = 0; i < m; ++i) {
    double mx = logits[i][0];
    for (long s = 1; s < slots; ++s) mx = std::max(mx, logits[i][s]);
    double sum = 0.0;
    for (long s = 0; s < slots; ++s) {
      C[i][s] = std::exp(logits[i][s] - mx);
      sum += C[i][s];
    }
    for (long s = 0; s < slots; ++s) C[i][s] /= sum;
  }

  // slot inputs
  std::vector<std::vector<double>> xs(slots, std::vector<double>(d, 0.0));
  for (long s = 0; s < slots; ++s)
    for (long i = 0; i < m; ++i)
      for (long j = 0; j < d; ++j) xs[s][j] += D[i][s] * x.at(i, j);

  // expert MLP per slot (tanh GELU)
  auto gelu_ref = [](double v) {
    return 0.5 * v *
           (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (v + 0.044715 * v * v * v)));
  };
  std::vector<std::vector<double>> ys(slots, std::vector<double>(d, 0.0));
  for (long s = 0; s < slots; ++s) {
    const ExpertMlp& ex = p.experts[static_cast<size_t>(s / sp)];
    std::vector<double> h(dm, 0.0);
    for (long k = 0; k < dm; ++k) {
      double acc = ex.b1.at(0, k);
      for (long j = 0; j < d; ++j) acc += xs[s][j] * ex.w1.at(j, k);
      h[static_cast<size_t>(k)] = gelu_ref(acc);
    }
    for (long j = 0; j < d; ++j) {
      double acc = ex.b2.at(0, j);
      for (long k = 0; k < dm; ++k) acc += h[static_cast<size_t>(k)] * ex.w2.at(k, j);
      ys[s][j] = acc;
    }
  }
  (void)n;

  // combine
  Tensor y({m, d});
  for (long i = 0; i < m; ++i)
    for (long j = 0; j < d; ++j) {
      double acc = 0.0;
      for (long s = 0; s < slots; ++s) acc += C[i][s] * ys[s][j];
      y.at(i, j) = acc;
    }
  return y;
}

const ExpertApply kIdentityExperts = [](Graph&, long, Graph::Id rows) {
  return rows;
};

SoftMoeParams tiny_params(Rng& rng, long d, long d_mlp, long n, long p,
                          bool normalize) {
  return SoftMoeParams::init(rng, d, d_mlp, n, p, normalize);
}

}  // namespace

TEST_CASE("compute_logits examples") {
  SoftMoeParams p;
  p.phi = Tensor::matrix({{2.0}, {0.0}});
  p.normalize = false;
  p.slots_per_expert = 1;
  Rng rng(0);
  p.experts.push_back(init_expert(rng, 2, 3));
  Tensor x = Tensor::matrix({{1.0, 0.0}});
  CHECK(compute_logits(x, p).at(0, 0) == doctest::Approx(2.0).epsilon(1e-12));

  SoftMoeParams q;
  q.phi = Tensor::matrix({{1.0}, {0.0}});
  q.normalize = true;
  q.scale = Tensor::scalar(1.0);
  q.slots_per_expert = 1;
  q.experts.push_back(init_expert(rng, 2, 3));
  Tensor x2 = Tensor::matrix({{3.0, 4.0}});
  CHECK(compute_logits(x2, q).at(0, 0) == doctest::Approx(0.6).epsilon(1e-5));
}

TEST_CASE("compute_logits matches loop oracle") {
  Rng rng(21);
  for (bool normalize : {false, true}) {
    SoftMoeParams p = tiny_params(rng, 3, 4, 6, 1, normalize);
    Tensor x = normal_tensor(rng, {4, 3});
    Tensor logits = compute_logits(x, p);
    // reuse the full-layer oracle's logits through dispatch: check via direct loops
    Tensor expect({4, 6});
    if (!normalize) {
      for (long i = 0; i < 4; ++i)
        for (long s = 0; s < 6; ++s) {
          double acc = 0.0;
          for (long j = 0; j < 3; ++j) acc += x.at(i, j) * p.phi.at(j, s);
          expect.at(i, s) = acc;
        }
      for (long i = 0; i < expect.numel(); ++i)
        CHECK(std::abs(logits.at(i) - expect.at(i)) < 1e-12);
    }
  }
}

TEST_CASE("dispatch and combine weight examples") {
  Tensor col({3, 1}, {0.0, 0.0, std::log(2.0)});
  Tensor d = dispatch_weights(col);
  CHECK(d.at(0, 0) == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(d.at(1, 0) == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(d.at(2, 0) == doctest::Approx(0.5).epsilon(1e-12));

  Tensor zeros4 = Tensor::zeros({4, 3});
  Tensor d4 = dispatch_weights(zeros4);
  for (long i = 0; i < d4.numel(); ++i) CHECK(d4.at(i) == doctest::Approx(0.25));

  Tensor single = dispatch_weights(Tensor::matrix({{1.23, -9.0, 4.0}}));
  for (long j = 0; j < 3; ++j) CHECK(single.at(0, j) == 1.0);  // m = 1

  Tensor row = Tensor::row({0.0, std::log(3.0)});
  Tensor c = combine_weights(row);
  CHECK(c.at(0, 0) == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(c.at(0, 1) == doctest::Approx(0.75).epsilon(1e-12));

  Tensor c8 = combine_weights(Tensor::zeros({2, 8}));
  for (long i = 0; i < c8.numel(); ++i) CHECK(c8.at(i) == doctest::Approx(0.125));

  Tensor c1 = combine_weights(Tensor::matrix({{0.7}, {-2.0}}));
  CHECK(c1.at(0, 0) == 1.0);
  CHECK(c1.at(1, 0) == 1.0);  // n*p = 1
}

TEST_CASE("allocate_slots blocked map") {
  CHECK(allocate_slots(3, 1) == std::vector<long>{0, 1, 2});
  CHECK(allocate_slots(2, 2) == std::vector<long>{0, 0, 1, 1});
  CHECK(allocate_slots(1, 4) == std::vector<long>{0, 0, 0, 0});
}

TEST_CASE("forward with zero phi and identity experts averages tokens") {
  Rng rng(5);
  SoftMoeParams p = tiny_params(rng, 1, 2, 2, 1, false);
  for (long i = 0; i < p.phi.numel(); ++i) p.phi.at(i) = 0.0;

  Graph g;
  Graph::Id x = g.input(Tensor::matrix({{1.0}, {3.0}}), false);
  SoftMoeGraphRefs refs = bind_soft_moe_params(g, p, "moe.");
  SoftMoeNodes nodes = soft_moe_forward_graph(g, x, refs, kIdentityExperts);
  const Tensor& y = g.value(nodes.y);
  CHECK(y.at(0, 0) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(y.at(1, 0) == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("forward with one token and identity experts is the identity") {
  Rng rng(6);
  SoftMoeParams p = tiny_params(rng, 3, 4, 2, 2, true);
  Tensor x = normal_tensor(rng, {1, 3});
  Graph g;
  Graph::Id xid = g.input(x, false);
  SoftMoeGraphRefs refs = bind_soft_moe_params(g, p, "moe.");
  SoftMoeNodes nodes = soft_moe_forward_graph(g, xid, refs, kIdentityExperts);
  const Tensor& y = g.value(nodes.y);
  for (long j = 0; j < 3; ++j)
    CHECK(y.at(0, j) == doctest::Approx(x.at(0, j)).epsilon(1e-12));
}

TEST_CASE("forward matches independent loop oracle") {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(300 + seed);
    const bool normalize = seed % 2 == 0;
    SoftMoeParams p = tiny_params(rng, 3, 5, 2, 2, normalize);
    Tensor x = normal_tensor(rng, {4, 3});
    SoftMoeOutput out = soft_moe_forward(x, p);
    Tensor ref = soft_moe_oracle(x, p);
    for (long i = 0; i < ref.numel(); ++i)
      CHECK(std::abs(out.y.at(i) - ref.at(i)) < 1e-10);
  }
}

TEST_CASE("routing weights are stochastic in the required orientations") {
  for (uint64_t seed = 0; seed < 200; ++seed) {
    Rng rng(seed);
    const long m = 1 + static_cast<long>(rng.next_u64() % 6);
    const long d = 2 + static_cast<long>(rng.next_u64() % 5);
    const long n = 1 + static_cast<long>(rng.next_u64() % 4);
    const long sp = 1 + static_cast<long>(rng.next_u64() % 3);
    SoftMoeParams p = tiny_params(rng, d, 4, n, sp, seed % 2 == 0);
    Tensor x = normal_tensor(rng, {m, d});
    SoftMoeOutput out = soft_moe_forward(x, p);
    for (long s = 0; s < p.num_slots(); ++s) {
      double col = 0.0;
      for (long i = 0; i < m; ++i) col += out.weights.dispatch.at(i, s);
      CHECK(std::abs(col - 1.0) < 1e-9);
    }
    for (long i = 0; i < m; ++i) {
      double row = 0.0;
      for (long s = 0; s < p.num_slots(); ++s) row += out.weights.combine.at(i, s);
      CHECK(std::abs(row - 1.0) < 1e-9);
      // no dropping: every token contributes somewhere
      double contrib = 0.0;
      for (long s = 0; s < p.num_slots(); ++s) contrib += out.weights.dispatch.at(i, s);
      CHECK(contrib > 0.0);
    }
  }
}

TEST_CASE("expert permutation with matching phi blocks is unobservable") {
  Rng rng(77);
  const long n = 4, sp = 2, d = 3;
  SoftMoeParams p = tiny_params(rng, d, 5, n, sp, true);
  Tensor x = normal_tensor(rng, {5, d});

  std::vector<long> perm = {2, 0, 3, 1};
  SoftMoeParams q = p;
  for (long e = 0; e < n; ++e) {
    q.experts[static_cast<size_t>(e)] = p.experts[static_cast<size_t>(perm[e])];
    for (long s = 0; s < sp; ++s)
      for (long j = 0; j < d; ++j)
        q.phi.at(j, e * sp + s) = p.phi.at(j, perm[static_cast<size_t>(e)] * sp + s);
  }
  Tensor ya = soft_moe_forward(x, p).y;
  Tensor yb = soft_moe_forward(x, q).y;
  for (long i = 0; i < ya.numel(); ++i) CHECK(std::abs(ya.at(i) - yb.at(i)) < 1e-12);
}

TEST_CASE("token permutation permutes output rows identically") {
  Rng rng(78);
  SoftMoeParams p = tiny_params(rng, 3, 4, 3, 1, true);
  Tensor x = normal_tensor(rng, {4, 3});
  std::vector<long> perm = {3, 1, 0, 2};
  Tensor xp({4, 3});
  for (long i = 0; i < 4; ++i)
    for (long j = 0; j < 3; ++j) xp.at(i, j) = x.at(perm[static_cast<size_t>(i)], j);
  Tensor y = soft_moe_forward(x, p).y;
  Tensor yp = soft_moe_forward(xp, p).y;
  for (long i = 0; i < 4; ++i)
    for (long j = 0; j < 3; ++j)
      CHECK(std::abs(yp.at(i, j) - y.at(perm[static_cast<size_t>(i)], j)) < 1e-12);
}

TEST_CASE("forward FLOP tally depends only on total slots, not expert count") {
  Rng rng(79);
  Tensor x = normal_tensor(rng, {16, 8});
  auto flops_for = [&](long n, long sp) {
    Rng r2(123);
    SoftMoeParams p = tiny_params(r2, 8, 16, n, sp, true);
    Graph g;
    Graph::Id xid = g.input(x, false);
    SoftMoeGraphRefs refs = bind_soft_moe_params(g, p, "moe.");
    soft_moe_forward_graph(g, xid, refs);
    return g.flops();
  };
  const double f8 = flops_for(8, 8);    // 64 slots
  const double f64 = flops_for(64, 1);  // 64 slots
  const double f16 = flops_for(16, 4);  // 64 slots
  CHECK(f8 == f64);
  CHECK(f8 == f16);
}

TEST_CASE("backward: phi gradient matches finite differences") {
  for (uint64_t seed = 0; seed < 6; ++seed) {
    Rng rng(500 + seed);
    const bool normalize = seed % 2 == 0;
    SoftMoeParams p = tiny_params(rng, 3, 4, 2, 2, normalize);
    Tensor x = normal_tensor(rng, {4, 3});

    auto loss_at = [&](const Tensor& phi) {
      SoftMoeParams q = p;
      q.phi = phi;
      Tensor y = soft_moe_forward(x, q).y;
      double s = 0.0;
      for (long i = 0; i < y.numel(); ++i) s += y.at(i);
      return s;
    };

    Graph g;
    Graph::Id xid = g.input(x, false);
    SoftMoeGraphRefs refs = bind_soft_moe_params(g, p, "moe.");
    SoftMoeNodes nodes = soft_moe_forward_graph(g, xid, refs);
    g.backward(g.reduce_sum_all(nodes.y));
    Tensor fd = finite_diff_grad(loss_at, p.phi);
    CHECK(max_rel_error(g.grad(refs.phi), fd) < 1e-4);
  }
}

TEST_CASE("backward: uniform-routing input gradient is all ones") {
  // phi = 0, identity experts: Y is a doubly-convex mean-preserving map
  Rng rng(9);
  SoftMoeParams p = tiny_params(rng, 2, 3, 2, 1, false);
  for (long i = 0; i < p.phi.numel(); ++i) p.phi.at(i) = 0.0;
  Tensor x = normal_tensor(rng, {3, 2});

  Graph g;
  Graph::Id xid = g.input(x, true);
  SoftMoeGraphRefs refs = bind_soft_moe_params(g, p, "moe.");
  SoftMoeNodes nodes = soft_moe_forward_graph(g, xid, refs, kIdentityExperts);
  g.backward(g.reduce_sum_all(nodes.y));
  const Tensor& gx = g.grad(xid);
  for (long i = 0; i < gx.numel(); ++i)
    CHECK(gx.at(i) == doctest::Approx(1.0).epsilon(1e-9));

  auto loss_at = [&](const Tensor& probe) {
    Graph g2;
    Graph::Id xi = g2.input(probe, false);
    SoftMoeGraphRefs r2 = bind_soft_moe_params(g2, p, "moe.");
    SoftMoeNodes n2 = soft_moe_forward_graph(g2, xi, r2, kIdentityExperts);
    return g2.value(g2.reduce_sum_all(n2.y)).at(0);
  };
  Tensor fd = finite_diff_grad(loss_at, x);
  CHECK(max_rel_error(gx, fd) < 1e-4);
}

TEST_CASE("backward: scale gradient is zero when normalization is off") {
  Rng rng(10);
  SoftMoeParams p = tiny_params(rng, 3, 4, 2, 1, false);
  Tensor x = normal_tensor(rng, {3, 3});
  Graph g;
  Graph::Id xid = g.input(x, false);
  SoftMoeGraphRefs refs = bind_soft_moe_params(g, p, "moe.");
  SoftMoeNodes nodes = soft_moe_forward_graph(g, xid, refs);
  g.backward(g.reduce_sum_all(nodes.y));
  CHECK(g.grad(refs.scale).at(0) == 0.0);
}

TEST_CASE("gradient completeness: every parameter receives signal") {
  Rng rng(11);
  SoftMoeParams p = tiny_params(rng, 4, 5, 3, 2, true);
  Tensor x = normal_tensor(rng, {5, 4});
  Graph g;
  Graph::Id xid = g.input(x, true);
  SoftMoeGraphRefs refs = bind_soft_moe_params(g, p, "moe.");
  SoftMoeNodes nodes = soft_moe_forward_graph(g, xid, refs);
  // a non-symmetric loss so no gradient vanishes by accident
  Tensor w = normal_tensor(rng, {5, 4});
  g.backward(g.reduce_sum_all(g.mul(nodes.y, g.constant(w))));
  for (const auto& [name, id] : g.params()) {
    const Tensor& grad = g.grad(id);
    double mx = 0.0;
    for (long i = 0; i < grad.numel(); ++i) mx = std::max(mx, std::abs(grad.at(i)));
    INFO("param ", name);
    CHECK(mx > 1e-12);
  }
}

TEST_CASE("soft moe validates shapes") {
  Rng rng(12);
  SoftMoeParams p = tiny_params(rng, 3, 4, 2, 1, true);
  Tensor bad = normal_tensor(rng, {3, 5});  // width 5 != phi rows 3... token dim mismatch
  CHECK_THROWS_AS(soft_moe_forward(normal_tensor(rng, {2, 4}), p), ShapeError);
  CHECK_THROWS_AS(allocate_slots(0, 1), ShapeError);
  (void)bad;
}
