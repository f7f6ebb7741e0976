#include <doctest.h>

#include <cmath>

#include "softmoe/rng.hpp"
#include "softmoe/tensor.hpp"

using namespace softmoe;

namespace {

// independent straight-line oracle: triple loop, no shared code with gemm
Tensor matmul_oracle(const Tensor& a, const Tensor& b) {
  Tensor c({a.rows(), b.cols()});
  for (long i = 0; i < a.rows(); ++i)
    for (long j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (long k = 0; k < a.cols(); ++k) s += a.at(i, k) * b.at(k, j);
      c.at(i, j) = s;
    }
  return c;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.same_shape(b));
  double m = 0.0;
  for (long i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.at(i) - b.at(i)));
  return m;
}

}  // namespace

TEST_CASE("tensor shape checks") {
  CHECK_THROWS_AS(Tensor({2, 3}, {1.0, 2.0}), ShapeError);
  CHECK_THROWS_AS(Tensor({0, 3}), ShapeError);
  Tensor t({2, 3});
  CHECK(t.numel() == 6);
  CHECK(t.rank() == 2);
}

TEST_CASE("matmul identity and hand arithmetic") {
  Tensor eye = Tensor::identity(2);
  Tensor v = Tensor::matrix({{5.0}, {7.0}});
  Tensor out = matmul(eye, v);
  CHECK(out.at(0, 0) == 5.0);
  CHECK(out.at(1, 0) == 7.0);

  Tensor a = Tensor::matrix({{1.0, 2.0}});
  Tensor b = Tensor::matrix({{3.0}, {4.0}});
  CHECK(matmul(a, b).at(0, 0) == 11.0);

  CHECK_THROWS_AS(matmul(a, a), ShapeError);
}

TEST_CASE("matmul matches triple-loop oracle") {
  Rng rng(7);
  Tensor a = normal_tensor(rng, {3, 4});
  Tensor b = normal_tensor(rng, {4, 2});
  CHECK(max_abs_diff(matmul(a, b), matmul_oracle(a, b)) < 1e-12);
}

TEST_CASE("matmul associativity on random conformable triples") {
  for (uint64_t s = 0; s < 25; ++s) {
    Rng rng(100 + s);
    const long r = 2 + static_cast<long>(rng.next_u64() % 5);
    const long k1 = 2 + static_cast<long>(rng.next_u64() % 5);
    const long k2 = 2 + static_cast<long>(rng.next_u64() % 5);
    const long c = 2 + static_cast<long>(rng.next_u64() % 5);
    Tensor a = normal_tensor(rng, {r, k1});
    Tensor b = normal_tensor(rng, {k1, k2});
    Tensor d = normal_tensor(rng, {k2, c});
    Tensor lhs = matmul(matmul(a, b), d);
    Tensor rhs = matmul(a, matmul(b, d));
    double scale_ref = 0.0;
    for (long i = 0; i < lhs.numel(); ++i)
      scale_ref = std::max(scale_ref, std::abs(lhs.at(i)));
    CHECK(max_abs_diff(lhs, rhs) / (scale_ref + 1.0) < 1e-9);
  }
}

TEST_CASE("softmax closed forms") {
  Tensor t = Tensor::row({0.0, 0.0, std::log(2.0)});
  Tensor s = softmax_over_axis(t, 1);
  CHECK(s.at(0, 0) == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(s.at(0, 1) == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(s.at(0, 2) == doctest::Approx(0.5).epsilon(1e-12));

  Tensor eq = Tensor::full({1, 7}, 3.25);
  Tensor se = softmax_over_axis(eq, 1);
  for (long j = 0; j < 7; ++j)
    CHECK(se.at(0, j) == doctest::Approx(1.0 / 7.0).epsilon(1e-12));
}

TEST_CASE("softmax is stable for extreme logits") {
  Tensor t = Tensor::row({0.0, 1000.0});
  Tensor s = softmax_over_axis(t, 1);
  CHECK(s.at(0, 0) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(s.at(0, 1) == doctest::Approx(1.0).epsilon(1e-12));

  for (uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    Tensor logits({4, 5});
    for (long i = 0; i < logits.numel(); ++i)
      logits.at(i) = rng.uniform(-1e4, 1e4);
    Tensor d = softmax_over_axis(logits, 0);
    for (long j = 0; j < 5; ++j) {
      double sum = 0.0;
      for (long i = 0; i < 4; ++i) {
        CHECK(d.at(i, j) >= 0.0);
        sum += d.at(i, j);
      }
      CHECK(std::abs(sum - 1.0) < 1e-9);
    }
  }
}

TEST_CASE("softmax rejects non-finite input") {
  Tensor t = Tensor::row({1.0, std::nan("")});
  CHECK_THROWS_AS(softmax_over_axis(t, 1), NumericError);
}

TEST_CASE("l2_normalize 3-4-5 triangle and zero guard") {
  Tensor t = Tensor::row({3.0, 4.0});
  Tensor n = l2_normalize(t, 1);
  CHECK(n.at(0, 0) == doctest::Approx(0.6).epsilon(1e-6));
  CHECK(n.at(0, 1) == doctest::Approx(0.8).epsilon(1e-6));

  Tensor z = Tensor::zeros({1, 4});
  Tensor nz = l2_normalize(z, 1);
  for (long j = 0; j < 4; ++j) CHECK(nz.at(0, j) == 0.0);
}

TEST_CASE("l2_normalize output norm is eps-close to 1") {
  for (uint64_t s = 0; s < 20; ++s) {
    Rng rng(s);
    Tensor v = normal_tensor(rng, {1, 5});
    Tensor n = l2_normalize(v, 1);
    double norm = 0.0;
    for (long j = 0; j < 5; ++j) norm += n.at(0, j) * n.at(0, j);
    norm = std::sqrt(norm);
    CHECK(std::abs(norm - 1.0) < 1e-5);  // off by ~eps/||v||
  }
}

TEST_CASE("glorot bounds, variance, determinism") {
  Rng rng(3);
  Tensor t = glorot_init(rng, 2, 2);
  const double bound = std::sqrt(6.0 / 4.0);
  for (long i = 0; i < t.numel(); ++i) {
    CHECK(t.at(i) <= bound);
    CHECK(t.at(i) >= -bound);
  }

  Rng rng2(11);
  Tensor big = glorot_init(rng2, 250, 400);  // 1e5 draws
  double mean = 0.0;
  for (long i = 0; i < big.numel(); ++i) mean += big.at(i);
  mean /= static_cast<double>(big.numel());
  double var = 0.0;
  for (long i = 0; i < big.numel(); ++i)
    var += (big.at(i) - mean) * (big.at(i) - mean);
  var /= static_cast<double>(big.numel());
  const double expected = 2.0 / (250.0 + 400.0);
  CHECK(std::abs(var - expected) / expected < 0.05);

  Rng a(99), b(99);
  Tensor ta = glorot_init(a, 5, 7);
  Tensor tb = glorot_init(b, 5, 7);
  CHECK(max_abs_diff(ta, tb) == 0.0);
}

TEST_CASE("rng stream is deterministic and counts draws") {
  Rng a(123), b(123);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  CHECK(a.counter() == 100);
  Rng c(124);
  bool differs = false;
  for (int i = 0; i < 10; ++i) differs |= (b.next_u64() != c.next_u64());
  CHECK(differs);
}

TEST_CASE("rng uniform and normal ranges") {
  Rng rng(5);
  double mean = 0.0;
  for (int i = 0; i < 20000; ++i) {
    const double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    mean += rng.normal();
  }
  CHECK(std::abs(mean / 20000.0) < 0.05);
}
