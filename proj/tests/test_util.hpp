#pragma once

#include "softmoe/soft_moe.hpp"

namespace softmoe::testutil {

/// An ExpertMlp that computes the exact identity on inputs of moderate
/// magnitude: gelu(x + 30) == x + 30 in double precision because tanh has
/// saturated, so f(x) = (x + 30) - 30 = x up to ~1e-14 rounding.
inline ExpertMlp identity_expert(long d) {
  ExpertMlp e;
  e.w1 = Tensor::identity(d);
  e.b1 = Tensor::full({1, d}, 30.0);
  e.w2 = Tensor::identity(d);
  e.b2 = Tensor::full({1, d}, -30.0);
  return e;
}

}  // namespace softmoe::testutil
