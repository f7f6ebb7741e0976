#pragma once

#include <cmath>
#include <functional>

#include "softmoe/tensor.hpp"

namespace softmoe {

/// Central-difference gradient oracle: (f(x + h e_i) - f(x - h e_i)) / 2h per
/// coordinate. Used to check every backward pass against an implementation
/// that never touches the tape.
inline Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f,
                               const Tensor& x, double h = 1e-5) {
  Tensor g(x.dims());
  Tensor probe = x;
  for (long i = 0; i < x.numel(); ++i) {
    const double orig = probe.at(i);
    probe.at(i) = orig + h;
    const double fp = f(probe);
    probe.at(i) = orig - h;
    const double fm = f(probe);
    probe.at(i) = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw NumericError("finite_diff_grad: non-finite function value");
    g.at(i) = (fp - fm) / (2.0 * h);
  }
  return g;
}

/// max_i |a_i - b_i| / (max_i |b_i| + floor): scale-aware relative error used
/// by the gradient checks.
inline double max_rel_error(const Tensor& a, const Tensor& b,
                            double floor = 1e-8) {
  if (!a.same_shape(b)) throw ShapeError("max_rel_error: shape mismatch");
  double max_abs_diff = 0.0, max_abs_ref = 0.0;
  for (long i = 0; i < a.numel(); ++i) {
    max_abs_diff = std::max(max_abs_diff, std::abs(a.at(i) - b.at(i)));
    max_abs_ref = std::max(max_abs_ref, std::abs(b.at(i)));
  }
  return max_abs_diff / (max_abs_ref + floor);
}

}  // namespace softmoe
