#include "softmoe/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace softmoe {

namespace {

long checked_numel(const std::vector<long>& dims) {
  if (dims.empty()) throw ShapeError("tensor rank must be >= 1");
  long n = 1;
  for (long d : dims) {
    if (d <= 0) throw ShapeError("tensor dims must be positive");
    n *= d;
  }
  return n;
}

}  // namespace

Tensor::Tensor(std::vector<long> dims) : dims_(std::move(dims)) {
  data_.assign(static_cast<size_t>(checked_numel(dims_)), 0.0);
}

Tensor::Tensor(std::vector<long> dims, std::vector<double> data)
    : dims_(std::move(dims)), data_(std::move(data)) {
  if (checked_numel(dims_) != static_cast<long>(data_.size()))
    throw ShapeError("tensor data length does not match dims");
}

Tensor Tensor::full(std::vector<long> dims, double v) {
  Tensor t(std::move(dims));
  std::fill(t.data_.begin(), t.data_.end(), v);
  return t;
}

Tensor Tensor::row(std::vector<double> v) {
  long n = static_cast<long>(v.size());
  return Tensor({1, n}, std::move(v));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  long r = static_cast<long>(rows.size());
  long c = static_cast<long>(rows.begin()->size());
  std::vector<double> data;
  data.reserve(static_cast<size_t>(r * c));
  for (const auto& row : rows) {
    if (static_cast<long>(row.size()) != c)
      throw ShapeError("ragged matrix initializer");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(data));
}

Tensor Tensor::identity(long n) {
  Tensor t({n, n});
  for (long i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

std::string Tensor::shape_str() const {
  std::string s = "[";
  for (size_t i = 0; i < dims_.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(dims_[i]);
  }
  return s + "]";
}

void check_finite(const Tensor& t, const char* what) {
  if (!t.all_finite()) throw NumericError(std::string(what) + ": non-finite values");
}

// ---------------------------------------------------------------------------
// Kernels
// ---------------------------------------------------------------------------

void gemm_acc(Tensor& c, const Tensor& a, bool trans_a, const Tensor& b,
              bool trans_b) {
  if (a.rank() != 2 || b.rank() != 2 || c.rank() != 2)
    throw ShapeError("gemm expects rank-2 operands");
  const long m = trans_a ? a.cols() : a.rows();
  const long k = trans_a ? a.rows() : a.cols();
  const long kb = trans_b ? b.cols() : b.rows();
  const long n = trans_b ? b.rows() : b.cols();
  if (k != kb || c.rows() != m || c.cols() != n)
    throw ShapeError("gemm shape mismatch: " + a.shape_str() + (trans_a ? "^T" : "") +
                     " * " + b.shape_str() + (trans_b ? "^T" : "") + " -> " +
                     c.shape_str());

  double* cd = c.data();
  const double* ad = a.data();
  const double* bd = b.data();
  const long lda = a.cols();
  const long ldb = b.cols();

  if (!trans_a && !trans_b) {
    for (long i = 0; i < m; ++i)
      for (long p = 0; p < k; ++p) {
        const double av = ad[i * lda + p];
        const double* brow = bd + p * ldb;
        double* crow = cd + i * n;
        for (long j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
  } else if (trans_a && !trans_b) {
    for (long p = 0; p < k; ++p)
      for (long i = 0; i < m; ++i) {
        const double av = ad[p * lda + i];
        const double* brow = bd + p * ldb;
        double* crow = cd + i * n;
        for (long j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
  } else if (!trans_a && trans_b) {
    for (long i = 0; i < m; ++i)
      for (long j = 0; j < n; ++j) {
        const double* arow = ad + i * lda;
        const double* brow = bd + j * ldb;
        double s = 0.0;
        for (long p = 0; p < k; ++p) s += arow[p] * brow[p];
        cd[i * n + j] += s;
      }
  } else {
    // c[i][j] += a[p][i] * b[j][p]
    for (long i = 0; i < m; ++i)
      for (long j = 0; j < n; ++j) {
        double s = 0.0;
        for (long p = 0; p < k; ++p) s += ad[p * lda + i] * bd[j * ldb + p];
        cd[i * n + j] += s;
      }
  }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw ShapeError("matmul expects rank-2 operands");
  if (a.cols() != b.rows())
    throw ShapeError("matmul inner dims mismatch: " + a.shape_str() + " * " +
                     b.shape_str());
  Tensor c({a.rows(), b.cols()});
  gemm_acc(c, a, false, b, false);
  return c;
}

Tensor softmax_over_axis(const Tensor& t, int axis) {
  if (axis < 0 || axis >= t.rank()) throw ShapeError("softmax axis out of range");
  check_finite(t, "softmax_over_axis input");
  if (t.rank() != 2) throw ShapeError("softmax_over_axis supports rank-2 tensors");

  Tensor out({t.rows(), t.cols()});
  const long r = t.rows(), c = t.cols();
  if (axis == 1) {
    for (long i = 0; i < r; ++i) {
      double mx = t.at(i, 0);
      for (long j = 1; j < c; ++j) mx = std::max(mx, t.at(i, j));
      double sum = 0.0;
      for (long j = 0; j < c; ++j) {
        const double e = std::exp(t.at(i, j) - mx);
        out.at(i, j) = e;
        sum += e;
      }
      for (long j = 0; j < c; ++j) out.at(i, j) /= sum;
    }
  } else {
    for (long j = 0; j < c; ++j) {
      double mx = t.at(0, j);
      for (long i = 1; i < r; ++i) mx = std::max(mx, t.at(i, j));
      double sum = 0.0;
      for (long i = 0; i < r; ++i) {
        const double e = std::exp(t.at(i, j) - mx);
        out.at(i, j) = e;
        sum += e;
      }
      for (long i = 0; i < r; ++i) out.at(i, j) /= sum;
    }
  }
  return out;
}

Tensor l2_normalize(const Tensor& t, int axis, double eps) {
  if (axis < 0 || axis >= t.rank()) throw ShapeError("l2_normalize axis out of range");
  if (t.rank() != 2) throw ShapeError("l2_normalize supports rank-2 tensors");
  Tensor out({t.rows(), t.cols()});
  const long r = t.rows(), c = t.cols();
  if (axis == 1) {
    for (long i = 0; i < r; ++i) {
      double sq = 0.0;
      for (long j = 0; j < c; ++j) sq += t.at(i, j) * t.at(i, j);
      const double inv = 1.0 / (std::sqrt(sq) + eps);
      for (long j = 0; j < c; ++j) out.at(i, j) = t.at(i, j) * inv;
    }
  } else {
    for (long j = 0; j < c; ++j) {
      double sq = 0.0;
      for (long i = 0; i < r; ++i) sq += t.at(i, j) * t.at(i, j);
      const double inv = 1.0 / (std::sqrt(sq) + eps);
      for (long i = 0; i < r; ++i) out.at(i, j) = t.at(i, j) * inv;
    }
  }
  return out;
}

Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias,
                       double eps) {
  if (x.rank() != 2) throw ShapeError("layer_norm expects rank-2 input");
  const long r = x.rows(), c = x.cols();
  if (gain.numel() != c || bias.numel() != c)
    throw ShapeError("layer_norm gain/bias length mismatch");
  Tensor out({r, c});
  for (long i = 0; i < r; ++i) {
    double mean = 0.0;
    for (long j = 0; j < c; ++j) mean += x.at(i, j);
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (long j = 0; j < c; ++j) {
      const double d = x.at(i, j) - mean;
      var += d * d;
    }
    var /= static_cast<double>(c);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (long j = 0; j < c; ++j)
      out.at(i, j) = (x.at(i, j) - mean) * inv * gain.at(j) + bias.at(j);
  }
  return out;
}

double gelu_scalar(double x) {
  constexpr double kSqrt2OverPi = 0.7978845608028654;
  const double u = kSqrt2OverPi * (x + 0.044715 * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(u));
}

double gelu_grad_scalar(double x) {
  constexpr double kSqrt2OverPi = 0.7978845608028654;
  const double u = kSqrt2OverPi * (x + 0.044715 * x * x * x);
  const double th = std::tanh(u);
  const double du = kSqrt2OverPi * (1.0 + 3.0 * 0.044715 * x * x);
  return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du;
}

Tensor gelu(const Tensor& t) {
  Tensor out(t.dims());
  for (long i = 0; i < t.numel(); ++i) out.at(i) = gelu_scalar(t.at(i));
  return out;
}

Tensor transpose2d(const Tensor& t) {
  if (t.rank() != 2) throw ShapeError("transpose expects rank-2 input");
  Tensor out({t.cols(), t.rows()});
  for (long i = 0; i < t.rows(); ++i)
    for (long j = 0; j < t.cols(); ++j) out.at(j, i) = t.at(i, j);
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw ShapeError("add shape mismatch");
  Tensor out(a.dims());
  for (long i = 0; i < a.numel(); ++i) out.at(i) = a.at(i) + b.at(i);
  return out;
}

Tensor scale(const Tensor& a, double s) {
  Tensor out(a.dims());
  for (long i = 0; i < a.numel(); ++i) out.at(i) = a.at(i) * s;
  return out;
}

}  // namespace softmoe
