#pragma once

#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace softmoe {

/// Thrown when operand shapes do not conform.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Thrown when an operation produces or receives non-finite values.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Thrown on misuse of an API contract (bad arguments, wrong call order).
struct UsageError : std::logic_error {
  using std::logic_error::logic_error;
};

/// Dense row-major tensor of 64-bit floats. Rank is small (<= 3 in practice);
/// every public operation either returns finite values or throws.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<long> dims);
  Tensor(std::vector<long> dims, std::vector<double> data);

  static Tensor zeros(std::vector<long> dims) { return Tensor(std::move(dims)); }
  static Tensor full(std::vector<long> dims, double v);
  static Tensor scalar(double v) { return Tensor({1, 1}, {v}); }
  static Tensor row(std::vector<double> v);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor identity(long n);

  long rank() const { return static_cast<long>(dims_.size()); }
  long dim(long i) const { return dims_[static_cast<size_t>(i)]; }
  const std::vector<long>& dims() const { return dims_; }
  long numel() const { return static_cast<long>(data_.size()); }

  // rank-2 accessors
  long rows() const { return dims_[0]; }
  long cols() const { return dims_[1]; }
  double& at(long i, long j) { return data_[static_cast<size_t>(i * dims_[1] + j)]; }
  double at(long i, long j) const { return data_[static_cast<size_t>(i * dims_[1] + j)]; }
  double& at(long i) { return data_[static_cast<size_t>(i)]; }
  double at(long i) const { return data_[static_cast<size_t>(i)]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& raw() { return data_; }
  const std::vector<double>& raw() const { return data_; }

  bool same_shape(const Tensor& o) const { return dims_ == o.dims_; }
  bool all_finite() const;
  std::string shape_str() const;

 private:
  std::vector<long> dims_;
  std::vector<double> data_;
};

// ---------------------------------------------------------------------------
// Value-level kernels. The autodiff graph reuses these for its forward pass;
// analysis code calls them directly.
// ---------------------------------------------------------------------------

/// c[i][j] = sum_k a[i][k] * b[k][j]; throws ShapeError on inner-dim mismatch.
Tensor matmul(const Tensor& a, const Tensor& b);

/// Numerically stable softmax; slices along `axis` sum to 1.
/// Throws NumericError on non-finite input.
Tensor softmax_over_axis(const Tensor& t, int axis);

/// Scales each slice along `axis` by 1/(||slice||_2 + eps).
Tensor l2_normalize(const Tensor& t, int axis, double eps = 1e-6);

/// Row-wise layer norm: (x - mean) / sqrt(var + eps) * gain + bias.
/// gain/bias are [1 x cols].
Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias,
                       double eps = 1e-6);

/// tanh-approximation GELU, applied elementwise.
Tensor gelu(const Tensor& t);
double gelu_scalar(double x);
double gelu_grad_scalar(double x);

Tensor transpose2d(const Tensor& t);
Tensor add(const Tensor& a, const Tensor& b);  // same shape
Tensor scale(const Tensor& a, double s);

// Accumulating GEMM used by forward and backward passes:
// c (+)= op(a) * op(b), where op is optional transposition.
void gemm_acc(Tensor& c, const Tensor& a, bool trans_a, const Tensor& b,
              bool trans_b);

void check_finite(const Tensor& t, const char* what);

}  // namespace softmoe
