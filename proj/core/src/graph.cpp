#include "softmoe/graph.hpp"

#include <algorithm>
#include <cmath>

namespace softmoe {

namespace {

double slice_dot(const Tensor& a, const Tensor& b, long fixed, int axis) {
  // dot of one row (axis==1) or one column (axis==0)
  double s = 0.0;
  if (axis == 1) {
    for (long j = 0; j < a.cols(); ++j) s += a.at(fixed, j) * b.at(fixed, j);
  } else {
    for (long i = 0; i < a.rows(); ++i) s += a.at(i, fixed) * b.at(i, fixed);
  }
  return s;
}

}  // namespace

Graph::Id Graph::push(Node n) {
  check_finite(n.value, "graph op");
  nodes_.push_back(std::move(n));
  return static_cast<Id>(nodes_.size() - 1);
}

bool Graph::any_parent_grad(const std::vector<Id>& ps) const {
  return std::any_of(ps.begin(), ps.end(),
                     [&](Id p) { return at(p).requires_grad; });
}

Tensor& Graph::grad_buf(Id id) {
  Node& n = at(id);
  if (!n.grad_live) {
    n.grad = Tensor::zeros(n.value.dims());
    n.grad_live = true;
  }
  return n.grad;
}

const Tensor& Graph::grad(Id id) const {
  const Node& n = at(id);
  if (n.grad_live) return n.grad;
  // never reached by backward: gradient is identically zero
  auto* self = const_cast<Graph*>(this);
  return self->grad_buf(id);
}

Graph::Id Graph::input(Tensor v, bool requires_grad) {
  Node n;
  n.op = Op::kInput;
  n.value = std::move(v);
  n.requires_grad = requires_grad;
  return push(std::move(n));
}

Graph::Id Graph::param(const std::string& name, const Tensor& v) {
  Id id = input(v, true);
  params_.emplace_back(name, id);
  return id;
}

Graph::Id Graph::matmul(Id a, Id b) {
  Node n;
  n.op = Op::kMatmul;
  n.parents = {a, b};
  n.value = softmoe::matmul(value(a), value(b));
  n.requires_grad = any_parent_grad(n.parents);
  flops_ += 2.0 * static_cast<double>(value(a).rows()) * value(a).cols() *
            value(b).cols();
  return push(std::move(n));
}

Graph::Id Graph::add(Id a, Id b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  Node n;
  n.op = Op::kAdd;
  n.parents = {a, b};
  n.requires_grad = any_parent_grad(n.parents);
  Tensor out(av.dims());
  if (av.same_shape(bv)) {
    for (long i = 0; i < av.numel(); ++i) out.at(i) = av.at(i) + bv.at(i);
  } else if (bv.rank() == 2 && bv.rows() == 1 && bv.cols() == av.cols()) {
    for (long i = 0; i < av.rows(); ++i)
      for (long j = 0; j < av.cols(); ++j) out.at(i, j) = av.at(i, j) + bv.at(j);
  } else if (bv.numel() == 1) {
    for (long i = 0; i < av.numel(); ++i) out.at(i) = av.at(i) + bv.at(0);
  } else {
    throw ShapeError("add: incompatible shapes " + av.shape_str() + " + " +
                     bv.shape_str());
  }
  n.value = std::move(out);
  flops_ += static_cast<double>(av.numel());
  return push(std::move(n));
}

Graph::Id Graph::mul(Id a, Id b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  Node n;
  n.op = Op::kMul;
  n.parents = {a, b};
  n.requires_grad = any_parent_grad(n.parents);
  Tensor out(av.dims());
  if (av.same_shape(bv)) {
    for (long i = 0; i < av.numel(); ++i) out.at(i) = av.at(i) * bv.at(i);
  } else if (bv.numel() == 1) {
    for (long i = 0; i < av.numel(); ++i) out.at(i) = av.at(i) * bv.at(0);
  } else if (bv.rank() == 2 && bv.cols() == 1 && bv.rows() == av.rows()) {
    for (long i = 0; i < av.rows(); ++i)
      for (long j = 0; j < av.cols(); ++j) out.at(i, j) = av.at(i, j) * bv.at(i, 0);
  } else {
    throw ShapeError("mul: incompatible shapes " + av.shape_str() + " * " +
                     bv.shape_str());
  }
  n.value = std::move(out);
  flops_ += static_cast<double>(av.numel());
  return push(std::move(n));
}

Graph::Id Graph::softmax(Id a, int axis) {
  Node n;
  n.op = Op::kSoftmax;
  n.parents = {a};
  n.axis = axis;
  n.value = softmax_over_axis(value(a), axis);
  n.requires_grad = any_parent_grad(n.parents);
  flops_ += 5.0 * static_cast<double>(n.value.numel());
  return push(std::move(n));
}

Graph::Id Graph::l2_normalize(Id a, int axis, double eps) {
  Node n;
  n.op = Op::kL2Normalize;
  n.parents = {a};
  n.axis = axis;
  n.eps = eps;
  n.value = softmoe::l2_normalize(value(a), axis, eps);
  n.requires_grad = any_parent_grad(n.parents);
  flops_ += 4.0 * static_cast<double>(n.value.numel());
  return push(std::move(n));
}

Graph::Id Graph::gelu(Id a) {
  Node n;
  n.op = Op::kGelu;
  n.parents = {a};
  n.value = softmoe::gelu(value(a));
  n.requires_grad = any_parent_grad(n.parents);
  flops_ += 10.0 * static_cast<double>(n.value.numel());
  return push(std::move(n));
}

Graph::Id Graph::layer_norm(Id x, Id gain, Id bias, double eps) {
  Node n;
  n.op = Op::kLayerNorm;
  n.parents = {x, gain, bias};
  n.eps = eps;
  n.value = layer_norm_rows(value(x), value(gain), value(bias), eps);
  n.requires_grad = any_parent_grad(n.parents);
  flops_ += 8.0 * static_cast<double>(n.value.numel());
  return push(std::move(n));
}

Graph::Id Graph::reshape(Id a, std::vector<long> dims) {
  Node n;
  n.op = Op::kReshape;
  n.parents = {a};
  Tensor out(std::move(dims), value(a).raw());
  if (out.numel() != value(a).numel()) throw ShapeError("reshape: numel mismatch");
  n.value = std::move(out);
  n.requires_grad = any_parent_grad(n.parents);
  return push(std::move(n));
}

Graph::Id Graph::transpose(Id a) {
  Node n;
  n.op = Op::kTranspose;
  n.parents = {a};
  n.value = transpose2d(value(a));
  n.requires_grad = any_parent_grad(n.parents);
  return push(std::move(n));
}

Graph::Id Graph::reduce_sum(Id a, int axis) {
  const Tensor& av = value(a);
  if (av.rank() != 2 || axis < 0 || axis > 1)
    throw ShapeError("reduce_sum expects rank-2 and axis in {0,1}");
  Node n;
  n.op = Op::kReduceSum;
  n.parents = {a};
  n.axis = axis;
  Tensor out(axis == 0 ? std::vector<long>{1, av.cols()}
                       : std::vector<long>{av.rows(), 1});
  for (long i = 0; i < av.rows(); ++i)
    for (long j = 0; j < av.cols(); ++j)
      out.at(axis == 0 ? 0 : i, axis == 0 ? j : 0) += av.at(i, j);
  n.value = std::move(out);
  n.requires_grad = any_parent_grad(n.parents);
  flops_ += static_cast<double>(av.numel());
  return push(std::move(n));
}

Graph::Id Graph::reduce_mean(Id a, int axis) {
  // read the divisor before reduce_sum can grow (and reallocate) the tape
  const long count = axis == 0 ? value(a).rows() : value(a).cols();
  Id s = reduce_sum(a, axis);
  return mul(s, constant(Tensor::scalar(1.0 / static_cast<double>(count))));
}

Graph::Id Graph::reduce_sum_all(Id a) {
  const Tensor& av = value(a);
  Node n;
  n.op = Op::kReduceSum;
  n.parents = {a};
  n.all_reduce = true;
  double s = 0.0;
  for (long i = 0; i < av.numel(); ++i) s += av.at(i);
  n.value = Tensor::scalar(s);
  n.requires_grad = any_parent_grad(n.parents);
  flops_ += static_cast<double>(av.numel());
  return push(std::move(n));
}

Graph::Id Graph::reduce_mean_all(Id a) {
  const double inv = 1.0 / static_cast<double>(value(a).numel());
  return mul(reduce_sum_all(a), constant(Tensor::scalar(inv)));
}

Graph::Id Graph::gather_rows(Id a, std::vector<long> idx) {
  const Tensor& av = value(a);
  if (av.rank() != 2) throw ShapeError("gather_rows expects rank-2 input");
  Node n;
  n.op = Op::kGatherRows;
  n.parents = {a};
  Tensor out({static_cast<long>(idx.size()), av.cols()});
  for (size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] < 0 || idx[r] >= av.rows()) throw ShapeError("gather_rows index out of range");
    for (long j = 0; j < av.cols(); ++j)
      out.at(static_cast<long>(r), j) = av.at(idx[r], j);
  }
  n.indices = std::move(idx);
  n.value = std::move(out);
  n.requires_grad = any_parent_grad(n.parents);
  return push(std::move(n));
}

Graph::Id Graph::gather_cols(Id a, std::vector<long> idx) {
  const Tensor& av = value(a);
  if (av.rank() != 2) throw ShapeError("gather_cols expects rank-2 input");
  Node n;
  n.op = Op::kGatherCols;
  n.parents = {a};
  Tensor out({av.rows(), static_cast<long>(idx.size())});
  for (size_t c = 0; c < idx.size(); ++c) {
    if (idx[c] < 0 || idx[c] >= av.cols()) throw ShapeError("gather_cols index out of range");
    for (long i = 0; i < av.rows(); ++i)
      out.at(i, static_cast<long>(c)) = av.at(i, idx[c]);
  }
  n.indices = std::move(idx);
  n.value = std::move(out);
  n.requires_grad = any_parent_grad(n.parents);
  return push(std::move(n));
}

Graph::Id Graph::concat_rows(const std::vector<Id>& parts) {
  if (parts.empty()) throw UsageError("concat_rows: no parts");
  long rows = 0;
  const long cols = value(parts[0]).cols();
  for (Id p : parts) {
    if (value(p).rank() != 2 || value(p).cols() != cols)
      throw ShapeError("concat_rows: column mismatch");
    rows += value(p).rows();
  }
  Node n;
  n.op = Op::kConcatRows;
  n.parents = parts;
  Tensor out({rows, cols});
  long r0 = 0;
  for (Id p : parts) {
    const Tensor& pv = value(p);
    for (long i = 0; i < pv.rows(); ++i)
      for (long j = 0; j < cols; ++j) out.at(r0 + i, j) = pv.at(i, j);
    r0 += pv.rows();
  }
  n.value = std::move(out);
  n.requires_grad = any_parent_grad(n.parents);
  return push(std::move(n));
}

Graph::Id Graph::concat_cols(const std::vector<Id>& parts) {
  if (parts.empty()) throw UsageError("concat_cols: no parts");
  long cols = 0;
  const long rows = value(parts[0]).rows();
  for (Id p : parts) {
    if (value(p).rank() != 2 || value(p).rows() != rows)
      throw ShapeError("concat_cols: row mismatch");
    cols += value(p).cols();
  }
  Node n;
  n.op = Op::kConcatCols;
  n.parents = parts;
  Tensor out({rows, cols});
  long c0 = 0;
  for (Id p : parts) {
    const Tensor& pv = value(p);
    for (long i = 0; i < rows; ++i)
      for (long j = 0; j < pv.cols(); ++j) out.at(i, c0 + j) = pv.at(i, j);
    c0 += pv.cols();
  }
  n.value = std::move(out);
  n.requires_grad = any_parent_grad(n.parents);
  return push(std::move(n));
}

Graph::Id Graph::scatter_rows(Id src, std::vector<long> idx, long out_rows) {
  const Tensor& sv = value(src);
  if (sv.rank() != 2) throw ShapeError("scatter_rows expects rank-2 input");
  if (static_cast<long>(idx.size()) != sv.rows())
    throw ShapeError("scatter_rows: index count != src rows");
  Node n;
  n.op = Op::kScatterRows;
  n.parents = {src};
  Tensor out({out_rows, sv.cols()});
  for (size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] < 0 || idx[r] >= out_rows) throw ShapeError("scatter_rows index out of range");
    for (long j = 0; j < sv.cols(); ++j)
      out.at(idx[r], j) += sv.at(static_cast<long>(r), j);
  }
  n.indices = std::move(idx);
  n.value = std::move(out);
  n.requires_grad = any_parent_grad(n.parents);
  return push(std::move(n));
}

Graph::Id Graph::softmax_cross_entropy(Id logits, std::vector<int> labels) {
  const Tensor& z = value(logits);
  if (z.rank() != 2 || static_cast<long>(labels.size()) != z.rows())
    throw ShapeError("softmax_cross_entropy: labels/rows mismatch");
  for (size_t i = 0; i < labels.size(); ++i)
    if (labels[i] < 0 || labels[i] >= z.cols())
      throw ShapeError("softmax_cross_entropy: label out of range");
  Node n;
  n.op = Op::kCrossEntropy;
  n.parents = {logits};
  n.labels = std::move(labels);
  double total = 0.0;
  for (long i = 0; i < z.rows(); ++i) {
    double mx = z.at(i, 0);
    for (long j = 1; j < z.cols(); ++j) mx = std::max(mx, z.at(i, j));
    double se = 0.0;
    for (long j = 0; j < z.cols(); ++j) se += std::exp(z.at(i, j) - mx);
    total += mx + std::log(se) - z.at(i, n.labels[static_cast<size_t>(i)]);
  }
  n.value = Tensor::scalar(total / static_cast<double>(z.rows()));
  n.requires_grad = any_parent_grad(n.parents);
  flops_ += 5.0 * static_cast<double>(z.numel());
  return push(std::move(n));
}

Graph::Id Graph::cv_squared(Id a) {
  const Tensor& av = value(a);
  const long k = av.numel();
  Node n;
  n.op = Op::kCvSquared;
  n.parents = {a};
  double mean = 0.0;
  for (long i = 0; i < k; ++i) mean += av.at(i);
  mean /= static_cast<double>(k);
  if (std::abs(mean) < 1e-300) throw NumericError("cv_squared: zero mean");
  double var = 0.0;
  for (long i = 0; i < k; ++i) {
    const double d = av.at(i) - mean;
    var += d * d;
  }
  var /= static_cast<double>(k);
  n.value = Tensor::scalar(var / (mean * mean));
  n.requires_grad = any_parent_grad(n.parents);
  flops_ += 4.0 * static_cast<double>(k);
  return push(std::move(n));
}

// ---------------------------------------------------------------------------
// Backward
// ---------------------------------------------------------------------------

void Graph::backward(Id loss) {
  if (nodes_.empty()) throw UsageError("backward: empty graph");
  if (value(loss).numel() != 1) throw UsageError("backward: loss must be scalar");
  grad_buf(loss).at(0) = 1.0;
  ran_backward_ = true;
  for (Id id = loss; id >= 0; --id) backward_node(id);
}

void Graph::backward_node(Id id) {
  Node& n = at(id);
  if (!n.grad_live || !n.requires_grad || n.op == Op::kInput) return;
  const Tensor& g = n.grad;

  auto parent_grad = [&](int k) -> Tensor* {
    Id p = n.parents[static_cast<size_t>(k)];
    if (!at(p).requires_grad) return nullptr;
    return &grad_buf(p);
  };

  switch (n.op) {
    case Op::kInput:
      break;
    case Op::kMatmul: {
      const Tensor& a = value(n.parents[0]);
      const Tensor& b = value(n.parents[1]);
      if (Tensor* da = parent_grad(0)) gemm_acc(*da, g, false, b, true);
      if (Tensor* db = parent_grad(1)) gemm_acc(*db, a, true, g, false);
      break;
    }
    case Op::kAdd: {
      const Tensor& a = value(n.parents[0]);
      const Tensor& b = value(n.parents[1]);
      if (Tensor* da = parent_grad(0))
        for (long i = 0; i < g.numel(); ++i) da->at(i) += g.at(i);
      if (Tensor* db = parent_grad(1)) {
        if (a.same_shape(b)) {
          for (long i = 0; i < g.numel(); ++i) db->at(i) += g.at(i);
        } else if (b.numel() == 1) {
          double s = 0.0;
          for (long i = 0; i < g.numel(); ++i) s += g.at(i);
          db->at(0) += s;
        } else {  // row broadcast
          for (long i = 0; i < g.rows(); ++i)
            for (long j = 0; j < g.cols(); ++j) db->at(0, j) += g.at(i, j);
        }
      }
      break;
    }
    case Op::kMul: {
      const Tensor& a = value(n.parents[0]);
      const Tensor& b = value(n.parents[1]);
      Tensor* da = parent_grad(0);
      Tensor* db = parent_grad(1);
      if (a.same_shape(b)) {
        for (long i = 0; i < g.numel(); ++i) {
          if (da) da->at(i) += g.at(i) * b.at(i);
          if (db) db->at(i) += g.at(i) * a.at(i);
        }
      } else if (b.numel() == 1) {
        const double bs = b.at(0);
        double s = 0.0;
        for (long i = 0; i < g.numel(); ++i) {
          if (da) da->at(i) += g.at(i) * bs;
          s += g.at(i) * a.at(i);
        }
        if (db) db->at(0) += s;
      } else {  // column broadcast [r x 1]
        for (long i = 0; i < g.rows(); ++i) {
          const double bi = b.at(i, 0);
          double s = 0.0;
          for (long j = 0; j < g.cols(); ++j) {
            if (da) da->at(i, j) += g.at(i, j) * bi;
            s += g.at(i, j) * a.at(i, j);
          }
          if (db) db->at(i, 0) += s;
        }
      }
      break;
    }
    case Op::kSoftmax: {
      Tensor* da = parent_grad(0);
      if (!da) break;
      const Tensor& y = n.value;
      if (n.axis == 1) {
        for (long i = 0; i < y.rows(); ++i) {
          const double dot = slice_dot(g, y, i, 1);
          for (long j = 0; j < y.cols(); ++j)
            da->at(i, j) += y.at(i, j) * (g.at(i, j) - dot);
        }
      } else {
        for (long j = 0; j < y.cols(); ++j) {
          const double dot = slice_dot(g, y, j, 0);
          for (long i = 0; i < y.rows(); ++i)
            da->at(i, j) += y.at(i, j) * (g.at(i, j) - dot);
        }
      }
      break;
    }
    case Op::kL2Normalize: {
      Tensor* da = parent_grad(0);
      if (!da) break;
      const Tensor& x = value(n.parents[0]);
      const double eps = n.eps;
      auto slice_backward = [&](long fixed) {
        double sq = 0.0, dot = 0.0;
        if (n.axis == 1) {
          for (long j = 0; j < x.cols(); ++j) {
            sq += x.at(fixed, j) * x.at(fixed, j);
            dot += g.at(fixed, j) * x.at(fixed, j);
          }
        } else {
          for (long i = 0; i < x.rows(); ++i) {
            sq += x.at(i, fixed) * x.at(i, fixed);
            dot += g.at(i, fixed) * x.at(i, fixed);
          }
        }
        const double norm = std::sqrt(sq);
        const double r = 1.0 / (norm + eps);
        const double coef = norm > 1e-300 ? dot * r * r / norm : 0.0;
        if (n.axis == 1) {
          for (long j = 0; j < x.cols(); ++j)
            da->at(fixed, j) += g.at(fixed, j) * r - coef * x.at(fixed, j);
        } else {
          for (long i = 0; i < x.rows(); ++i)
            da->at(i, fixed) += g.at(i, fixed) * r - coef * x.at(i, fixed);
        }
      };
      const long count = n.axis == 1 ? x.rows() : x.cols();
      for (long s = 0; s < count; ++s) slice_backward(s);
      break;
    }
    case Op::kGelu: {
      Tensor* da = parent_grad(0);
      if (!da) break;
      const Tensor& x = value(n.parents[0]);
      for (long i = 0; i < x.numel(); ++i)
        da->at(i) += g.at(i) * gelu_grad_scalar(x.at(i));
      break;
    }
    case Op::kLayerNorm: {
      const Tensor& x = value(n.parents[0]);
      const Tensor& gain = value(n.parents[1]);
      Tensor* dx = parent_grad(0);
      Tensor* dg = parent_grad(1);
      Tensor* db = parent_grad(2);
      const long r = x.rows(), c = x.cols();
      const double invc = 1.0 / static_cast<double>(c);
      for (long i = 0; i < r; ++i) {
        double mean = 0.0;
        for (long j = 0; j < c; ++j) mean += x.at(i, j);
        mean *= invc;
        double var = 0.0;
        for (long j = 0; j < c; ++j) {
          const double d = x.at(i, j) - mean;
          var += d * d;
        }
        var *= invc;
        const double inv = 1.0 / std::sqrt(var + n.eps);
        // xhat_j = (x_j - mean) * inv
        double mean_dxh = 0.0, mean_dxh_xh = 0.0;
        for (long j = 0; j < c; ++j) {
          const double xh = (x.at(i, j) - mean) * inv;
          const double dxh = g.at(i, j) * gain.at(j);
          mean_dxh += dxh;
          mean_dxh_xh += dxh * xh;
          if (dg) dg->at(j) += g.at(i, j) * xh;
          if (db) db->at(j) += g.at(i, j);
        }
        mean_dxh *= invc;
        mean_dxh_xh *= invc;
        if (dx) {
          for (long j = 0; j < c; ++j) {
            const double xh = (x.at(i, j) - mean) * inv;
            const double dxh = g.at(i, j) * gain.at(j);
            dx->at(i, j) += inv * (dxh - mean_dxh - xh * mean_dxh_xh);
          }
        }
      }
      break;
    }
    case Op::kReshape: {
      if (Tensor* da = parent_grad(0))
        for (long i = 0; i < g.numel(); ++i) da->at(i) += g.at(i);
      break;
    }
    case Op::kTranspose: {
      if (Tensor* da = parent_grad(0))
        for (long i = 0; i < g.rows(); ++i)
          for (long j = 0; j < g.cols(); ++j) da->at(j, i) += g.at(i, j);
      break;
    }
    case Op::kReduceSum: {
      Tensor* da = parent_grad(0);
      if (!da) break;
      if (n.all_reduce) {
        const double gv = g.at(0);
        for (long i = 0; i < da->numel(); ++i) da->at(i) += gv;
      } else if (n.axis == 0) {
        for (long i = 0; i < da->rows(); ++i)
          for (long j = 0; j < da->cols(); ++j) da->at(i, j) += g.at(0, j);
      } else {
        for (long i = 0; i < da->rows(); ++i)
          for (long j = 0; j < da->cols(); ++j) da->at(i, j) += g.at(i, 0);
      }
      break;
    }
    case Op::kReduceMean:
      throw UsageError("reduce_mean is composed; unreachable");
    case Op::kGatherRows: {
      if (Tensor* da = parent_grad(0))
        for (size_t r = 0; r < n.indices.size(); ++r)
          for (long j = 0; j < g.cols(); ++j)
            da->at(n.indices[r], j) += g.at(static_cast<long>(r), j);
      break;
    }
    case Op::kGatherCols: {
      if (Tensor* da = parent_grad(0))
        for (size_t c = 0; c < n.indices.size(); ++c)
          for (long i = 0; i < g.rows(); ++i)
            da->at(i, n.indices[c]) += g.at(i, static_cast<long>(c));
      break;
    }
    case Op::kConcatRows: {
      long r0 = 0;
      for (size_t k = 0; k < n.parents.size(); ++k) {
        const long pr = value(n.parents[k]).rows();
        if (Tensor* dp = parent_grad(static_cast<int>(k)))
          for (long i = 0; i < pr; ++i)
            for (long j = 0; j < g.cols(); ++j) dp->at(i, j) += g.at(r0 + i, j);
        r0 += pr;
      }
      break;
    }
    case Op::kConcatCols: {
      long c0 = 0;
      for (size_t k = 0; k < n.parents.size(); ++k) {
        const long pc = value(n.parents[k]).cols();
        if (Tensor* dp = parent_grad(static_cast<int>(k)))
          for (long i = 0; i < g.rows(); ++i)
            for (long j = 0; j < pc; ++j) dp->at(i, j) += g.at(i, c0 + j);
        c0 += pc;
      }
      break;
    }
    case Op::kScatterRows: {
      if (Tensor* da = parent_grad(0))
        for (size_t r = 0; r < n.indices.size(); ++r)
          for (long j = 0; j < g.cols(); ++j)
            da->at(static_cast<long>(r), j) += g.at(n.indices[r], j);
      break;
    }
    case Op::kCrossEntropy: {
      Tensor* da = parent_grad(0);
      if (!da) break;
      const Tensor& z = value(n.parents[0]);
      const double gv = g.at(0) / static_cast<double>(z.rows());
      for (long i = 0; i < z.rows(); ++i) {
        double mx = z.at(i, 0);
        for (long j = 1; j < z.cols(); ++j) mx = std::max(mx, z.at(i, j));
        double se = 0.0;
        for (long j = 0; j < z.cols(); ++j) se += std::exp(z.at(i, j) - mx);
        for (long j = 0; j < z.cols(); ++j) {
          const double p = std::exp(z.at(i, j) - mx) / se;
          const double y = j == n.labels[static_cast<size_t>(i)] ? 1.0 : 0.0;
          da->at(i, j) += gv * (p - y);
        }
      }
      break;
    }
    case Op::kCvSquared: {
      Tensor* da = parent_grad(0);
      if (!da) break;
      const Tensor& x = value(n.parents[0]);
      const long k = x.numel();
      double mean = 0.0, sq = 0.0;
      for (long i = 0; i < k; ++i) {
        mean += x.at(i);
        sq += x.at(i) * x.at(i);
      }
      mean /= static_cast<double>(k);
      sq /= static_cast<double>(k);
      const double gv = g.at(0);
      const double coef = 2.0 / (static_cast<double>(k) * mean * mean);
      for (long i = 0; i < k; ++i)
        da->at(i) += gv * coef * (x.at(i) - sq / mean);
      break;
    }
  }
}

}  // namespace softmoe
