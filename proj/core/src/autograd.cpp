#include "recdenoise/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace recdenoise {

namespace {

constexpr double kLogFloor = 1e-12;

[[noreturn]] void shape_fail(std::string_view op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_to_string(a) + " and " + shape_to_string(b));
}

Tape& same_tape(Var a, Var b, std::string_view op) {
  if (a.tape == nullptr || a.tape != b.tape) {
    throw std::invalid_argument(std::string(op) + ": operands live on different tapes");
  }
  return *a.tape;
}

const Tensor& val(const Tape& t, std::size_t id) { return t.value(Var{const_cast<Tape*>(&t), id}); }

// C(m,n) += A(m,k) * B(k,n)
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C(m,k) += A(m,n) * B(k,n)^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = b + p * n;
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += arow[j] * brow[j];
      c[i * k + p] += s;
    }
  }
}

// C(k,n) += A(m,k)^T * B(m,n)
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      double* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// Elementwise op whose derivative is a function of (x, y).
template <typename Fwd, typename Deriv>
Var unary(Var a, OpKind kind, Fwd fwd, Deriv deriv) {
  const Tensor& av = a.value();
  Tensor out(av.shape(), 0.0);
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
  const std::size_t ia = a.id;
  return a.tape->record(kind, std::move(out), {ia}, [ia, deriv](Tape& t, std::size_t self, const Tensor& g) {
    const Tensor& x = val(t, ia);
    const Tensor& y = val(t, self);
    Tensor& d = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * deriv(x[i], y[i]);
  });
}

Var add_or_sub(Var a, Var b, double sign, OpKind kind, std::string_view name) {
  Tape& tape = same_tape(a, b, name);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (!is_suffix_shape(av.shape(), bv.shape())) shape_fail(name, av.shape(), bv.shape());
  Tensor out = av;
  const std::size_t period = bv.size();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += sign * bv[i % period];
  const std::size_t ia = a.id, ib = b.id;
  return tape.record(kind, std::move(out), {ia, ib}, [ia, ib, sign, period](Tape& t, std::size_t, const Tensor& g) {
    if (t.requires_grad(ia)) {
      Tensor& d = t.grad_buffer(ia);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    }
    if (t.requires_grad(ib)) {
      Tensor& d = t.grad_buffer(ib);
      for (std::size_t i = 0; i < g.size(); ++i) d[i % period] += sign * g[i];
    }
  });
}

}  // namespace

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kConstant: return "constant";
    case OpKind::kMatMul: return "matmul";
    case OpKind::kTranspose: return "transpose";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMultiply: return "multiply";
    case OpKind::kScale: return "scale";
    case OpKind::kSoftmaxRows: return "softmax-rows";
    case OpKind::kRelu: return "relu";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kLog: return "log";
    case OpKind::kGather: return "embedding-gather";
    case OpKind::kRowSelect: return "row-select";
    case OpKind::kMaskedFill: return "masked-fill";
    case OpKind::kReduceSum: return "reduce-sum";
    case OpKind::kSumLast: return "sum-last";
    case OpKind::kLayerNorm: return "layer-norm";
    case OpKind::kSplitHeads: return "split-heads";
    case OpKind::kMergeHeads: return "merge-heads";
  }
  return "unknown";
}

const Tensor& Var::value() const { return tape->value(*this); }

Var Tape::make(OpKind kind, Tensor value, bool requires_grad) {
  Node node;
  node.kind = kind;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Var Tape::parameter(Tensor value) { return make(OpKind::kLeaf, std::move(value), true); }

Var Tape::constant(Tensor value) { return make(OpKind::kConstant, std::move(value), false); }

Var Tape::record(OpKind kind, Tensor value, std::vector<std::size_t> inputs, BackwardFn fn) {
  bool needs = false;
  if (grad_enabled_) {
    for (auto id : inputs) needs = needs || nodes_[id].requires_grad;
  }
  Var out = make(kind, std::move(value), needs);
  nodes_.back().inputs = std::move(inputs);
  if (needs) nodes_.back().backward = std::move(fn);
  return out;
}

Tensor& Tape::grad_buffer(std::size_t id) {
  Node& node = nodes_[id];
  if (node.grad.empty()) node.grad = Tensor(node.value.shape(), 0.0);
  return node.grad;
}

void Tape::backward(Var output) {
  if (output.tape != this) throw std::invalid_argument("backward: output belongs to another tape");
  const Tensor& out = nodes_.at(output.id).value;
  if (out.size() != 1) {
    throw ShapeError("backward: output must be a 1-element tensor, got shape " + shape_to_string(out.shape()));
  }
  for (auto& node : nodes_) node.grad = Tensor();
  grad_buffer(output.id)[0] = 1.0;
  last_visits_ = 0;
  for (std::size_t i = output.id + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.backward || node.grad.empty()) continue;
    node.backward(*this, i, node.grad);
    ++last_visits_;
  }
}

Tensor Tape::gradient(Var v) const {
  const Node& node = nodes_.at(v.id);
  if (node.grad.empty()) return Tensor(node.value.shape(), 0.0);
  return node.grad;
}

// ---------------------------------------------------------------------------

Var matmul(Var a, Var b) {
  Tape& tape = same_tape(a, b, "matmul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() < 2 || bv.rank() < 2) shape_fail("matmul", av.shape(), bv.shape());
  const std::size_t ia = a.id, ib = b.id;

  if (bv.rank() == 2) {
    const std::size_t k = av.cols();
    const std::size_t m = av.rows();
    const std::size_t n = bv.cols();
    if (bv.dim(0) != k) shape_fail("matmul", av.shape(), bv.shape());
    Shape out_shape = av.shape();
    out_shape.back() = n;
    Tensor out(out_shape, 0.0);
    gemm_nn(av.data().data(), bv.data().data(), out.data().data(), m, k, n);
    return tape.record(OpKind::kMatMul, std::move(out), {ia, ib}, [ia, ib, m, k, n](Tape& t, std::size_t, const Tensor& g) {
      if (t.requires_grad(ia)) gemm_nt(g.data().data(), val(t, ib).data().data(), t.grad_buffer(ia).data().data(), m, n, k);
      if (t.requires_grad(ib)) gemm_tn(val(t, ia).data().data(), g.data().data(), t.grad_buffer(ib).data().data(), m, k, n);
    });
  }

  if (av.rank() != 3 || bv.rank() != 3 || av.dim(0) != bv.dim(0) || av.dim(2) != bv.dim(1)) {
    shape_fail("matmul", av.shape(), bv.shape());
  }
  const std::size_t batch = av.dim(0), m = av.dim(1), k = av.dim(2), n = bv.dim(2);
  Tensor out({batch, m, n}, 0.0);
  for (std::size_t s = 0; s < batch; ++s) {
    gemm_nn(av.data().data() + s * m * k, bv.data().data() + s * k * n, out.data().data() + s * m * n, m, k, n);
  }
  return tape.record(OpKind::kMatMul, std::move(out), {ia, ib}, [ia, ib, batch, m, k, n](Tape& t, std::size_t, const Tensor& g) {
    const Tensor& A = val(t, ia);
    const Tensor& B = val(t, ib);
    const bool ga = t.requires_grad(ia), gb = t.requires_grad(ib);
    double* da = ga ? t.grad_buffer(ia).data().data() : nullptr;
    double* db = gb ? t.grad_buffer(ib).data().data() : nullptr;
    for (std::size_t s = 0; s < batch; ++s) {
      const double* gs = g.data().data() + s * m * n;
      if (ga) gemm_nt(gs, B.data().data() + s * k * n, da + s * m * k, m, n, k);
      if (gb) gemm_tn(A.data().data() + s * m * k, gs, db + s * k * n, m, k, n);
    }
  });
}

Var transpose(Var a) {
  const Tensor& av = a.value();
  if (av.rank() != 2 && av.rank() != 3) {
    throw ShapeError("transpose: expected rank 2 or 3, got " + shape_to_string(av.shape()));
  }
  const std::size_t batch = av.rank() == 3 ? av.dim(0) : 1;
  const std::size_t r = av.dim(av.rank() - 2), c = av.dim(av.rank() - 1);
  Shape out_shape = av.shape();
  std::swap(out_shape[out_shape.size() - 2], out_shape[out_shape.size() - 1]);
  Tensor out(out_shape, 0.0);
  for (std::size_t s = 0; s < batch; ++s) {
    const double* src = av.data().data() + s * r * c;
    double* dst = out.data().data() + s * r * c;
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) dst[j * r + i] = src[i * c + j];
  }
  const std::size_t ia = a.id;
  return a.tape->record(OpKind::kTranspose, std::move(out), {ia}, [ia, batch, r, c](Tape& t, std::size_t, const Tensor& g) {
    double* d = t.grad_buffer(ia).data().data();
    for (std::size_t s = 0; s < batch; ++s) {
      const double* gs = g.data().data() + s * r * c;
      double* ds = d + s * r * c;
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) ds[i * c + j] += gs[j * r + i];
    }
  });
}

Var add(Var a, Var b) { return add_or_sub(a, b, 1.0, OpKind::kAdd, "add"); }
Var sub(Var a, Var b) { return add_or_sub(a, b, -1.0, OpKind::kSub, "sub"); }

Var multiply(Var a, Var b) {
  Tape& tape = same_tape(a, b, "multiply");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (!is_suffix_shape(av.shape(), bv.shape())) shape_fail("multiply", av.shape(), bv.shape());
  Tensor out = av;
  const std::size_t period = bv.size();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i % period];
  const std::size_t ia = a.id, ib = b.id;
  return tape.record(OpKind::kMultiply, std::move(out), {ia, ib}, [ia, ib, period](Tape& t, std::size_t, const Tensor& g) {
    const Tensor& A = val(t, ia);
    const Tensor& B = val(t, ib);
    if (t.requires_grad(ia)) {
      Tensor& d = t.grad_buffer(ia);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * B[i % period];
    }
    if (t.requires_grad(ib)) {
      Tensor& d = t.grad_buffer(ib);
      for (std::size_t i = 0; i < g.size(); ++i) d[i % period] += g[i] * A[i];
    }
  });
}

Var scale(Var a, double factor) {
  return unary(
      a, OpKind::kScale, [factor](double x) { return factor * x; }, [factor](double, double) { return factor; });
}

Var relu(Var a) {
  return unary(
      a, OpKind::kRelu, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(Var a) {
  return unary(
      a, OpKind::kSigmoid,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var log(Var a) {
  return unary(
      a, OpKind::kLog, [](double x) { return std::log(std::max(x, kLogFloor)); },
      [](double x, double) { return x > kLogFloor ? 1.0 / x : 0.0; });
}

Var softmax_rows(Var a) {
  const Tensor& av = a.value();
  const std::size_t rows = av.rows(), cols = av.cols();
  Tensor out(av.shape(), 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = av.data().data() + r * cols;
    double* y = out.data().data() + r * cols;
    const double mx = *std::max_element(x, x + cols);
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      y[c] = std::exp(x[c] - mx);
      total += y[c];
    }
    for (std::size_t c = 0; c < cols; ++c) y[c] /= total;
  }
  const std::size_t ia = a.id;
  return a.tape->record(OpKind::kSoftmaxRows, std::move(out), {ia}, [ia, rows, cols](Tape& t, std::size_t self, const Tensor& g) {
    const Tensor& y = val(t, self);
    Tensor& d = t.grad_buffer(ia);
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t off = r * cols;
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += g[off + c] * y[off + c];
      for (std::size_t c = 0; c < cols; ++c) d[off + c] += y[off + c] * (g[off + c] - dot);
    }
  });
}

Var gather(Var table, std::span<const int> ids, std::optional<int> padding_idx) {
  const Tensor& tv = table.value();
  if (tv.rank() != 2) throw ShapeError("embedding-gather: table must be rank 2, got " + shape_to_string(tv.shape()));
  if (ids.empty()) throw ShapeError("embedding-gather: empty id list");
  const std::size_t vocab = tv.dim(0), width = tv.dim(1);
  Tensor out({ids.size(), width}, 0.0);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw std::out_of_range("embedding-gather: id " + std::to_string(ids[i]) + " outside [0," +
                              std::to_string(vocab) + ")");
    }
    std::copy_n(tv.data().data() + static_cast<std::size_t>(ids[i]) * width, width, out.data().data() + i * width);
  }
  const std::size_t it = table.id;
  std::vector<int> saved(ids.begin(), ids.end());
  return table.tape->record(OpKind::kGather, std::move(out), {it},
                            [it, saved = std::move(saved), width, padding_idx](Tape& t, std::size_t, const Tensor& g) {
                              Tensor& d = t.grad_buffer(it);
                              for (std::size_t i = 0; i < saved.size(); ++i) {
                                if (padding_idx && saved[i] == *padding_idx) continue;
                                double* row = d.data().data() + static_cast<std::size_t>(saved[i]) * width;
                                const double* gr = g.data().data() + i * width;
                                for (std::size_t c = 0; c < width; ++c) row[c] += gr[c];
                              }
                            });
}

Var row_select(Var a, std::span<const std::size_t> rows) {
  const Tensor& av = a.value();
  if (av.rank() != 2) throw ShapeError("row-select: expected rank 2, got " + shape_to_string(av.shape()));
  if (rows.empty()) throw ShapeError("row-select: empty row list");
  const std::size_t width = av.cols();
  Tensor out({rows.size(), width}, 0.0);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= av.dim(0)) throw std::out_of_range("row-select: row " + std::to_string(rows[i]) + " out of range");
    std::copy_n(av.data().data() + rows[i] * width, width, out.data().data() + i * width);
  }
  const std::size_t ia = a.id;
  std::vector<std::size_t> saved(rows.begin(), rows.end());
  return a.tape->record(OpKind::kRowSelect, std::move(out), {ia},
                        [ia, saved = std::move(saved), width](Tape& t, std::size_t, const Tensor& g) {
                          Tensor& d = t.grad_buffer(ia);
                          for (std::size_t i = 0; i < saved.size(); ++i) {
                            for (std::size_t c = 0; c < width; ++c) d[saved[i] * width + c] += g[i * width + c];
                          }
                        });
}

Var masked_fill(Var a, const Tensor& keep, double fill) {
  const Tensor& av = a.value();
  if (!is_suffix_shape(av.shape(), keep.shape())) shape_fail("masked-fill", av.shape(), keep.shape());
  Tensor out = av;
  const std::size_t period = keep.size();
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (keep[i % period] == 0.0) out[i] = fill;
  }
  const std::size_t ia = a.id;
  return a.tape->record(OpKind::kMaskedFill, std::move(out), {ia}, [ia, keep, period](Tape& t, std::size_t, const Tensor& g) {
    Tensor& d = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (keep[i % period] != 0.0) d[i] += g[i];
    }
  });
}

Var reduce_sum(Var a) {
  const Tensor& av = a.value();
  double total = 0.0;
  for (double v : av.data()) total += v;
  const std::size_t ia = a.id;
  return a.tape->record(OpKind::kReduceSum, Tensor::scalar(total), {ia}, [ia](Tape& t, std::size_t, const Tensor& g) {
    Tensor& d = t.grad_buffer(ia);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[0];
  });
}

Var sum_last(Var a) {
  const Tensor& av = a.value();
  const std::size_t rows = av.rows(), cols = av.cols();
  Shape out_shape(av.shape().begin(), av.shape().end() - 1);
  if (out_shape.empty()) out_shape = {1};
  Tensor out(out_shape, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += av[r * cols + c];
    out[r] = s;
  }
  const std::size_t ia = a.id;
  return a.tape->record(OpKind::kSumLast, std::move(out), {ia}, [ia, rows, cols](Tape& t, std::size_t, const Tensor& g) {
    Tensor& d = t.grad_buffer(ia);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) d[r * cols + c] += g[r];
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  Tape& tape = same_tape(x, gain, "layer-norm");
  same_tape(x, bias, "layer-norm");
  const Tensor& xv = x.value();
  const std::size_t rows = xv.rows(), cols = xv.cols();
  if (gain.value().shape() != Shape{cols} || bias.value().shape() != Shape{cols}) {
    shape_fail("layer-norm", xv.shape(), gain.value().shape());
  }
  const Tensor& gv = gain.value();
  const Tensor& bv = bias.value();
  Tensor out(xv.shape(), 0.0);
  // Saved per-row normalized input and inverse std for backward.
  Tensor xhat(xv.shape(), 0.0);
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data().data() + r * cols;
    double mean = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mean += xr[c];
    mean /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) var += (xr[c] - mean) * (xr[c] - mean);
    var /= static_cast<double>(cols);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < cols; ++c) {
      const double h = (xr[c] - mean) * inv_std[r];
      xhat[r * cols + c] = h;
      out[r * cols + c] = gv[c] * h + bv[c];
    }
  }
  const std::size_t ix = x.id, ig = gain.id, ib = bias.id;
  return tape.record(
      OpKind::kLayerNorm, std::move(out), {ix, ig, ib},
      [ix, ig, ib, rows, cols, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, std::size_t, const Tensor& g) {
        const Tensor& gv = val(t, ig);
        if (t.requires_grad(ig)) {
          Tensor& d = t.grad_buffer(ig);
          for (std::size_t i = 0; i < g.size(); ++i) d[i % cols] += g[i] * xhat[i];
        }
        if (t.requires_grad(ib)) {
          Tensor& d = t.grad_buffer(ib);
          for (std::size_t i = 0; i < g.size(); ++i) d[i % cols] += g[i];
        }
        if (t.requires_grad(ix)) {
          Tensor& d = t.grad_buffer(ix);
          const double inv_c = 1.0 / static_cast<double>(cols);
          for (std::size_t r = 0; r < rows; ++r) {
            const std::size_t off = r * cols;
            double mean_dh = 0.0, mean_dh_h = 0.0;
            for (std::size_t c = 0; c < cols; ++c) {
              const double dh = g[off + c] * gv[c];
              mean_dh += dh;
              mean_dh_h += dh * xhat[off + c];
            }
            mean_dh *= inv_c;
            mean_dh_h *= inv_c;
            for (std::size_t c = 0; c < cols; ++c) {
              const double dh = g[off + c] * gv[c];
              d[off + c] += inv_std[r] * (dh - mean_dh - xhat[off + c] * mean_dh_h);
            }
          }
        }
      });
}

namespace {

// Index of element (b, t, h, j) in the (B*n, H*dh) layout and in the
// (H*B, n, dh) layout.
struct HeadLayout {
  std::size_t batch, seq, heads, head_dim;
  std::size_t flat(std::size_t b, std::size_t t, std::size_t h, std::size_t j) const {
    return (b * seq + t) * heads * head_dim + h * head_dim + j;
  }
  std::size_t split(std::size_t b, std::size_t t, std::size_t h, std::size_t j) const {
    return ((h * batch + b) * seq + t) * head_dim + j;
  }
};

}  // namespace

Var split_heads(Var x, std::size_t batch, std::size_t heads) {
  const Tensor& xv = x.value();
  if (xv.rank() != 2 || batch == 0 || heads == 0 || xv.dim(0) % batch != 0 || xv.dim(1) % heads != 0) {
    throw ShapeError("split-heads: cannot split " + shape_to_string(xv.shape()) + " into batch " +
                     std::to_string(batch) + " x heads " + std::to_string(heads));
  }
  const HeadLayout lay{batch, xv.dim(0) / batch, heads, xv.dim(1) / heads};
  Tensor out({heads * batch, lay.seq, lay.head_dim}, 0.0);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < lay.seq; ++t)
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t j = 0; j < lay.head_dim; ++j) out[lay.split(b, t, h, j)] = xv[lay.flat(b, t, h, j)];
  const std::size_t ix = x.id;
  return x.tape->record(OpKind::kSplitHeads, std::move(out), {ix}, [ix, lay](Tape& t, std::size_t, const Tensor& g) {
    Tensor& d = t.grad_buffer(ix);
    for (std::size_t b = 0; b < lay.batch; ++b)
      for (std::size_t s = 0; s < lay.seq; ++s)
        for (std::size_t h = 0; h < lay.heads; ++h)
          for (std::size_t j = 0; j < lay.head_dim; ++j) d[lay.flat(b, s, h, j)] += g[lay.split(b, s, h, j)];
  });
}

Var merge_heads(Var x, std::size_t batch, std::size_t heads) {
  const Tensor& xv = x.value();
  if (xv.rank() != 3 || batch == 0 || heads == 0 || xv.dim(0) != batch * heads) {
    throw ShapeError("merge-heads: cannot merge " + shape_to_string(xv.shape()) + " with batch " +
                     std::to_string(batch) + " x heads " + std::to_string(heads));
  }
  const HeadLayout lay{batch, xv.dim(1), heads, xv.dim(2)};
  Tensor out({batch * lay.seq, heads * lay.head_dim}, 0.0);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < lay.seq; ++t)
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t j = 0; j < lay.head_dim; ++j) out[lay.flat(b, t, h, j)] = xv[lay.split(b, t, h, j)];
  const std::size_t ix = x.id;
  return x.tape->record(OpKind::kMergeHeads, std::move(out), {ix}, [ix, lay](Tape& t, std::size_t, const Tensor& g) {
    Tensor& d = t.grad_buffer(ix);
    for (std::size_t b = 0; b < lay.batch; ++b)
      for (std::size_t s = 0; s < lay.seq; ++s)
        for (std::size_t h = 0; h < lay.heads; ++h)
          for (std::size_t j = 0; j < lay.head_dim; ++j) d[lay.split(b, s, h, j)] += g[lay.flat(b, s, h, j)];
  });
}

}  // namespace recdenoise
