#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "recdenoise/tensor.hpp"

namespace recdenoise {

class Tape;

enum class OpKind {
  kLeaf,
  kConstant,
  kMatMul,
  kTranspose,
  kAdd,
  kSub,
  kMultiply,
  kScale,
  kSoftmaxRows,
  kRelu,
  kSigmoid,
  kLog,
  kGather,
  kRowSelect,
  kMaskedFill,
  kReduceSum,
  kSumLast,
  kLayerNorm,
  kSplitHeads,
  kMergeHeads,
};

std::string_view op_name(OpKind kind);

/// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
/// tape is alive.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// Reverse-mode gradient tape over the fixed op set below.
///
/// Nodes are appended in evaluation order, which is a topological order, so
/// backward() is a single reverse sweep. A tape is single-threaded.
class Tape {
 public:
  /// Receives the tape, the id of the node being differentiated, and that
  /// node's accumulated output gradient.
  using BackwardFn = std::function<void(Tape&, std::size_t self, const Tensor& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var parameter(Tensor value);
  Var constant(Tensor value);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  OpKind kind(Var v) const { return nodes_.at(v.id).kind; }
  const std::vector<std::size_t>& inputs(Var v) const { return nodes_.at(v.id).inputs; }
  std::size_t size() const { return nodes_.size(); }

  /// Seeds d(output)/d(output) = 1 and sweeps the tape backwards. Gradients
  /// from a previous call are discarded first.
  void backward(Var output);

  /// Gradient of the last backward() output w.r.t. `v`; zeros when `v` was
  /// not on the path.
  Tensor gradient(Var v) const;

  /// When disabled, new nodes keep their values but record no backward
  /// closures (forward-only evaluation).
  void set_grad_enabled(bool enabled) { grad_enabled_ = enabled; }
  bool grad_enabled() const { return grad_enabled_; }

  /// Number of backward closures executed by the last backward().
  std::size_t last_backward_visits() const { return last_visits_; }

  // Used by op implementations.
  Var record(OpKind kind, Tensor value, std::vector<std::size_t> inputs, BackwardFn fn);
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  Tensor& grad_buffer(std::size_t id);

 private:
  struct Node {
    OpKind kind;
    Tensor value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    Tensor grad;
  };

  Var make(OpKind kind, Tensor value, bool requires_grad);

  std::vector<Node> nodes_;
  bool grad_enabled_ = true;
  std::size_t last_visits_ = 0;
};

// ---------------------------------------------------------------------------
// Op set. Broadcasting is limited to "suffix" broadcasting: the second
// operand's shape must equal the trailing extents of the first.

/// (m,k)x(k,n), (..,m,k)x(k,n) (rows folded), or (B,m,k)x(B,k,n).
Var matmul(Var a, Var b);
/// Swaps the last two axes (rank 2 or 3).
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var multiply(Var a, Var b);
Var scale(Var a, double factor);
/// Softmax over the last axis; computed with row-max subtraction.
Var softmax_rows(Var a);
Var relu(Var a);
Var sigmoid(Var a);
/// log(max(x, 1e-12)); the gradient is zero where the guard is active.
Var log(Var a);
/// Rows of `table` (V x d) at `ids`. Rows whose id equals `padding_idx`
/// receive no gradient.
Var gather(Var table, std::span<const int> ids, std::optional<int> padding_idx = std::nullopt);
/// Rows of a 2-D tensor.
Var row_select(Var a, std::span<const std::size_t> rows);
/// keep != 0 ? a : fill, with `keep` suffix-broadcast over `a`.
Var masked_fill(Var a, const Tensor& keep, double fill);
/// Sum of all entries; returns shape {1}.
Var reduce_sum(Var a);
/// Sum over the last axis.
Var sum_last(Var a);
/// Normalizes each row over the last axis, then applies gain and bias (each
/// of length cols).
Var layer_norm(Var x, Var gain, Var bias, double eps);
/// (B*n, H*dh) -> (H*B, n, dh), head-major so that an (n,n) mask broadcasts
/// as a suffix over the attention scores.
Var split_heads(Var x, std::size_t batch, std::size_t heads);
/// Inverse of split_heads.
Var merge_heads(Var x, std::size_t batch, std::size_t heads);

}  // namespace recdenoise
