#pragma once

// Reverse-mode automatic differentiation over NdArray values.
//
// Every op records a node holding its value, its inputs, and a backward rule.
// Backward rules are themselves written with the differentiable ops below, so
// running `grad(..., create_graph = true)` records the gradient computation
// and the result can be differentiated again (gradients through inner
// gradient steps).

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <stdexcept>
#include <vector>

#include "trident/ndarray.hpp"

namespace trident {

class Var;
struct Node;

/// grad_out has the shape of the node's value; returns one gradient per input
/// (an undefined Var where `needs[i]` is false).
using BackwardFn = std::function<std::vector<Var>(const Var& self, const Var& grad_out, const std::vector<bool>& needs)>;

struct Node : std::enable_shared_from_this<Node> {
  NdArray value;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;
  bool requires_grad = false;
  NdArray grad;  // populated by backward(); empty until then
};

/// Handle to a node in the computation graph. Cheap to copy.
class Var {
 public:
  Var() = default;
  explicit Var(NdArray value, bool requires_grad = false);
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const NdArray& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t dim(std::size_t axis) const { return node_->value.dim(axis); }
  std::size_t rank() const { return node_->value.rank(); }
  std::size_t size() const { return node_->value.size(); }
  double item() const { return node_->value.item(); }
  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
  bool is_leaf() const noexcept { return node_ && !node_->backward; }
  const char* op_name() const { return node_->op; }

  /// In-place access for leaves (optimizer steps, initialization).
  NdArray& mutable_value() {
    if (!is_leaf()) throw std::logic_error("mutable_value: only leaf values may be edited in place");
    return node_->value;
  }

  /// Gradient slot written by backward(); empty array when not populated.
  const NdArray& grad() const { return node_->grad; }
  void zero_grad() { node_->grad = NdArray(); }

  /// Same value, cut from the graph.
  Var detach() const { return Var(node_->value, false); }

  Node* node() const noexcept { return node_.get(); }
  const std::shared_ptr<Node>& node_ptr() const noexcept { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

inline Var constant(NdArray value) { return Var(std::move(value), false); }
inline Var parameter(NdArray value) { return Var(std::move(value), true); }

// ---------------------------------------------------------------------------
// Grad mode

bool grad_mode_enabled() noexcept;

/// Scoped override of whether new ops are recorded.
class GradModeGuard {
 public:
  explicit GradModeGuard(bool enabled);
  ~GradModeGuard();
  GradModeGuard(const GradModeGuard&) = delete;
  GradModeGuard& operator=(const GradModeGuard&) = delete;

 private:
  bool previous_;
};

struct NoGradGuard : GradModeGuard {
  NoGradGuard() : GradModeGuard(false) {}
};

/// Record a result node. Used by the ops; exposed so tests can build a
/// deliberately wrong rule for the gradient-checker self test.
Var record(const char* op, NdArray value, std::vector<Var> inputs, BackwardFn backward);

// ---------------------------------------------------------------------------
// Differentiation

/// d root / d wrt[i] for scalar root. Entries are zero arrays for inputs the
/// root does not depend on. With create_graph the returned gradients are
/// themselves differentiable.
std::vector<Var> grad(const Var& root, std::span<const Var> wrt, bool create_graph = false);

/// Accumulate d root / d leaf into the gradient slot of every reachable leaf
/// that requires grad.
void backward(const Var& root);

// ---------------------------------------------------------------------------
// Elementwise (binary ops broadcast between equal-rank operands whose extents
// are equal or 1)

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var neg(const Var& a);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var exp(const Var& a);
Var log(const Var& a);
Var pow_scalar(const Var& a, double p);
Var square(const Var& a);
/// x if x >= 0 else slope * x; the subgradient at 0 is 1.
Var leaky_relu(const Var& a, double slope);
inline Var relu(const Var& a) { return leaky_relu(a, 0.0); }
Var clamp_min(const Var& a, double lo);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }
inline Var operator-(const Var& a) { return neg(a); }
inline Var operator*(const Var& a, double s) { return scale(a, s); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }
inline Var operator+(const Var& a, double s) { return add_scalar(a, s); }

// ---------------------------------------------------------------------------
// Shape and reduction

Var sum(const Var& a);   // rank-0 result
Var mean(const Var& a);  // rank-0 result
/// Reduce the axes where `shape` has extent 1 (same rank as a).
Var sum_to(const Var& a, const Shape& shape);
Var broadcast_to(const Var& a, const Shape& shape);
Var reshape(const Var& a, const Shape& shape);
/// Collapse all axes after the first: [B, ...] -> [B, prod(...)].
Var flatten(const Var& a);

/// out[i] = a[index[i]] for an output of shape `out_shape`.
Var gather(const Var& a, Shape out_shape, std::shared_ptr<const std::vector<std::size_t>> index);
/// out[index[i]] += a[i] into zeros of shape `out_shape`.
Var scatter_add(const Var& a, Shape out_shape, std::shared_ptr<const std::vector<std::size_t>> index);

/// Swap axes 0 and 1 of a rank-4 array.
Var swap01(const Var& a);
/// Rows [start, start + count) along axis 0.
Var slice0(const Var& a, std::size_t start, std::size_t count);
/// Concatenate along `axis`; all other extents must agree.
Var concat(const std::vector<Var>& parts, std::size_t axis);

// ---------------------------------------------------------------------------
// Linear algebra and network ops

/// op(a) * op(b) for rank-2 operands.
Var matmul(const Var& a, const Var& b, bool trans_a = false, bool trans_b = false);
/// x [B, D_in], weight [D_out, D_in], bias [D_out] -> [B, D_out]
Var linear(const Var& x, const Var& weight, const Var& bias);

/// Stride-1 convolution with padding ksize/2; x [B,C,H,W], weight [O,C,k,k] (k odd).
Var conv2d(const Var& x, const Var& weight);
/// conv2d plus per-channel bias [O].
Var conv2d(const Var& x, const Var& weight, const Var& bias);
/// 1x1 convolution without bias; weight [O, C, 1, 1].
Var conv1x1(const Var& x, const Var& weight);
/// Adjoints of conv2d, exposed because they are differentiable in turn.
Var conv2d_input_grad(const Var& grad_out, const Var& weight, const Shape& input_shape);
Var conv2d_weight_grad(const Var& x, const Var& grad_out, const Shape& weight_shape);

/// Per-channel standardization with the statistics of the current batch.
Var batchnorm2d(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
/// Non-overlapping 2x2 max pooling; odd trailing row/column dropped; ties go
/// to the first element in row-major order.
Var maxpool2(const Var& x);
/// Nearest-neighbour resize to (height, width): source index floor(i * H / H').
Var upsample_to(const Var& x, std::size_t height, std::size_t width);
/// Softmax along the last axis.
Var softmax(const Var& x);

}  // namespace trident
