#include "trident/diff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_map>
#include <utility>

#include "trident/kernels.hpp"

namespace trident {

namespace {

thread_local bool t_grad_mode = true;

using IndexVec = std::shared_ptr<const std::vector<std::size_t>>;

Var input(const Var& self, std::size_t i) { return Var(self.node()->inputs[i]); }

// ---------------------------------------------------------------------------
// Raw array helpers

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  if (a.size() != b.size()) {
    throw ShapeError(std::string(op) + ": rank mismatch between " + shape_to_string(a) + " and " + shape_to_string(b));
  }
  Shape out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] == b[i] || b[i] == 1) {
      out[i] = a[i];
    } else if (a[i] == 1) {
      out[i] = b[i];
    } else {
      throw ShapeError(std::string(op) + ": cannot broadcast " + shape_to_string(a) + " with " + shape_to_string(b));
    }
  }
  return out;
}

// Row-major strides of `in` seen through the output shape (0 on broadcast axes).
std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
  std::vector<std::size_t> strides(out.size(), 0);
  std::size_t s = 1;
  for (std::size_t i = in.size(); i-- > 0;) {
    strides[i] = (in[i] == out[i] && in[i] != 1) ? s : 0;
    s *= in[i];
  }
  return strides;
}

// Calls f(out_index, a_offset, b_offset) for every output element. Adjacent
// axes that are contiguous (or broadcast) for both operands are merged first
// so the inner loop is as long as possible.
template <class F>
void for_each_broadcast(const Shape& out_shape, const Shape& a, const Shape& b, F&& f) {
  const std::size_t n = shape_numel(out_shape);
  if (n == 0) return;
  if (out_shape.empty()) {
    f(0, 0, 0);
    return;
  }
  const auto sa_full = broadcast_strides(a, out_shape);
  const auto sb_full = broadcast_strides(b, out_shape);
  Shape out;
  std::vector<std::size_t> sa, sb;
  for (std::size_t ax = 0; ax < out_shape.size(); ++ax) {
    if (out_shape[ax] == 1) continue;
    if (!out.empty() && sa.back() == sa_full[ax] * out_shape[ax] && sb.back() == sb_full[ax] * out_shape[ax]) {
      out.back() *= out_shape[ax];
      sa.back() = sa_full[ax];
      sb.back() = sb_full[ax];
      continue;
    }
    out.push_back(out_shape[ax]);
    sa.push_back(sa_full[ax]);
    sb.push_back(sb_full[ax]);
  }
  if (out.empty()) {
    f(0, 0, 0);
    return;
  }
  const std::size_t rank = out.size();
  const std::size_t inner = out[rank - 1];
  const std::size_t ia = sa[rank - 1], ib = sb[rank - 1];
  std::vector<std::size_t> idx(rank, 0);
  std::size_t oa = 0, ob = 0;
  for (std::size_t base = 0; base < n; base += inner) {
    if (ia == 1 && ib == 1) {
      for (std::size_t j = 0; j < inner; ++j) f(base + j, oa + j, ob + j);
    } else if (ia == 1 && ib == 0) {
      for (std::size_t j = 0; j < inner; ++j) f(base + j, oa + j, ob);
    } else if (ia == 0 && ib == 1) {
      for (std::size_t j = 0; j < inner; ++j) f(base + j, oa, ob + j);
    } else {
      for (std::size_t j = 0; j < inner; ++j) f(base + j, oa + j * ia, ob + j * ib);
    }
    // advance the odometer over the outer axes
    for (std::size_t ax = rank - 1; ax-- > 0;) {
      ++idx[ax];
      oa += sa[ax];
      ob += sb[ax];
      if (idx[ax] < out[ax]) break;
      oa -= sa[ax] * out[ax];
      ob -= sb[ax] * out[ax];
      idx[ax] = 0;
    }
  }
}

template <class F>
NdArray binary_op(const NdArray& a, const NdArray& b, F f, const char* op) {
  if (a.shape() == b.shape()) {
    NdArray out(a.shape());
    const std::size_t n = a.size();
    const double* pa = a.raw();
    const double* pb = b.raw();
    double* po = out.raw();
#pragma omp parallel for if (n > (1u << 16)) schedule(static)
    for (std::size_t i = 0; i < n; ++i) po[i] = f(pa[i], pb[i]);
    return out;
  }
  NdArray out(broadcast_shape(a.shape(), b.shape(), op));
  const double* pa = a.raw();
  const double* pb = b.raw();
  double* po = out.raw();
  for_each_broadcast(out.shape(), a.shape(), b.shape(),
                     [&](std::size_t o, std::size_t ia, std::size_t ib) { po[o] = f(pa[ia], pb[ib]); });
  return out;
}

template <class F>
NdArray unary_op(const NdArray& a, F f) {
  NdArray out(a.shape());
  const std::size_t n = a.size();
  const double* pa = a.raw();
  double* po = out.raw();
#pragma omp parallel for if (n > (1u << 16)) schedule(static)
  for (std::size_t i = 0; i < n; ++i) po[i] = f(pa[i]);
  return out;
}

void check_reducible(const Shape& from, const Shape& to, const char* op) {
  bool ok = from.size() == to.size();
  for (std::size_t i = 0; ok && i < from.size(); ++i) ok = (to[i] == from[i] || to[i] == 1);
  if (!ok) throw ShapeError(std::string(op) + ": " + shape_to_string(from) + " is not compatible with " + shape_to_string(to));
}

NdArray reduce_to(const NdArray& a, const Shape& shape) {
  NdArray out(shape);
  const double* pa = a.raw();
  double* po = out.raw();
  for_each_broadcast(a.shape(), shape, a.shape(),
                     [&](std::size_t i, std::size_t oo, std::size_t) { po[oo] += pa[i]; });
  return out;
}

NdArray expand_to(const NdArray& a, const Shape& shape) {
  NdArray out(shape);
  const double* pa = a.raw();
  double* po = out.raw();
  for_each_broadcast(shape, a.shape(), shape, [&](std::size_t o, std::size_t ia, std::size_t) { po[o] = pa[ia]; });
  return out;
}

Shape ones_shape(std::size_t rank) { return Shape(rank, 1); }

kernels::ConvGeometry conv_geometry(const Shape& x, const Shape& w, const char* op) {
  if (x.size() != 4 || w.size() != 4) {
    throw ShapeError(std::string(op) + ": expected rank-4 input and weight, got " + shape_to_string(x) + " and " +
                     shape_to_string(w));
  }
  if (w[1] != x[1] || w[2] != w[3] || w[2] % 2 == 0) {
    throw ShapeError(std::string(op) + ": input " + shape_to_string(x) + " does not match weight " + shape_to_string(w) +
                     " (need weight [O, C_in, k, k] with odd k)");
  }
  kernels::ConvGeometry g;
  g.batch = x[0];
  g.in_channels = x[1];
  g.height = x[2];
  g.width = x[3];
  g.out_channels = w[0];
  g.ksize = w[2];
  return g;
}

}  // namespace

// ---------------------------------------------------------------------------
// Var / grad mode

Var::Var(NdArray value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

bool grad_mode_enabled() noexcept { return t_grad_mode; }

GradModeGuard::GradModeGuard(bool enabled) : previous_(t_grad_mode) { t_grad_mode = enabled; }
GradModeGuard::~GradModeGuard() { t_grad_mode = previous_; }

Var record(const char* op, NdArray value, std::vector<Var> inputs, BackwardFn backward) {
  if (finite_checks_enabled() && !value.all_finite()) {
    throw NumericalError(std::string(op) + ": produced a non-finite value");
  }
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = op;
  bool needs_grad = false;
  if (t_grad_mode) {
    for (const auto& v : inputs) needs_grad = needs_grad || v.requires_grad();
  }
  if (needs_grad) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (auto& v : inputs) node->inputs.push_back(v.node_ptr());
    node->backward = std::move(backward);
  }
  return Var(std::move(node));
}

// ---------------------------------------------------------------------------
// Differentiation

std::vector<Var> grad(const Var& root, std::span<const Var> wrt, bool create_graph) {
  if (root.size() != 1) {
    throw ShapeError("grad: root must be a scalar, got shape " + shape_to_string(root.shape()));
  }
  std::unordered_map<const Node*, std::size_t> wrt_slot;
  for (std::size_t i = 0; i < wrt.size(); ++i) wrt_slot.emplace(wrt[i].node(), i);

  // Post-order over nodes that require grad. `relevant` marks nodes lying on a
  // path from the root to some wrt node; everything else is pruned.
  enum : std::uint8_t { kOpen = 1, kDone = 2 };
  std::unordered_map<const Node*, std::uint8_t> state;
  std::unordered_map<const Node*, bool> relevant;
  std::vector<Node*> order;
  if (root.requires_grad()) {
    std::vector<std::pair<Node*, std::size_t>> stack{{root.node(), 0}};
    state[root.node()] = kOpen;
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->inputs.size()) {
        Node* child = node->inputs[next++].get();
        if (!child->requires_grad) continue;
        auto it = state.find(child);
        if (it == state.end()) {
          state[child] = kOpen;
          stack.emplace_back(child, 0);
        } else if (it->second == kOpen) {
          throw std::logic_error("grad: cycle detected in the computation graph at op '" + std::string(child->op) + "'");
        }
        continue;
      }
      bool rel = wrt_slot.count(node) > 0;
      for (const auto& in : node->inputs) {
        auto r = relevant.find(in.get());
        rel = rel || (r != relevant.end() && r->second);
      }
      relevant[node] = rel;
      state[node] = kDone;
      order.push_back(node);
      stack.pop_back();
    }
  }

  std::vector<Var> result(wrt.size());
  GradModeGuard mode(create_graph);
  std::unordered_map<const Node*, Var> grads;
  if (!order.empty()) grads[root.node()] = constant(NdArray(root.shape(), 1.0));

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (!relevant[node]) continue;
    auto g_it = grads.find(node);
    if (g_it == grads.end()) continue;
    Var g = std::move(g_it->second);
    grads.erase(g_it);
    if (auto w = wrt_slot.find(node); w != wrt_slot.end()) result[w->second] = g;
    if (!node->backward) continue;

    std::vector<bool> needs(node->inputs.size(), false);
    bool any = false;
    for (std::size_t i = 0; i < needs.size(); ++i) {
      const Node* in = node->inputs[i].get();
      needs[i] = in->requires_grad && relevant[in];
      any = any || needs[i];
    }
    if (!any) continue;
    auto input_grads = node->backward(Var(node->shared_from_this()), g, needs);
    for (std::size_t i = 0; i < needs.size(); ++i) {
      if (!needs[i]) continue;
      const Node* in = node->inputs[i].get();
      auto [slot, inserted] = grads.try_emplace(in, input_grads[i]);
      if (!inserted) slot->second = add(slot->second, input_grads[i]);
    }
  }

  for (std::size_t i = 0; i < wrt.size(); ++i) {
    if (!result[i].defined()) result[i] = constant(NdArray(wrt[i].shape(), 0.0));
  }
  return result;
}

void backward(const Var& root) {
  std::vector<Var> leaves;
  std::unordered_map<const Node*, bool> seen;
  std::vector<Node*> stack;
  if (root.requires_grad()) stack.push_back(root.node());
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    if (!seen.emplace(n, true).second) continue;
    if (!n->backward) {
      leaves.emplace_back(n->shared_from_this());
      continue;
    }
    for (const auto& in : n->inputs)
      if (in->requires_grad) stack.push_back(in.get());
  }
  auto grads = grad(root, leaves, false);
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    Node* n = leaves[i].node();
    if (n->grad.empty()) {
      n->grad = grads[i].value();
    } else {
      auto& dst = n->grad.storage();
      const auto src = grads[i].value().data();
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
    }
  }
}

// ---------------------------------------------------------------------------
// Elementwise

Var add(const Var& a, const Var& b) {
  return record("add", binary_op(a.value(), b.value(), [](double x, double y) { return x + y; }, "add"), {a, b},
                [](const Var& self, const Var& g, const std::vector<bool>& needs) -> std::vector<Var> {
                  return {needs[0] ? sum_to(g, input(self, 0).shape()) : Var(),
                          needs[1] ? sum_to(g, input(self, 1).shape()) : Var()};
                });
}

Var sub(const Var& a, const Var& b) {
  return record("sub", binary_op(a.value(), b.value(), [](double x, double y) { return x - y; }, "sub"), {a, b},
                [](const Var& self, const Var& g, const std::vector<bool>& needs) -> std::vector<Var> {
                  return {needs[0] ? sum_to(g, input(self, 0).shape()) : Var(),
                          needs[1] ? neg(sum_to(g, input(self, 1).shape())) : Var()};
                });
}

Var mul(const Var& a, const Var& b) {
  return record("mul", binary_op(a.value(), b.value(), [](double x, double y) { return x * y; }, "mul"), {a, b},
                [](const Var& self, const Var& g, const std::vector<bool>& needs) -> std::vector<Var> {
                  const Var x = input(self, 0), y = input(self, 1);
                  return {needs[0] ? sum_to(mul(g, y), x.shape()) : Var(), needs[1] ? sum_to(mul(g, x), y.shape()) : Var()};
                });
}

Var div(const Var& a, const Var& b) {
  return record("div", binary_op(a.value(), b.value(), [](double x, double y) { return x / y; }, "div"), {a, b},
                [](const Var& self, const Var& g, const std::vector<bool>& needs) -> std::vector<Var> {
                  const Var x = input(self, 0), y = input(self, 1);
                  return {needs[0] ? sum_to(div(g, y), x.shape()) : Var(),
                          needs[1] ? neg(sum_to(div(mul(g, self), y), y.shape())) : Var()};
                });
}

Var neg(const Var& a) {
  return record("neg", unary_op(a.value(), [](double x) { return -x; }), {a},
                [](const Var&, const Var& g, const std::vector<bool>&) -> std::vector<Var> { return {neg(g)}; });
}

Var scale(const Var& a, double s) {
  return record("scale", unary_op(a.value(), [s](double x) { return s * x; }), {a},
                [s](const Var&, const Var& g, const std::vector<bool>&) -> std::vector<Var> { return {scale(g, s)}; });
}

Var add_scalar(const Var& a, double s) {
  return record("add_scalar", unary_op(a.value(), [s](double x) { return x + s; }), {a},
                [](const Var&, const Var& g, const std::vector<bool>&) -> std::vector<Var> { return {g}; });
}

Var exp(const Var& a) {
  return record("exp", unary_op(a.value(), [](double x) { return std::exp(x); }), {a},
                [](const Var& self, const Var& g, const std::vector<bool>&) -> std::vector<Var> { return {mul(g, self)}; });
}

Var log(const Var& a) {
  return record("log", unary_op(a.value(), [](double x) { return std::log(x); }), {a},
                [](const Var& self, const Var& g, const std::vector<bool>&) -> std::vector<Var> {
                  return {div(g, input(self, 0))};
                });
}

Var pow_scalar(const Var& a, double p) {
  return record("pow", unary_op(a.value(), [p](double x) { return std::pow(x, p); }), {a},
                [p](const Var& self, const Var& g, const std::vector<bool>&) -> std::vector<Var> {
                  return {mul(g, scale(pow_scalar(input(self, 0), p - 1.0), p))};
                });
}

Var square(const Var& a) { return mul(a, a); }

Var leaky_relu(const Var& a, double slope) {
  // select through max/min keeps the loop branch-free
  const bool gentle = slope <= 1.0;
  auto fwd = [slope, gentle](double x) { return gentle ? std::max(x, slope * x) : std::min(x, slope * x); };
  return record("leaky_relu", unary_op(a.value(), fwd), {a},
                [slope](const Var& self, const Var& g, const std::vector<bool>&) -> std::vector<Var> {
                  auto mask = unary_op(input(self, 0).value(), [slope](double x) { return slope + (1.0 - slope) * double(x >= 0.0); });
                  return {mul(g, constant(std::move(mask)))};
                });
}

Var clamp_min(const Var& a, double lo) {
  return record("clamp_min", unary_op(a.value(), [lo](double x) { return std::max(x, lo); }), {a},
                [lo](const Var& self, const Var& g, const std::vector<bool>&) -> std::vector<Var> {
                  auto mask = unary_op(input(self, 0).value(), [lo](double x) { return double(x >= lo); });
                  return {mul(g, constant(std::move(mask)))};
                });
}

// ---------------------------------------------------------------------------
// Shape and reduction

Var sum(const Var& a) {
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  return record("sum", NdArray::scalar(total), {a},
                [](const Var& self, const Var& g, const std::vector<bool>&) -> std::vector<Var> {
                  const Var x = input(self, 0);
                  return {broadcast_to(reshape(g, ones_shape(x.rank())), x.shape())};
                });
}

Var mean(const Var& a) { return scale(sum(a), 1.0 / double(std::max<std::size_t>(a.size(), 1))); }

Var sum_to(const Var& a, const Shape& shape) {
  if (a.shape() == shape) return a;
  check_reducible(a.shape(), shape, "sum_to");
  return record("sum_to", reduce_to(a.value(), shape), {a},
                [](const Var& self, const Var& g, const std::vector<bool>&) -> std::vector<Var> {
                  return {broadcast_to(g, input(self, 0).shape())};
                });
}

Var broadcast_to(const Var& a, const Shape& shape) {
  if (a.shape() == shape) return a;
  check_reducible(shape, a.shape(), "broadcast_to");
  return record("broadcast_to", expand_to(a.value(), shape), {a},
                [](const Var& self, const Var& g, const std::vector<bool>&) -> std::vector<Var> {
                  return {sum_to(g, input(self, 0).shape())};
                });
}

Var reshape(const Var& a, const Shape& shape) {
  if (a.shape() == shape) return a;
  return record("reshape", a.value().reshaped(shape), {a},
                [](const Var& self, const Var& g, const std::vector<bool>&) -> std::vector<Var> {
                  return {reshape(g, input(self, 0).shape())};
                });
}

Var flatten(const Var& a) {
  if (a.rank() < 1) throw ShapeError("flatten: needs rank >= 1");
  return reshape(a, {a.dim(0), a.size() / std::max<std::size_t>(a.dim(0), 1)});
}

Var gather(const Var& a, Shape out_shape, IndexVec index) {
  if (index->size() != shape_numel(out_shape)) throw ShapeError("gather: index count does not match output shape");
  NdArray out(std::move(out_shape));
  const double* pa = a.value().raw();
  const auto n = a.size();
  double* po = out.raw();
  const auto& idx = *index;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= n) throw std::out_of_range("gather: index out of range");
    po[i] = pa[idx[i]];
  }
  return record("gather", std::move(out), {a},
                [index](const Var& self, const Var& g, const std::vector<bool>&) -> std::vector<Var> {
                  return {scatter_add(g, input(self, 0).shape(), index)};
                });
}

Var scatter_add(const Var& a, Shape out_shape, IndexVec index) {
  if (index->size() != a.size()) throw ShapeError("scatter_add: index count does not match input size");
  NdArray out(std::move(out_shape));
  const double* pa = a.value().raw();
  double* po = out.raw();
  const auto& idx = *index;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= out.size()) throw std::out_of_range("scatter_add: index out of range");
    po[idx[i]] += pa[i];
  }
  return record("scatter_add", std::move(out), {a},
                [index](const Var& self, const Var& g, const std::vector<bool>&) -> std::vector<Var> {
                  return {gather(g, input(self, 0).shape(), index)};
                });
}

Var swap01(const Var& a) {
  if (a.rank() != 4) throw ShapeError("swap01: expected rank 4, got " + shape_to_string(a.shape()));
  const std::size_t d0 = a.dim(0), d1 = a.dim(1), inner = a.dim(2) * a.dim(3);
  auto index = std::make_shared<std::vector<std::size_t>>(a.size());
  std::size_t o = 0;
  for (std::size_t j = 0; j < d1; ++j)
    for (std::size_t i = 0; i < d0; ++i)
      for (std::size_t k = 0; k < inner; ++k) (*index)[o++] = (i * d1 + j) * inner + k;
  return gather(a, {d1, d0, a.dim(2), a.dim(3)}, std::move(index));
}

Var slice0(const Var& a, std::size_t start, std::size_t count) {
  if (a.rank() < 1 || start + count > a.dim(0)) {
    throw ShapeError("slice0: rows [" + std::to_string(start) + ", " + std::to_string(start + count) +
                     ") out of range for " + shape_to_string(a.shape()));
  }
  Shape out_shape = a.shape();
  out_shape[0] = count;
  const std::size_t row = a.size() / std::max<std::size_t>(a.dim(0), 1);
  auto index = std::make_shared<std::vector<std::size_t>>(count * row);
  for (std::size_t i = 0; i < index->size(); ++i) (*index)[i] = start * row + i;
  return gather(a, std::move(out_shape), std::move(index));
}

Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Shape out_shape = parts[0].shape();
  if (axis >= out_shape.size()) throw ShapeError("concat: axis out of range");
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    if (p.rank() != out_shape.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t d = 0; d < p.rank(); ++d) {
      if (d != axis && p.dim(d) != out_shape[d]) {
        throw ShapeError("concat: " + shape_to_string(p.shape()) + " does not match " + shape_to_string(parts[0].shape()) +
                         " off axis " + std::to_string(axis));
      }
    }
    out_shape[axis] += p.dim(axis);
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= out_shape[d];
  for (std::size_t d = axis + 1; d < out_shape.size(); ++d) inner *= out_shape[d];
  Var result;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t len = p.dim(axis);
    auto index = std::make_shared<std::vector<std::size_t>>(p.size());
    std::size_t i = 0;
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t k = 0; k < len; ++k)
        for (std::size_t m = 0; m < inner; ++m) (*index)[i++] = (o * out_shape[axis] + offset + k) * inner + m;
    Var placed = scatter_add(p, out_shape, std::move(index));
    result = result.defined() ? add(result, placed) : placed;
    offset += len;
  }
  return result;
}

// ---------------------------------------------------------------------------
// Linear algebra

Var matmul(const Var& a, const Var& b, bool trans_a, bool trans_b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw ShapeError("matmul: expected rank-2 operands, got " + shape_to_string(a.shape()) + " and " + shape_to_string(b.shape()));
  }
  const std::size_t m = trans_a ? a.dim(1) : a.dim(0);
  const std::size_t k = trans_a ? a.dim(0) : a.dim(1);
  const std::size_t kb = trans_b ? b.dim(1) : b.dim(0);
  const std::size_t n = trans_b ? b.dim(0) : b.dim(1);
  if (k != kb) {
    throw ShapeError("matmul: inner extents disagree between " + shape_to_string(a.shape()) + " and " +
                     shape_to_string(b.shape()));
  }
  NdArray out({m, n});
  kernels::matmul(a.value().data(), b.value().data(), out.data(), m, k, n, trans_a, trans_b);
  return record("matmul", std::move(out), {a, b},
                [trans_a, trans_b](const Var& self, const Var& g, const std::vector<bool>& needs) -> std::vector<Var> {
                  const Var x = input(self, 0), y = input(self, 1);
                  Var ga, gb;
                  if (!trans_a && !trans_b) {
                    if (needs[0]) ga = matmul(g, y, false, true);
                    if (needs[1]) gb = matmul(x, g, true, false);
                  } else if (trans_a && !trans_b) {
                    if (needs[0]) ga = matmul(y, g, false, true);
                    if (needs[1]) gb = matmul(x, g, false, false);
                  } else if (!trans_a && trans_b) {
                    if (needs[0]) ga = matmul(g, y, false, false);
                    if (needs[1]) gb = matmul(g, x, true, false);
                  } else {
                    if (needs[0]) ga = matmul(y, g, true, true);
                    if (needs[1]) gb = matmul(g, x, true, true);
                  }
                  return {ga, gb};
                });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  if (x.rank() != 2 || weight.rank() != 2 || bias.rank() != 1 || x.dim(1) != weight.dim(1) || bias.dim(0) != weight.dim(0)) {
    throw ShapeError("linear: input " + shape_to_string(x.shape()) + ", weight " + shape_to_string(weight.shape()) +
                     ", bias " + shape_to_string(bias.shape()) + " do not agree");
  }
  return add(matmul(x, weight, false, true), reshape(bias, {1, bias.dim(0)}));
}

// ---------------------------------------------------------------------------
// Convolution family

Var conv2d(const Var& x, const Var& weight) {
  const auto g = conv_geometry(x.shape(), weight.shape(), "conv2d");
  NdArray out({g.batch, g.out_channels, g.height, g.width});
  kernels::conv2d_forward(x.value().data(), weight.value().data(), out.data(), g);
  return record("conv2d", std::move(out), {x, weight},
                [](const Var& self, const Var& gy, const std::vector<bool>& needs) -> std::vector<Var> {
                  const Var in = input(self, 0), w = input(self, 1);
                  return {needs[0] ? conv2d_input_grad(gy, w, in.shape()) : Var(),
                          needs[1] ? conv2d_weight_grad(in, gy, w.shape()) : Var()};
                });
}

Var conv2d(const Var& x, const Var& weight, const Var& bias) {
  if (bias.rank() != 1 || bias.dim(0) != weight.dim(0)) {
    throw ShapeError("conv2d: bias " + shape_to_string(bias.shape()) + " does not match weight " + shape_to_string(weight.shape()));
  }
  return add(conv2d(x, weight), reshape(bias, {1, bias.dim(0), 1, 1}));
}

Var conv1x1(const Var& x, const Var& weight) {
  if (weight.rank() != 4 || weight.dim(2) != 1 || weight.dim(3) != 1) {
    throw ShapeError("conv1x1: weight must be [O, C, 1, 1], got " + shape_to_string(weight.shape()));
  }
  return conv2d(x, weight);
}

Var conv2d_input_grad(const Var& grad_out, const Var& weight, const Shape& input_shape) {
  const auto g = conv_geometry(input_shape, weight.shape(), "conv2d_input_grad");
  NdArray out(input_shape);
  kernels::conv2d_backward_input(grad_out.value().data(), weight.value().data(), out.data(), g);
  return record("conv2d_input_grad", std::move(out), {grad_out, weight},
                [](const Var& self, const Var& gg, const std::vector<bool>& needs) -> std::vector<Var> {
                  const Var gy = input(self, 0), w = input(self, 1);
                  return {needs[0] ? conv2d(gg, w) : Var(), needs[1] ? conv2d_weight_grad(gg, gy, w.shape()) : Var()};
                });
}

Var conv2d_weight_grad(const Var& x, const Var& grad_out, const Shape& weight_shape) {
  const auto g = conv_geometry(x.shape(), weight_shape, "conv2d_weight_grad");
  NdArray out(weight_shape);
  kernels::conv2d_backward_weight(x.value().data(), grad_out.value().data(), out.data(), g);
  return record("conv2d_weight_grad", std::move(out), {x, grad_out},
                [](const Var& self, const Var& gg, const std::vector<bool>& needs) -> std::vector<Var> {
                  const Var in = input(self, 0), gy = input(self, 1);
                  return {needs[0] ? conv2d_input_grad(gy, gg, in.shape()) : Var(), needs[1] ? conv2d(in, gg) : Var()};
                });
}

// ---------------------------------------------------------------------------
// Network ops

Var batchnorm2d(const Var& x, const Var& gamma, const Var& beta, double eps) {
  if (x.rank() != 4) throw ShapeError("batchnorm2d: expected [B,C,H,W], got " + shape_to_string(x.shape()));
  const std::size_t c = x.dim(1);
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c}) {
    throw ShapeError("batchnorm2d: gamma " + shape_to_string(gamma.shape()) + " / beta " + shape_to_string(beta.shape()) +
                     " do not match " + std::to_string(c) + " channels");
  }
  const std::size_t m = x.dim(0) * x.dim(2) * x.dim(3);
  if (m < 2) throw ShapeError("batchnorm2d: need at least 2 values per channel, got B*H*W = " + std::to_string(m));
  const Shape per_channel{1, c, 1, 1};
  const Var centered = x - scale(sum_to(x, per_channel), 1.0 / double(m));
  const Var var = scale(sum_to(square(centered), per_channel), 1.0 / double(m));
  const Var inv_std = pow_scalar(add_scalar(var, eps), -0.5);
  return centered * (inv_std * reshape(gamma, per_channel)) + reshape(beta, per_channel);
}

Var maxpool2(const Var& x) {
  if (x.rank() != 4) throw ShapeError("maxpool2: expected [B,C,H,W], got " + shape_to_string(x.shape()));
  const std::size_t h = x.dim(2), w = x.dim(3);
  if (h < 2 || w < 2) throw ShapeError("maxpool2: spatial extent " + shape_to_string(x.shape()) + " is below 2x2");
  const std::size_t planes = x.dim(0) * x.dim(1), oh = h / 2, ow = w / 2;
  auto index = std::make_shared<std::vector<std::size_t>>(planes * oh * ow);
  const double* px = x.value().raw();
  std::size_t o = 0;
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        const std::size_t base = p * h * w + 2 * i * w + 2 * j;
        const std::size_t cand[4] = {base, base + 1, base + w, base + w + 1};
        std::size_t best = cand[0];
        for (int k = 1; k < 4; ++k)
          if (px[cand[k]] > px[best]) best = cand[k];
        (*index)[o++] = best;
      }
  return gather(x, {x.dim(0), x.dim(1), oh, ow}, std::move(index));
}

Var upsample_to(const Var& x, std::size_t height, std::size_t width) {
  if (x.rank() != 4) throw ShapeError("upsample_to: expected [B,C,H,W], got " + shape_to_string(x.shape()));
  const std::size_t h = x.dim(2), w = x.dim(3);
  if (height < h || width < w) {
    throw ShapeError("upsample_to: target " + std::to_string(height) + "x" + std::to_string(width) + " shrinks " +
                     shape_to_string(x.shape()));
  }
  const std::size_t planes = x.dim(0) * x.dim(1);
  auto index = std::make_shared<std::vector<std::size_t>>(planes * height * width);
  std::size_t o = 0;
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t i = 0; i < height; ++i)
      for (std::size_t j = 0; j < width; ++j) (*index)[o++] = p * h * w + (i * h / height) * w + (j * w / width);
  return gather(x, {x.dim(0), x.dim(1), height, width}, std::move(index));
}

Var softmax(const Var& x) {
  if (x.rank() < 1) throw ShapeError("softmax: needs rank >= 1");
  Shape reduced = x.shape();
  const std::size_t n = reduced.back();
  reduced.back() = 1;
  // Row maxima are treated as constants; softmax is invariant to the shift.
  NdArray row_max(reduced, -std::numeric_limits<double>::infinity());
  const double* px = x.value().raw();
  for (std::size_t r = 0; r < row_max.size(); ++r)
    for (std::size_t j = 0; j < n; ++j) row_max[r] = std::max(row_max[r], px[r * n + j]);
  const Var e = exp(x - constant(std::move(row_max)));
  return e / sum_to(e, reduced);
}

}  // namespace trident
