#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "msgnet/errors.hpp"

namespace msgnet {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace detail {

struct Node {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;
  bool requires_grad = false;
  bool leaf = true;
  // Interior nodes only: set once gradient reached this node during a sweep.
  bool grad_active = false;

  float* grad_buffer() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0f);
    grad_active = true;
    return grad.data();
  }
};

using NodePtr = std::shared_ptr<Node>;

}  // namespace detail

// Dense row-major f32 array with an optional gradient buffer.
//
// Tensor is a shared handle: copies alias the same storage. Values are only
// changed through recorded ops, or explicitly on leaves (parameter updates).
class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<float> data, bool requires_grad = false)
      : node_(std::make_shared<detail::Node>()) {
    for (auto d : shape) {
      if (d <= 0) raise<ShapeError>("tensor extents must be positive, got ", shape_str(shape));
    }
    if (shape_numel(shape) != static_cast<std::int64_t>(data.size())) {
      raise<ShapeError>("shape ", shape_str(shape), " holds ", shape_numel(shape),
                        " values but ", data.size(), " were given");
    }
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    set_requires_grad(requires_grad);
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), 0.0f, requires_grad);
  }

  static Tensor full(Shape shape, float value, bool requires_grad = false) {
    const auto n = static_cast<std::size_t>(shape_numel(shape));
    return Tensor(std::move(shape), std::vector<float>(n, value), requires_grad);
  }

  static Tensor scalar(float value, bool requires_grad = false) {
    return Tensor({1}, {value}, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }

  const Shape& shape() const { return node_->shape; }
  int ndim() const { return static_cast<int>(node_->shape.size()); }
  std::int64_t dim(int i) const {
    const int n = ndim();
    if (i < 0) i += n;
    if (i < 0 || i >= n) raise<ShapeError>("dimension index ", i, " out of range for rank ", n);
    return node_->shape[static_cast<std::size_t>(i)];
  }
  std::int64_t numel() const { return static_cast<std::int64_t>(node_->data.size()); }

  std::span<const float> data() const { return node_->data; }
  // Direct write access; intended for leaves (initialization, optimizer updates).
  std::span<float> mutable_data() { return node_->data; }

  const std::vector<float>& values() const { return node_->data; }

  float item() const {
    if (numel() != 1) raise<ShapeError>("item() requires a single-element tensor, got ", shape_str(shape()));
    return node_->data[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->leaf; }

  void set_requires_grad(bool flag) {
    node_->requires_grad = flag;
    if (flag) {
      node_->grad.assign(node_->data.size(), 0.0f);
    } else {
      node_->grad.clear();
    }
  }

  bool has_grad() const { return node_->grad.size() == node_->data.size() && !node_->grad.empty(); }
  std::span<const float> grad() const { return node_->grad; }
  std::span<float> mutable_grad() { return node_->grad; }

  void zero_grad() {
    if (node_->requires_grad) node_->grad.assign(node_->data.size(), 0.0f);
  }

  // Copy of the values with no gradient history.
  Tensor detach() const { return Tensor(shape(), node_->data, false); }

  const detail::NodePtr& node() const { return node_; }

 private:
  detail::NodePtr node_;
};

// Ordered record of differentiable operations for one define-by-run pass.
class Tape {
 public:
  using BackwardFn = std::function<void(std::span<const float> output_grad)>;

  struct Entry {
    std::string op;
    std::vector<detail::NodePtr> inputs;
    detail::NodePtr output;
    BackwardFn backward;
  };

  void record(std::string op, std::vector<detail::NodePtr> inputs, detail::NodePtr output,
              BackwardFn backward) {
    entries_.push_back({std::move(op), std::move(inputs), std::move(output), std::move(backward)});
  }

  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  void clear() { entries_.clear(); }

  static Tape*& active() {
    thread_local Tape default_tape;
    thread_local Tape* current = &default_tape;
    return current;
  }

  static Tape& current() { return *active(); }

 private:
  std::vector<Entry> entries_;
};

// Routes recording on this thread to `tape` for the guard's lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape) : previous_(Tape::active()) { Tape::active() = &tape; }
  ~TapeScope() { Tape::active() = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

namespace detail {
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode(); }

class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

inline void check_finite(std::span<const float> values, const char* op) {
  for (float v : values) {
    if (!std::isfinite(v)) raise<NumericError>(op, ": numeric overflow, output contains non-finite values");
  }
}

// Wraps freshly computed values as an op result and records the backward
// rule when any input needs gradient. `backward` receives the output gradient
// and accumulates into the inputs through grad_sink().
template <typename Backward>
Tensor make_result(const char* op, Shape shape, std::vector<float> data,
                   const std::vector<Tensor>& inputs, Backward&& backward) {
  check_finite(data, op);
  Tensor out(std::move(shape), std::move(data), false);
  if (!grad_enabled()) return out;
  bool needs = false;
  for (const auto& t : inputs) needs = needs || t.requires_grad();
  if (!needs) return out;
  auto& node = *out.node();
  node.requires_grad = true;
  node.leaf = false;
  node.grad.assign(node.data.size(), 0.0f);
  std::vector<NodePtr> ins;
  ins.reserve(inputs.size());
  for (const auto& t : inputs) ins.push_back(t.node());
  Tape::current().record(op, std::move(ins), out.node(), std::forward<Backward>(backward));
  return out;
}

// Gradient buffer of `t` if it participates in differentiation, else nullptr.
inline float* grad_sink(const Tensor& t) {
  if (!t.requires_grad()) return nullptr;
  return t.node()->grad_buffer();
}

}  // namespace detail

// Reverse sweep over the active tape from a scalar root. Leaf gradients
// accumulate across calls; interior gradients are recomputed each call.
inline void backward(const Tensor& root) {
  if (!root.defined() || root.numel() != 1) {
    raise<ShapeError>("backward requires a scalar root, got ",
                      root.defined() ? shape_str(root.shape()) : std::string("undefined"));
  }
  Tape& tape = Tape::current();
  if (tape.empty()) raise<Error>("backward called on an empty tape");
  if (!root.requires_grad()) raise<Error>("backward root does not depend on any tensor requiring grad");

  const auto& entries = tape.entries();
  for (const auto& e : entries) {
    std::fill(e.output->grad.begin(), e.output->grad.end(), 0.0f);
    e.output->grad_active = false;
  }
  root.node()->grad_buffer()[0] += 1.0f;
  for (auto it = entries.rbegin(); it != entries.rend(); ++it) {
    if (!it->output->grad_active) continue;
    it->backward(it->output->grad);
  }
}

}  // namespace msgnet
