#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace aasist {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::string out = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(shape[i]);
  }
  return out + ")";
}

namespace detail {

struct Node;
using BackwardFn = std::function<void(Node&)>;

// One vertex of the autodiff graph. `backward` reads this node's grad and
// accumulates into the grads of `inputs`.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;

  std::vector<double>& ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

inline bool grad_enabled() { return detail::grad_mode_flag(); }

/// Shared handle to a row-major array of doubles that may take part in
/// reverse-mode differentiation. Copies alias the same storage.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0) : node_(std::make_shared<detail::Node>()) {
    node_->value.assign(shape_size(shape), fill);
    node_->shape = std::move(shape);
  }

  Tensor(Shape shape, std::vector<double> values) : node_(std::make_shared<detail::Node>()) {
    if (shape_size(shape) != values.size()) {
      throw ShapeError("tensor data length " + std::to_string(values.size()) +
                       " does not match shape " + shape_str(shape));
    }
    node_->shape = std::move(shape);
    node_->value = std::move(values);
  }

  static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

  static Tensor parameter(Shape shape, std::vector<double> values) {
    Tensor t(std::move(shape), std::move(values));
    t.set_requires_grad(true);
    return t;
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t size() const { return node_->value.size(); }

  std::span<const double> data() const { return node_->value; }
  std::span<double> mutable_data() { return node_->value; }
  const std::vector<double>& values() const { return node_->value; }

  double item() const {
    if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
  }
  double operator[](std::size_t i) const { return node_->value[i]; }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  /// Gradient store; all zeros until a backward pass reaches this tensor.
  std::span<const double> grad() const { return node_->ensure_grad(); }
  std::span<double> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }

  /// New leaf holding a copy of the values.
  Tensor detach() const { return Tensor(shape(), node_->value); }

  const char* op_name() const { return node_->op; }

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Builds an op result. When grad mode is on and any input requires grad, the
/// result records `backward` and its inputs on the graph. Non-finite outputs
/// throw NumericError.
inline Tensor make_op(const char* name, Shape shape, std::vector<double> values,
                      const std::vector<Tensor>& inputs, detail::BackwardFn backward) {
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite value produced by ") + name);
  }
  Tensor out(std::move(shape), std::move(values));
  out.node()->op = name;
  if (!grad_enabled()) return out;
  bool needs = false;
  for (const Tensor& t : inputs) needs = needs || t.requires_grad();
  if (!needs) return out;
  out.node()->requires_grad = true;
  out.node()->backward = std::move(backward);
  for (const Tensor& t : inputs) out.node()->inputs.push_back(t.node_ptr());
  return out;
}

/// Grad buffer of the i-th recorded input, or nullptr when that input does not
/// take part in differentiation.
inline double* input_grad(detail::Node& out, std::size_t i) {
  detail::Node& in = *out.inputs[i];
  if (!in.requires_grad) return nullptr;
  return in.ensure_grad().data();
}

inline const std::vector<double>& input_value(const detail::Node& out, std::size_t i) {
  return out.inputs[i]->value;
}

/// Recorded operations in topological order (inputs before consumers), built
/// from a root by depth-first traversal.
class Tape {
 public:
  static Tape record(const Tensor& root) {
    Tape tape;
    if (!root.requires_grad()) return tape;
    std::unordered_set<const detail::Node*> seen;
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(root.node(), 0);
    seen.insert(root.node());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->inputs.size()) {
        detail::Node* child = node->inputs[next++].get();
        if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
      } else {
        tape.order_.push_back(node);
        stack.pop_back();
      }
    }
    return tape;
  }

  std::size_t size() const { return order_.size(); }
  bool empty() const { return order_.empty(); }
  const std::vector<detail::Node*>& order() const { return order_; }

  /// Seeds the root (last entry) with d(root)/d(root) = 1 and replays every
  /// recorded backward rule once, consumers first. Interior grads are reset.
  void backward() const {
    if (order_.empty()) return;
    for (detail::Node* n : order_) {
      if (n->backward) n->grad.assign(n->value.size(), 0.0);
    }
    detail::Node* root = order_.back();
    root->ensure_grad().assign(root->value.size(), 1.0);
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
      if ((*it)->backward) (*it)->backward(**it);
    }
  }

 private:
  std::vector<detail::Node*> order_;
};

/// Populates grads on every requires_grad tensor reachable from `loss`.
inline void backward(const Tensor& loss) {
  if (loss.size() != 1) throw ShapeError("backward() needs a scalar loss, got " + shape_str(loss.shape()));
  Tape::record(loss).backward();
}

}  // namespace aasist
