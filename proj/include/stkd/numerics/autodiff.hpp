#pragma once

// Tape-free reverse-mode differentiation over dense tensors. Every operation
// returns a Var that owns its value and, when any input requires a gradient,
// a closure that pushes its output gradient into the inputs. backward() walks
// the recorded graph in reverse topological order.

#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "stkd/errors.hpp"
#include "stkd/numerics/tensor.hpp"

namespace stkd::num {

namespace detail {

struct GradMode {
  bool enabled = true;
#ifdef NDEBUG
  bool check_finite = false;
#else
  bool check_finite = true;
#endif
};

inline GradMode& grad_mode() {
  thread_local GradMode mode;
  return mode;
}

}  // namespace detail

/// Disables graph recording in the current scope (inference, evaluation).
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode().enabled) { detail::grad_mode().enabled = false; }
  ~NoGradGuard() { detail::grad_mode().enabled = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

/// Turns NaN/Inf detection after every op on or off in the current scope.
class FiniteCheckGuard {
 public:
  explicit FiniteCheckGuard(bool on) : prev_(detail::grad_mode().check_finite) {
    detail::grad_mode().check_finite = on;
  }
  ~FiniteCheckGuard() { detail::grad_mode().check_finite = prev_; }
  FiniteCheckGuard(const FiniteCheckGuard&) = delete;
  FiniteCheckGuard& operator=(const FiniteCheckGuard&) = delete;

 private:
  bool prev_;
};

inline bool grad_enabled() { return detail::grad_mode().enabled; }
inline bool finite_checks_enabled() { return detail::grad_mode().check_finite; }

template <class T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  Tensor<T>& ensure_grad() {
    if (grad.empty()) grad = Tensor<T>(value.shape());
    return grad;
  }
};

template <class T>
class Var {
 public:
  using NodePtr = std::shared_ptr<Node<T>>;

  Var() = default;
  explicit Var(NodePtr node) : node_(std::move(node)) {}

  static Var constant(Tensor<T> value) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    return Var(std::move(n));
  }

  static Var parameter(Tensor<T> value) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->requires_grad = true;
    return Var(std::move(n));
  }

  bool defined() const noexcept { return node_ != nullptr; }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t rows() const { return node_->value.rows(); }
  std::size_t cols() const { return node_->value.cols(); }
  T item() const { return node_->value.item(); }

  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  /// Gradient buffer; allocated (zero) on first access.
  Tensor<T>& grad() { return node_->ensure_grad(); }
  const Tensor<T>& grad() const { return node_->ensure_grad(); }
  void zero_grad() {
    if (!node_->grad.empty()) node_->grad.fill(T(0));
  }
  const char* op() const { return node_->op; }

  Node<T>* node() const noexcept { return node_.get(); }
  const NodePtr& ptr() const noexcept { return node_; }

 private:
  NodePtr node_;
};

/// Builds the result node of an op. `backward` runs only for nodes reached by
/// backward(); it must accumulate into parents whose requires_grad is set.
template <class T>
Var<T> make_result(const char* op, Tensor<T> value, std::vector<Var<T>> inputs,
                   std::function<void(Node<T>&)> backward) {
  if (finite_checks_enabled() && !value.all_finite())
    throw NumericalError(op, "non-finite value in output " + shape_str(value.shape()));
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->op = op;
  if (grad_enabled()) {
    bool any = false;
    for (auto& in : inputs) any = any || in.requires_grad();
    if (any) {
      n->requires_grad = true;
      n->parents.reserve(inputs.size());
      for (auto& in : inputs) n->parents.push_back(in.ptr());
      n->backward_fn = std::move(backward);
    }
  }
  return Var<T>(std::move(n));
}

/// Reverse sweep from a scalar (or seeded) output. Gradients accumulate into
/// every reachable node that requires one, parameters included.
template <class T>
void backward(const Var<T>& root, T seed = T(1)) {
  if (!root.requires_grad()) return;
  if (root.value().size() != 1) throw std::invalid_argument("backward() needs a scalar root");
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  // Iterative post-order DFS.
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.node(), 0}};
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root.node()->ensure_grad()[0] += seed;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward_fn && !n->grad.empty()) {
      n->backward_fn(*n);
      if (finite_checks_enabled())
        for (auto& p : n->parents)
          if (p->requires_grad && !p->grad.empty() && !p->grad.all_finite())
            throw NumericalError(n->op, "non-finite gradient during backward");
    }
  }
}

}  // namespace stkd::num
