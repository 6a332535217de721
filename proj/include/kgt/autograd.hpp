#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "kgt/tensor.hpp"

namespace kgt {

template <class T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  std::string name;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(const Tensor<T>& grad_out)> backward;

  /// Gradient storage, zero-filled on first touch.
  Tensor<T>& grad_buffer() {
    if (grad.shape() != value.shape()) grad = Tensor<T>(value.shape());
    return grad;
  }
};

namespace detail {
inline thread_local int no_grad_depth = 0;
}

/// Disables graph recording on this thread while alive.
class NoGradGuard {
 public:
  NoGradGuard() { ++detail::no_grad_depth; }
  ~NoGradGuard() { --detail::no_grad_depth; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

inline bool grad_enabled() { return detail::no_grad_depth == 0; }

/// Handle to a node in the reverse-mode tape. Copies share the node.
template <class T>
class Var {
 public:
  Var() : node_(std::make_shared<Node<T>>()) {}

  explicit Var(Tensor<T> value, bool requires_grad = false, std::string name = {})
      : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
    node_->name = std::move(name);
  }

  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  const Tensor<T>& value() const { return node_->value; }
  /// Direct access for optimizers and loaders; leaves only.
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t dim(std::size_t i) const { return node_->value.dim(i); }
  std::size_t rank() const { return node_->value.rank(); }
  bool requires_grad() const { return node_->requires_grad; }
  const std::string& name() const { return node_->name; }
  const Tensor<T>& grad() const { return node_->grad_buffer(); }
  Tensor<T>& mutable_grad() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad_buffer().fill(T{0}); }
  const std::shared_ptr<Node<T>>& node() const { return node_; }

  /// Fresh leaf holding a copy of the value, cut from the tape.
  Var detach() const { return Var(node_->value, false, node_->name); }

  /// Reverse sweep from a single-element output, seeding d(out)/d(out) = 1.
  void backward() const;

 private:
  std::shared_ptr<Node<T>> node_;
};

/// A named trainable leaf. `value`, `grad` and `name` live on the node.
template <class T>
Var<T> make_parameter(std::string name, Tensor<T> value) {
  return Var<T>(std::move(value), true, std::move(name));
}

/// Records an operation result. The closure runs only when some input needs a gradient.
template <class T>
Var<T> record(Tensor<T> out, std::initializer_list<Var<T>> inputs,
              std::function<void(const Tensor<T>&)> backward, const char* op) {
  if (!out.all_finite()) {
    throw NumericError(std::string("non-finite value produced by ") + op);
  }
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(out);
  if (grad_enabled()) {
    for (const auto& in : inputs) {
      if (in.requires_grad()) {
        node->requires_grad = true;
        break;
      }
    }
    if (node->requires_grad) {
      for (const auto& in : inputs) {
        if (in.requires_grad()) node->parents.push_back(in.node());
      }
      node->backward = std::move(backward);
    }
  }
  return Var<T>(std::move(node));
}

template <class T>
void Var<T>::backward() const {
  if (node_->value.numel() != 1) {
    throw DimensionError("backward() needs a single-element output, got " +
                         to_string(node_->value.shape()));
  }
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order without recursion depth limits.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node<T>* p = n->parents[next++].get();
      if (seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->grad_buffer()[0] += T{1};
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward && n->grad.shape() == n->value.shape()) n->backward(n->grad);
  }
}

/// Accumulate `g` into the gradient of `target` when it is tracked.
template <class T>
inline void accumulate(const std::shared_ptr<Node<T>>& target, const Tensor<T>& g) {
  if (!target->requires_grad) return;
  auto& buf = target->grad_buffer();
  T* dst = buf.ptr();
  const T* src = g.ptr();
  for (std::size_t i = 0; i < buf.numel(); ++i) dst[i] += src[i];
}

}  // namespace kgt
