#pragma once

#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "m3sr/tensor.hpp"

namespace m3sr {

// One vertex of the reverse-mode graph. `backward` reads `grad` and
// accumulates into the parents that require gradients.
template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  // Zero-initialized on first use.
  Tensor<T>& grad_buffer();
};

// Handle to a graph node. Copies share the node.
template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false);
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Var constant(Tensor<T> value) { return Var(std::move(value), false); }
  static Var leaf(Tensor<T> value) { return Var(std::move(value), true); }

  bool defined() const { return node_ != nullptr; }
  const Tensor<T>& value() const { return node_->value; }
  // Only optimizers and tests mutate leaf values, never during a pass.
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t dim(std::size_t axis) const { return node_->value.dim(axis); }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }

  bool has_grad() const { return !node_->grad.empty(); }
  // Gradient accumulated by backward(); zeros if none reached this node.
  Tensor<T> grad() const;
  void zero_grad() { node_->grad = Tensor<T>(); }

  // Reverse sweep from a scalar (one-element) root with seed 1.
  void backward() const;

  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

// While alive, ops on this thread record no graph.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_mode_enabled();

// Builds an op output. The backward closure is attached only when grad mode
// is on and some parent requires gradients.
template <typename T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> parents,
                   std::function<void(Node<T>&)> backward);

// Gradient buffer of a parent inside a backward closure, or nullptr when
// that parent does not take gradients.
template <typename T>
Tensor<T>* grad_sink(const std::shared_ptr<Node<T>>& parent) {
  return parent && parent->requires_grad ? &parent->grad_buffer() : nullptr;
}

template <typename T>
struct NamedParam {
  std::string name;
  Var<T> var;
};

template <typename T>
using ParamList = std::vector<NamedParam<T>>;

}  // namespace m3sr
