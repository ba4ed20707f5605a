#include "m3sr/autograd.hpp"

#include <unordered_set>

#include "m3sr/errors.hpp"

namespace m3sr {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_mode_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename T>
Tensor<T>& Node<T>::grad_buffer() {
  if (grad.empty()) grad = Tensor<T>(value.shape());
  return grad;
}

template <typename T>
Var<T>::Var(Tensor<T> value, bool requires_grad) : node_(std::make_shared<Node<T>>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Var<T>::grad() const {
  if (node_->grad.empty()) return Tensor<T>(node_->value.shape());
  return node_->grad;
}

template <typename T>
void Var<T>::backward() const {
  if (node_->value.size() != 1) {
    throw ShapeError("backward() needs a scalar root, got shape " + shape_str(shape()));
  }
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  node_->grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
}

template <typename T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> parents,
                   std::function<void(Node<T>&)> backward) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  if (!g_grad_enabled) return Var<T>(std::move(node));
  bool any = false;
  for (const auto& p : parents) any = any || (p.defined() && p.requires_grad());
  if (!any) return Var<T>(std::move(node));
  node->requires_grad = true;
  node->parents.reserve(parents.size());
  for (auto& p : parents) {
    if (p.defined()) node->parents.push_back(p.node());
  }
  node->backward = std::move(backward);
  return Var<T>(std::move(node));
}

template struct Node<float>;
template struct Node<double>;
template class Var<float>;
template class Var<double>;
template Var<float> make_result(Tensor<float>, std::vector<Var<float>>, std::function<void(Node<float>&)>);
template Var<double> make_result(Tensor<double>, std::vector<Var<double>>,
                                 std::function<void(Node<double>&)>);

}  // namespace m3sr
