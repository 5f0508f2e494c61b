#include "xnet/autograd.hpp"

#include <unordered_set>

namespace xnet {

namespace {
thread_local bool g_grad_enabled = true;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool NoGradGuard::grad_enabled() { return g_grad_enabled; }

template <typename T>
Var<T> Var<T>::constant(Tensor<T> value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = "constant";
  return Var(std::move(node));
}

template <typename T>
Var<T> Var<T>::parameter(Tensor<T> value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  node->op = "parameter";
  return Var(std::move(node));
}

template <typename T>
Var<T> Var<T>::from_op(std::string op, Tensor<T> value, std::vector<Var> parents, BackwardFn backward) {
  if (!value.all_finite()) {
    throw NumericError("non-finite value produced by " + op + " " + shape_str(value.shape()));
  }
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = std::move(op);
  if (g_grad_enabled) {
    for (const Var& p : parents) {
      if (p.requires_grad()) node->requires_grad = true;
    }
  }
  if (node->requires_grad) {
    node->parents.reserve(parents.size());
    for (Var& p : parents) node->parents.push_back(std::move(p.node_));
    node->backward_fn = std::move(backward);
  }
  return Var(std::move(node));
}

template <typename T>
const Tensor<T>& Var<T>::grad() const {
  return node_->grad_buffer();
}

template <typename T>
void Var<T>::zero_grad() {
  if (node_) node_->grad = Tensor<T>();
}

template <typename T>
void Var<T>::backward() const {
  if (node_->value.numel() != 1) {
    throw ShapeError("numel", "backward() needs a one-element output, got " + shape_str(node_->value.shape()));
  }
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->backward_fn || n->grad.empty()) continue;
    if (!n->grad.all_finite()) throw NumericError("non-finite gradient reaching " + n->op);
    n->backward_fn(*n);
  }
}

template class Var<float>;
template class Var<double>;

}  // namespace xnet
