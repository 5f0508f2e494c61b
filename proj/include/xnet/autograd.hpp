#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "xnet/tensor.hpp"

namespace xnet {

namespace detail {

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // empty until something is accumulated
  bool requires_grad = false;
  std::string op;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads self.grad and accumulates into the parents that require grad.
  std::function<void(Node&)> backward_fn;

  Tensor<T>& grad_buffer() {
    if (grad.empty()) grad = Tensor<T>(value.shape(), T(0));
    return grad;
  }
};

}  // namespace detail

// While alive, ops on this thread record no graph (inference).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

  static bool grad_enabled();

 private:
  bool previous_;
};

// Handle to a node of the define-by-run graph. Copies share the node.
template <typename T>
class Var {
 public:
  using Node = detail::Node<T>;
  using BackwardFn = std::function<void(Node&)>;

  Var() = default;

  static Var constant(Tensor<T> value);
  static Var parameter(Tensor<T> value);

  // Builds an op result. Throws NumericError if `value` is not finite.
  // Parents and the backward closure are dropped when no parent needs grad.
  static Var from_op(std::string op, Tensor<T> value, std::vector<Var> parents, BackwardFn backward);

  bool defined() const noexcept { return node_ != nullptr; }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  const std::string& op() const { return node_->op; }
  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }

  bool has_grad() const noexcept { return node_ && !node_->grad.empty(); }
  // Gradient buffer; zeros if nothing has been accumulated yet.
  const Tensor<T>& grad() const;
  Tensor<T>& mutable_grad() { return node_->grad_buffer(); }
  void zero_grad();

  // Reverse-mode sweep from a one-element output, seeded with 1.
  void backward() const;

  Node* node() const noexcept { return node_.get(); }

 private:
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  std::shared_ptr<Node> node_;
};

extern template class Var<float>;
extern template class Var<double>;

}  // namespace xnet
