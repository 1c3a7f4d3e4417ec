#pragma once

// Reverse-mode differentiation over a dynamically recorded tape. Every op
// returns a Var whose node remembers its inputs and a backward closure; the
// closure reads the node's gradient and accumulates into input gradients.

#include <functional>
#include <memory>
#include <vector>

#include "densify/nn/tensor.hpp"

namespace densify::nn {

struct Node {
  Tensor value;
  Tensor grad;  // allocated lazily, same shape as value
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  Tensor& ensure_grad() {
    if (grad.numel() != value.numel()) grad = Tensor(value.shape());
    return grad;
  }
  bool input_needs_grad(std::size_t i) const { return inputs[i] && inputs[i]->requires_grad; }
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Var constant(Tensor value);
  static Var parameter(Tensor value);

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_->requires_grad; }

  // Only meaningful after backward(); zero-sized when no gradient reached the node.
  const Tensor& grad() const { return node_->grad; }
  Tensor& mutable_grad() { return node_->ensure_grad(); }
  void zero_grad();

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

bool grad_enabled();

/// Disables tape recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Records `value` as the result of an op over `inputs`. The backward closure
/// is dropped when recording is off or no input requires a gradient.
Var record(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward_fn);

/// Leaf copy of the value, cut from the tape.
Var detach(const Var& v);

/// Seeds d(root)/d(root) = 1 and propagates to every reachable node.
void backward(const Var& root);

}  // namespace densify::nn
