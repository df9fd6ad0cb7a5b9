#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "sgx/tensor.hpp"

namespace sgx::ag {

struct Node {
  Tensor value;
  Tensor grad;  // empty until something flows in
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  // Propagates `grad` into the inputs' grads.
  std::function<void(const Tensor& grad)> backward;

  Tensor& grad_buffer();
  void accumulate(const Tensor& g);
};

/// Handle to a value in the tape. Copies share the node.
class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  int dim(int i) const { return node_->value.dim(i); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool defined() const { return static_cast<bool>(node_); }
  bool has_grad() const { return node_ && !node_->grad.empty(); }
  /// Gradient; zeros of the value's shape if nothing has flowed in.
  Tensor grad() const;
  void zero_grad() { node_->grad = Tensor(); }
  void set_requires_grad(bool r) { node_->requires_grad = r; }
  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

inline Var param(Tensor t) { return Var(std::move(t), true); }
inline Var constant(Tensor t) { return Var(std::move(t), false); }

bool grad_enabled();

/// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

/// Builds a result node. `backward` receives the output gradient and must
/// accumulate into inputs that require grad. Skips recording when no input
/// needs a gradient or recording is disabled.
Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(const Tensor&)> backward);

/// Reverse-mode sweep from `root`. A scalar root is seeded with 1; otherwise
/// a seed of the root's shape must be supplied.
void backward(const Var& root, const Tensor& seed = Tensor());

}  // namespace sgx::ag
