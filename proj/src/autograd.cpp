#include "sgx/autograd.hpp"

#include <unordered_set>

namespace sgx::ag {

namespace {
thread_local bool t_grad_enabled = true;
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = prev_; }

Tensor& Node::grad_buffer() {
  if (grad.empty()) grad = Tensor(value.shape());
  return grad;
}

void Node::accumulate(const Tensor& g) {
  if (!g.same_shape(value))
    throw ShapeError("gradient shape " + shape_str(g.shape()) + " does not match value " + shape_str(value.shape()));
  if (grad.empty()) {
    grad = g;
    return;
  }
  float* dst = grad.data();
  const float* src = g.data();
  const std::size_t n = g.numel();
#pragma omp parallel for schedule(static) if (n > 65536)
  for (std::size_t i = 0; i < n; ++i) dst[i] += src[i];
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Tensor Var::grad() const {
  if (node_->grad.empty()) return Tensor(node_->value.shape());
  return node_->grad;
}

Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(const Tensor&)> backward) {
  Var out(std::move(value), false);
  if (!t_grad_enabled) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return out;
  auto& node = *out.node();
  node.requires_grad = true;
  for (auto& in : inputs)
    if (in.requires_grad()) node.inputs.push_back(in.node());
  node.backward = std::move(backward);
  return out;
}

void backward(const Var& root, const Tensor& seed) {
  if (!root.requires_grad()) return;
  // Iterative post-order DFS for a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node().get(), 0}};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.push_back({child, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  Node* r = root.node().get();
  if (seed.empty()) {
    if (r->value.numel() != 1) throw ShapeError("backward from non-scalar requires an explicit seed");
    r->accumulate(Tensor(r->value.shape(), 1.0f));
  } else {
    r->accumulate(seed);
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(n->grad);
  }
}

}  // namespace sgx::ag
