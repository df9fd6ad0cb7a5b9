#include "sgx/nn.hpp"

#include <cmath>
#include <cstring>

namespace sgx::nn {

Var ParamStore::add(const std::string& name, Tensor init, bool trainable) {
  if (contains(name)) throw InvariantError("duplicate parameter name " + name);
  Var v(std::move(init), trainable);
  index_[name] = items_.size();
  items_.emplace_back(name, v);
  return v;
}

Var ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw InvariantError("no parameter named " + name);
  return items_[it->second].second;
}

std::vector<Var> ParamStore::vars() const {
  std::vector<Var> out;
  out.reserve(items_.size());
  for (const auto& [_, v] : items_) out.push_back(v);
  return out;
}

std::size_t ParamStore::numel() const {
  std::size_t n = 0;
  for (const auto& [_, v] : items_) n += v.value().numel();
  return n;
}

std::uint64_t ParamStore::checksum() const {
  std::uint64_t h = 1469598103934665603ULL;
  auto feed = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& [name, v] : items_) {
    feed(name.data(), name.size());
    for (int d : v.shape()) feed(&d, sizeof d);
    feed(v.value().data(), v.value().numel() * sizeof(float));
  }
  return h;
}

void ParamStore::set_trainable(bool on) {
  for (auto& [_, v] : items_) v.set_requires_grad(on);
}

void ParamStore::zero_grad() {
  for (auto& [_, v] : items_) v.zero_grad();
}

ParamStore ParamStore::clone() const {
  ParamStore out;
  for (const auto& [name, v] : items_) out.add(name, v.value(), v.requires_grad());
  return out;
}

void ParamStore::assign(const ParamStore& other) {
  for (auto& [name, v] : items_) {
    if (!other.contains(name)) continue;
    const Tensor& src = other.get(name).value();
    if (src.shape() != v.shape())
      throw ShapeError("assign " + name + ": " + shape_str(src.shape()) + " vs " + shape_str(v.shape()));
    v.mutable_value() = src;
  }
}

EqualLinear EqualLinear::create(ParamStore& ps, const std::string& name, int in, int out, Rng& rng,
                                float bias_init, float lr_mul, bool activate) {
  EqualLinear l;
  l.weight = ps.add(name + "/weight", rng.randn({out, in}, 1.0f / lr_mul));
  l.bias = ps.add(name + "/bias", Tensor({out}, bias_init));
  l.wscale = lr_mul / std::sqrt(static_cast<float>(in));
  l.lr_mul = lr_mul;
  l.activate = activate;
  return l;
}

Var EqualLinear::operator()(const Var& x) const {
  if (!activate) return op::linear(x, weight, bias, wscale, lr_mul);
  Var y = op::linear(x, weight, Var(), wscale);
  // Bias is added before the activation, scaled by lr_mul.
  Var b = op::scale(bias, lr_mul);
  Var y4 = op::reshape(y, {y.dim(0), y.dim(1), 1, 1});
  Var out = fused_lrelu(y4, b);
  return op::reshape(out, {y.dim(0), y.dim(1)});
}

EqualConv EqualConv::create(ParamStore& ps, const std::string& name, int cin, int cout, int k, Rng& rng,
                            int stride, bool bias, bool activate) {
  EqualConv c;
  c.weight = ps.add(name + "/weight", rng.randn({cout, cin, k, k}));
  if (bias) c.bias = ps.add(name + "/bias", Tensor({cout}));
  c.wscale = 1.0f / std::sqrt(static_cast<float>(cin * k * k));
  c.stride = stride;
  c.pad = k / 2;
  c.activate = activate;
  return c;
}

Var EqualConv::operator()(const Var& x) const {
  Var y = op::conv2d(x, op::scale(weight, wscale), {stride, pad, 1});
  if (activate) return fused_lrelu(y, bias.defined() ? bias : Var(Tensor({y.dim(1)})));
  return bias.defined() ? op::add_channel_bias(y, bias) : y;
}

Var fused_lrelu(const Var& x, const Var& bias) {
  return op::leaky_relu(op::add_channel_bias(x, bias), 0.2f, std::sqrt(2.0f));
}

Adam::Adam(std::vector<Group> groups, float beta1, float beta2, float eps)
    : groups_(std::move(groups)), b1_(beta1), b2_(beta2), eps_(eps) {
  for (const auto& g : groups_) {
    std::vector<Tensor> m, v;
    for (const auto& p : g.params) {
      m.emplace_back(p.shape());
      v.emplace_back(p.shape());
    }
    m_.push_back(std::move(m));
    v_.push_back(std::move(v));
  }
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, t_);
  const double c2 = 1.0 - std::pow(b2_, t_);
  for (std::size_t gi = 0; gi < groups_.size(); ++gi) {
    auto& g = groups_[gi];
    const float step = static_cast<float>(g.lr * std::sqrt(c2) / c1);
    for (std::size_t pi = 0; pi < g.params.size(); ++pi) {
      Var& p = g.params[pi];
      if (!p.has_grad()) continue;
      const Tensor& grad = p.node()->grad;
      Tensor& m = m_[gi][pi];
      Tensor& v = v_[gi][pi];
      Tensor& val = p.mutable_value();
      const std::size_t n = val.numel();
      for (std::size_t i = 0; i < n; ++i) {
        m[i] = b1_ * m[i] + (1.0f - b1_) * grad[i];
        v[i] = b2_ * v[i] + (1.0f - b2_) * grad[i] * grad[i];
        val[i] -= step * m[i] / (std::sqrt(v[i]) + eps_ * static_cast<float>(std::sqrt(c2)));
      }
    }
  }
}

void Adam::zero_grad() {
  for (auto& g : groups_)
    for (auto& p : g.params) p.zero_grad();
}

}  // namespace sgx::nn
