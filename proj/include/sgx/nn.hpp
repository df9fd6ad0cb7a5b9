#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "sgx/ops.hpp"
#include "sgx/rng.hpp"

namespace sgx::nn {

using ag::Var;

/// Ordered name -> parameter map. Names are hierarchical ("encoder/stage03/conv1/weight").
class ParamStore {
 public:
  Var add(const std::string& name, Tensor init, bool trainable = true);
  Var get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  const std::vector<std::pair<std::string, Var>>& items() const { return items_; }
  std::vector<Var> vars() const;
  std::size_t size() const { return items_.size(); }
  std::size_t numel() const;

  /// FNV-1a over names, shapes and raw float bits.
  std::uint64_t checksum() const;
  void set_trainable(bool on);
  void zero_grad();
  /// Deep copy with fresh nodes.
  ParamStore clone() const;
  /// Copies values from `other` for every shared name; shapes must match.
  void assign(const ParamStore& other);

 private:
  std::vector<std::pair<std::string, Var>> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Equalized-learning-rate linear layer: weights stored N(0,1)/lr_mul and
/// scaled at runtime.
struct EqualLinear {
  Var weight, bias;
  float wscale = 1.0f, lr_mul = 1.0f;
  bool activate = false;

  static EqualLinear create(ParamStore& ps, const std::string& name, int in, int out, Rng& rng,
                            float bias_init = 0.0f, float lr_mul = 1.0f, bool activate = false);
  Var operator()(const Var& x) const;
};

/// Equalized conv with optional bias and fused leaky ReLU (gain sqrt 2).
struct EqualConv {
  Var weight, bias;
  float wscale = 1.0f;
  int stride = 1, pad = 0;
  bool activate = false;

  static EqualConv create(ParamStore& ps, const std::string& name, int cin, int cout, int k, Rng& rng,
                          int stride = 1, bool bias = true, bool activate = false);
  Var operator()(const Var& x) const;
};

/// Leaky ReLU(x + b) * sqrt(2), StyleGAN2's fused activation.
Var fused_lrelu(const Var& x, const Var& bias);

class Adam {
 public:
  struct Group {
    std::vector<Var> params;
    float lr;
  };
  explicit Adam(std::vector<Group> groups, float beta1 = 0.9f, float beta2 = 0.999f, float eps = 1e-8f);
  Adam(std::vector<Var> params, float lr) : Adam(std::vector<Group>{{std::move(params), lr}}) {}

  void step();
  void zero_grad();
  int steps() const { return t_; }

 private:
  std::vector<Group> groups_;
  std::vector<std::vector<Tensor>> m_, v_;
  float b1_, b2_, eps_;
  int t_ = 0;
};

}  // namespace sgx::nn
