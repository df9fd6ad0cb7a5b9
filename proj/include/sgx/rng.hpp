#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "sgx/tensor.hpp"

namespace sgx {

/// Deterministic generator. Independent substreams are derived by name so that
/// a single run seed fans out into replayable streams (weights, noise, data).
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(mix(seed)) {}

  std::uint64_t seed() const { return seed_; }
  Rng substream(std::string_view name) const;
  Rng substream(std::uint64_t index) const;

  float normal() { return normal_(engine_); }
  float uniform(float lo = 0.0f, float hi = 1.0f) {
    return lo + (hi - lo) * std::uniform_real_distribution<float>(0.0f, 1.0f)(engine_);
  }
  int uniform_int(int lo, int hi_inclusive) {
    return std::uniform_int_distribution<int>(lo, hi_inclusive)(engine_);
  }

  Tensor randn(const Shape& shape, float stddev = 1.0f);
  Tensor rand_uniform(const Shape& shape, float lo, float hi);

  static std::uint64_t mix(std::uint64_t x);

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::normal_distribution<float> normal_{0.0f, 1.0f};
};

}  // namespace sgx
