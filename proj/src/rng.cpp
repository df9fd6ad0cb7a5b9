#include "sgx/rng.hpp"

namespace sgx {

std::uint64_t Rng::mix(std::uint64_t x) {
  // splitmix64 finalizer
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Rng Rng::substream(std::string_view name) const {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return Rng(mix(seed_ ^ mix(h)));
}

Rng Rng::substream(std::uint64_t index) const { return Rng(mix(seed_ + mix(index + 0x51ed270b27ULL))); }

Tensor Rng::randn(const Shape& shape, float stddev) {
  Tensor t(shape);
  for (auto& v : t.values()) v = normal() * stddev;
  return t;
}

Tensor Rng::rand_uniform(const Shape& shape, float lo, float hi) {
  Tensor t(shape);
  for (auto& v : t.values()) v = uniform(lo, hi);
  return t;
}

}  // namespace sgx
