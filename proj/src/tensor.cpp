#include "sgx/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace sgx {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ')';
  return os.str();
}

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) {
    if (d < 0) throw ShapeError("negative dimension in shape " + shape_str(s));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<float> values) : shape_(std::move(shape)), data_(std::move(values)) {
  if (data_.size() != shape_numel(shape_))
    throw ShapeError("value count " + std::to_string(data_.size()) + " does not match shape " + shape_str(shape_));
}

int Tensor::dim(int i) const {
  if (i < 0) i += ndim();
  if (i < 0 || i >= ndim()) throw ShapeError("dimension index out of range for shape " + shape_str(shape_));
  return shape_[i];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != numel())
    throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  return Tensor(std::move(shape), data_);
}

void Tensor::fill(float v) { std::fill(data_.begin(), data_.end(), v); }

Tensor Tensor::slice0(int begin, int count) const {
  if (ndim() == 0 || begin < 0 || count < 0 || begin + count > shape_[0])
    throw ShapeError("slice out of range for shape " + shape_str(shape_));
  Shape s = shape_;
  s[0] = count;
  std::size_t stride = numel() / static_cast<std::size_t>(shape_[0]);
  std::vector<float> v(data_.begin() + static_cast<std::ptrdiff_t>(begin * stride),
                       data_.begin() + static_cast<std::ptrdiff_t>((begin + count) * stride));
  return Tensor(std::move(s), std::move(v));
}

void require_shape(const Tensor& t, const Shape& expected, const char* what) {
  if (t.shape() != expected)
    throw ShapeError(std::string(what) + ": expected shape " + shape_str(expected) + ", got " + shape_str(t.shape()));
}

void require_4d(const Tensor& t, const char* what) {
  if (t.ndim() != 4) throw ShapeError(std::string(what) + ": expected NCHW tensor, got " + shape_str(t.shape()));
}

float max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw ShapeError("max_abs_diff: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  float m = 0.0f;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

double sum(const Tensor& t) {
  double s = 0.0;
  for (float v : t.values()) s += v;
  return s;
}

bool all_finite(const Tensor& t) {
  return std::all_of(t.values().begin(), t.values().end(), [](float v) { return std::isfinite(v); });
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  return a.same_shape(b) && std::memcmp(a.data(), b.data(), a.numel() * sizeof(float)) == 0;
}

Tensor cat0(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("cat0 of nothing");
  Shape s = parts[0].shape();
  int total = 0;
  std::vector<float> v;
  for (const auto& p : parts) {
    Shape inner(p.shape().begin() + 1, p.shape().end());
    Shape ref(s.begin() + 1, s.end());
    if (inner != ref) throw ShapeError("cat0: mismatched trailing shape " + shape_str(p.shape()));
    total += p.shape()[0];
    v.insert(v.end(), p.values().begin(), p.values().end());
  }
  s[0] = total;
  return Tensor(std::move(s), std::move(v));
}

}  // namespace sgx
