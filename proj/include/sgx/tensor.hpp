#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace sgx {

// Error taxonomy shared by every module.
struct ShapeError : std::runtime_error { using std::runtime_error::runtime_error; };
struct ConfigError : std::runtime_error { using std::runtime_error::runtime_error; };
struct ArgumentError : std::runtime_error { using std::runtime_error::runtime_error; };
struct InputContractError : std::runtime_error { using std::runtime_error::runtime_error; };
struct ArchitectureError : std::runtime_error { using std::runtime_error::runtime_error; };
struct ImportError : std::runtime_error { using std::runtime_error::runtime_error; };
struct DetectionError : std::runtime_error { using std::runtime_error::runtime_error; };
struct InvariantError : std::runtime_error { using std::runtime_error::runtime_error; };

class OptimizationError : public std::runtime_error {
 public:
  OptimizationError(const std::string& what, int iteration)
      : std::runtime_error(what), iteration_(iteration) {}
  int iteration() const { return iteration_; }

 private:
  int iteration_;
};

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

/// Dense row-major float32 tensor. Image and feature tensors are NCHW.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> values);

  static Tensor scalar(float v) { return Tensor({1}, v); }

  const Shape& shape() const { return shape_; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const;
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  std::span<float> values() { return data_; }
  std::span<const float> values() const { return data_; }
  std::vector<float>& storage() { return data_; }

  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  // NCHW accessors; no bounds checks.
  float& at(int n, int c, int h, int w) {
    return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  float at(int n, int c, int h, int w) const {
    return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  Tensor reshaped(Shape shape) const;
  void fill(float v);
  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  // N,C,H,W helpers for 4D tensors.
  int n() const { return dim(0); }
  int c() const { return dim(1); }
  int h() const { return dim(2); }
  int w() const { return dim(3); }

  /// Slice of the leading dimension [begin, begin+count).
  Tensor slice0(int begin, int count) const;

 private:
  Shape shape_;
  std::vector<float> data_;
};

void require_shape(const Tensor& t, const Shape& expected, const char* what);
void require_4d(const Tensor& t, const char* what);

float max_abs_diff(const Tensor& a, const Tensor& b);
double sum(const Tensor& t);
bool all_finite(const Tensor& t);
bool bit_equal(const Tensor& a, const Tensor& b);

/// Concatenate along the leading dimension.
Tensor cat0(std::span<const Tensor> parts);

}  // namespace sgx
