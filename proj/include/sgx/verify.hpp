#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "sgx/synthesis.hpp"

namespace sgx {

/// Max |G(f0↑, w) - G0(w)| for one random generator and style code, zero noise.
/// A non-empty `dilations` replaces the refactored schedule (mutation testing).
double compatibility_deviation(const GeneratorSpec& spec, std::uint64_t seed, const std::vector<int>& dilations = {});

/// Shifts a random (fh, fw) feature by (dy, dx) feature pixels and compares the
/// output with the expected (M·dy, M·dx) image shift on pixels whose receptive
/// field avoids the borders.
double equivariance_deviation(const GeneratorSpec& spec, std::uint64_t seed, int dy, int dx, int fh, int fw);

/// Norm-wise relative error ||g_a - g_fd|| / max(||g_a||, ||g_fd||) per input
/// for the scalar sum(r ⊙ fn(inputs)) with a fixed random r.
std::vector<double> gradient_check(const std::function<Var(const std::vector<Var>&)>& fn,
                                   const std::vector<Tensor>& inputs, double eps = 1e-2, std::uint64_t seed = 0);

/// Errors for (input, weight, style) of a demodulated dilated modulated conv
/// on a (1, 4, 8, 8) input.
std::vector<double> modulated_conv_gradcheck(int dilation, std::uint64_t seed);

struct VerifyCheck {
  std::string name;
  bool passed = false;
  double measured = 0.0;
  double tolerance = 0.0;
  double seconds = 0.0;
  std::string detail;
};

struct VerifyOptions {
  std::vector<int> resolutions{32, 64, 256};
  int seeds = 5;
  std::uint64_t base_seed = 0;
  bool mutation = true;
};

struct VerifyReport {
  std::vector<VerifyCheck> checks;
  bool all_passed() const;
  std::string to_json() const;
  std::string to_text() const;
};

VerifyReport run_verify(const VerifyOptions& opt);

}  // namespace sgx
