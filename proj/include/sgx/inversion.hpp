#pragma once

#include <vector>

#include "sgx/encoder.hpp"
#include "sgx/losses.hpp"

namespace sgx {

/// Direction in W+ with its multiplier. v is (L, D) or (1, D) broadcast to every row.
struct EditingVector {
  Tensor v;
  double scale = 1.0;
};

struct InvertConfig {
  int steps = 500;
  float lr_w = 0.01f;
  float lr_f = 0.001f;
  bool pixel_l2 = false;  // adds an MSE term to the optimized objective
  float pixel_l2_weight = 1.0f;
  bool use_aligned = true;  // E_W on the aligned crop rather than the whole frame
  int style_size = 256;
};

struct InversionResult {
  Tensor f;  // (N, C, H/8, W/8)
  Tensor w;  // (N, L, D)
  double step1_loss = 0.0;
  double step2_loss = 0.0;
  int iterations_used = 0;
  std::vector<double> trace;  // loss before each update, then the final iterate
  GeneratorSpec spec;
};

/// f = E_F(x, 0), w = E_W(x̃). Without an aligned crop E_W runs on x resized
/// to `cfg.style_size`.
InversionResult invert_step1(const Encoder& enc, const GeneratorEX& gex, const Tensor& x, const Tensor* x_aligned,
                             const PerceptualMetric& metric, const NoiseField& noise = NoiseField::zero(),
                             const InvertConfig& cfg = {});

/// Adam on (f, w) against the perceptual distance to x; noise maps stay fixed.
/// Returns the best iterate.
InversionResult invert_step2(const GeneratorEX& gex, const Tensor& x, const InversionResult& init,
                             const PerceptualMetric& metric, const InvertConfig& cfg = {},
                             const NoiseField& noise = NoiseField::zero());

/// w + scale·v. Scale 0 returns w unchanged.
Tensor edit_latent(const Tensor& w, const Tensor& v, double scale);
Tensor edit_latent(const Tensor& w, const EditingVector& e);

/// Synthesis with a fine-tuned generator of the same architecture.
Tensor domain_transfer(const InversionResult& inv, const GeneratorEX& g_prime,
                       const NoiseField& noise = NoiseField::zero());

/// Zero-fill translation; integer offsets are exact index shifts.
Tensor shift_feature(const Tensor& f, double dy, double dx);
Tensor rotate_feature(const Tensor& f, double degrees);

struct Rect {
  int y = 0, x = 0, h = 0, w = 0;
};
/// Crop then resize to `size` x `size`.
Tensor manual_crop(const Tensor& x, const Rect& r, int size = 256);

}  // namespace sgx
