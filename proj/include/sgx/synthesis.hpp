#pragma once

#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <vector>

#include "sgx/nn.hpp"

namespace sgx {

using ag::Var;

/// Architecture of a StyleGAN2 synthesis network.
///
/// Conv layers are numbered from 1: layer 1 is the 4x4 conv on the constant,
/// then every resolution contributes an upsampling conv (even index) and a
/// plain conv (odd index). Conv layer k reads style row k-1; the ToRGB after
/// resolution index r reads style row 2r+1.
struct GeneratorSpec {
  int output_resolution = 1024;
  int latent_dim = 512;
  int n_mlp = 8;
  float lr_mlp = 0.01f;
  std::map<int, int> channels;         // resolution -> channels; missing entries use StyleGAN2 defaults
  std::vector<int> dilation_override;  // empty: derived from native resolutions
  float noise_strength_init = 0.0f;    // StyleGAN2 initialises to 0
  int avg_latent_samples = 1024;

  /// StyleGAN2 config-f channel schedule.
  static GeneratorSpec stylegan2(int resolution);
  /// Narrow desk-scale network (latent 64) for CPU tests.
  static GeneratorSpec desk(int resolution);

  void validate() const;
  int log2_res() const;
  int num_style_layers() const { return 2 * log2_res() - 2; }
  int num_conv_layers() const { return 2 * log2_res() - 3; }
  /// Native resolution of the 7th conv layer.
  int base_resolution() const { return 32; }
  /// Output pixels per first-layer feature pixel.
  int scale_factor() const { return output_resolution / base_resolution(); }
  int channels_at(int resolution) const;
  int native_resolution(int layer) const;
  bool is_up_layer(int layer) const { return layer >= 2 && layer % 2 == 0; }
  /// Dilations of shallow layers 1..7 in the refactored network.
  std::vector<int> dilation_schedule() const;
  int base_channels() const { return channels_at(4); }
  bool operator==(const GeneratorSpec& o) const = default;
};

/// Per-layer noise. Zero and Fixed are deterministic; Random draws fresh maps
/// on every synthesis call.
class NoiseField {
 public:
  enum class Mode { Zero, Fixed, Random };

  static NoiseField zero() { return NoiseField(Mode::Zero, 0); }
  static NoiseField fixed(std::uint64_t seed) { return NoiseField(Mode::Fixed, seed); }
  static NoiseField random(std::uint64_t seed) { return NoiseField(Mode::Random, seed); }

  Mode mode() const { return mode_; }
  bool is_zero() const { return mode_ == Mode::Zero; }
  /// Map for conv layer `layer` with output (n, 1, h, w).
  Tensor map(int layer, int n, int h, int w) const;

 private:
  NoiseField(Mode m, std::uint64_t seed);
  Mode mode_;
  std::uint64_t seed_;
  std::shared_ptr<std::atomic<std::uint64_t>> draws_;
};

/// One encoder feature fused into a generator layer.
struct SkipTap {
  int layer = 0;  // generator conv layer whose output is fused
  Var feature;
  Var fuse_weight;  // (Cg, Cg+Ce, 3, 3), equalized
  Var fuse_bias;    // (Cg)
};

struct SkipSet {
  int depth = 0;
  std::vector<SkipTap> taps;
  bool empty() const { return taps.empty(); }
  const SkipTap* at_layer(int layer) const;
};

/// conv3x3(concat(gen, skip)) back to the generator's channel count.
Var fuse_skip(const Var& gen_feature, const SkipTap& tap);

class Generator {
 public:
  Generator(GeneratorSpec spec, std::uint64_t seed);
  /// Empty parameters following the spec, to be filled by an importer.
  static Generator empty(GeneratorSpec spec);

  const GeneratorSpec& spec() const { return spec_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

  /// Mapping network on z (N, D) -> w (N, D).
  Var map(const Var& z) const;
  const Tensor& avg_latent() const { return avg_latent_; }
  void set_avg_latent(Tensor w) { avg_latent_ = std::move(w); }
  void compute_avg_latent(int samples, std::uint64_t seed);

  Var constant() const { return params_.get("generator/synthesis/constant"); }
  Var layer_param(int layer, const char* what) const;
  Var torgb_param(int index, const char* what) const;
  std::size_t parameter_count() const { return params_.numel(); }

  /// Copy with independent parameters.
  Generator clone() const;

 private:
  explicit Generator(GeneratorSpec spec);
  void build(Rng* rng);

  GeneratorSpec spec_;
  nn::ParamStore params_;
  Tensor avg_latent_;
};

/// The refactored generator. Aliases the parameters of its source Generator;
/// shallow layers run at the first-layer feature resolution with dilated
/// kernels.
class GeneratorEX {
 public:
  explicit GeneratorEX(std::shared_ptr<const Generator> g, std::vector<int> dilations = {});
  const Generator& base() const { return *g_; }
  std::shared_ptr<const Generator> base_ptr() const { return g_; }
  const GeneratorSpec& spec() const { return g_->spec(); }
  const std::vector<int>& dilation_schedule() const { return dilations_; }
  const nn::ParamStore& params() const { return g_->params(); }

 private:
  std::shared_ptr<const Generator> g_;
  std::vector<int> dilations_;
};

GeneratorEX refactor(std::shared_ptr<const Generator> g);

/// Nearest-neighbour 8x replication of the learned 4x4 constant: (1, C, 32, 32).
Tensor upsample_constant(const Generator& g);

/// w (N, L, D), f (N, C, h, w). Output (N, 3, M*h, M*w).
Var synthesize(const GeneratorEX& gex, const Var& f, const Var& w, const NoiseField& noise,
               const SkipSet* skips = nullptr);
/// Standard StyleGAN2 forward from the learned constant.
Var synthesize_baseline(const Generator& g, const Var& w, const NoiseField& noise);

/// Modulated conv at stride 1 with "same" padding. x (N,Cin,H,W), weight
/// (Cout,Cin,k,k) stored unscaled, style (N,Cin).
Var modulated_conv(const Var& x, const Var& weight, const Var& style, int dilation, bool demodulate);
/// Effective per-sample weight after modulation/demodulation: (N, Cout, Cin*k*k).
Tensor effective_weight(const Tensor& weight, const Tensor& style, bool demodulate);

/// z (N, D) -> w+ (N, L, D) with truncation toward the average latent.
Var map_z_to_w(const Generator& g, const Var& z, float truncation = 1.0f);
/// Rows [0, split) from a and the rest from b.
Var style_mixing(const Var& a, const Var& b, int split);

/// 5x5 kernel K with K (dilation d) on a 2d-block-constant input equal to
/// conv_transpose(stride 2) + [1,3,3,1] blur on the native input.
Tensor derive_upsample_kernel(const Tensor& weight3x3);
/// [1,3,3,1] blur used after transposed convs (sum 4).
Tensor blur_kernel();
/// [1,2,1] x [1,2,1] / 16: the RGB skip upsample on block-constant inputs.
Tensor skip_smooth_kernel();

/// Radius in first-layer-feature pixels beyond which an output pixel does not
/// depend on a feature pixel.
int receptive_radius(const GeneratorSpec& spec);

}  // namespace sgx
