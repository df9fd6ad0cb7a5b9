#pragma once

#include <array>
#include <memory>
#include <utility>
#include <vector>

#include "sgx/synthesis.hpp"

namespace sgx {

/// Skip wiring: encoder stage -> generator native resolution -> skip depth at
/// which the tap becomes active.
inline constexpr std::array<int, 7> kSkipStages{0, 3, 7, 11, 16, 21, 21};
inline constexpr std::array<int, 7> kSkipNativeRes{256, 128, 64, 32, 16, 8, 4};
inline constexpr std::array<int, 7> kSkipDepth{13, 11, 9, 7, 5, 3, 1};

bool valid_skip_depth(int depth);

/// Backbone widths. Stage 0 is a conv at input resolution; stages 1-3 run at
/// 1/2, 4-7 at 1/4 and 8-21 at 1/8.
struct EncoderSpec {
  int in_channels = 3;
  int width0 = 8, width1 = 12, width2 = 16, width3 = 16;
  int head_hidden = 0;  // 0: latent_dim
  int min_style_side = 64;
  float fuse_skip_init = 0.1f;

  static EncoderSpec desk() { return {}; }
  /// pSp-like widths (64, 128, 256, 512).
  static EncoderSpec full() { return {3, 64, 128, 256, 512, 0, 64, 0.1f}; }
  int stage_width(int stage) const;
  int stage_stride(int stage) const { return (stage == 1 || stage == 4 || stage == 8) ? 2 : 1; }
  /// Downsampling factor of a stage relative to the input.
  static int stage_scale(int stage) { return stage == 0 ? 1 : stage <= 3 ? 2 : stage <= 7 ? 4 : 8; }
};

/// Residual block with squeeze-excite; the first conv carries the stride.
struct ResBlockSE {
  nn::EqualConv conv1, conv2, shortcut;
  nn::EqualLinear se_down, se_up;
  bool has_shortcut = false;

  static ResBlockSE create(nn::ParamStore& ps, const std::string& name, int cin, int cout, int stride, Rng& rng);
  Var operator()(const Var& x) const;
};

class Encoder {
 public:
  Encoder(EncoderSpec spec, const Generator& g, std::uint64_t seed);

  const EncoderSpec& spec() const { return spec_; }
  const GeneratorSpec& generator_spec() const { return gspec_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

  /// Stage outputs 0..21.
  std::vector<Var> backbone(const Var& x) const;

  /// E_F: first-layer feature at (H/8, W/8) and the skip set of depth ℓ.
  std::pair<Var, SkipSet> encode_feature(const Var& x1, int depth) const;
  /// E_W: style code (N, L, D).
  Var encode_style(const Var& x2) const;
  /// Both from a shared pyramid when x1 and x2 are the same tensor node.
  std::pair<Var, SkipSet> encode_feature_from(const std::vector<Var>& stages, int depth) const;
  Var encode_style_from(const std::vector<Var>& stages) const;

  /// True when the generator has a layer for tap i.
  bool tap_available(int i) const;
  int tap_layer(int i) const;

 private:
  void check_feature_input(const Var& x1) const;

  EncoderSpec spec_;
  GeneratorSpec gspec_;
  Tensor avg_latent_;
  nn::ParamStore params_;
  nn::EqualConv stem_;
  std::vector<ResBlockSE> blocks_;  // stages 1..21
  nn::EqualConv feature_head_;
  nn::EqualLinear lat_mid_, lat_fine_;
  std::vector<std::pair<nn::EqualLinear, nn::EqualLinear>> style_heads_;
  std::array<Var, 7> fuse_w_, fuse_b_;
};

/// Two stride-2 convs, two residual blocks, two nearest-upsample convs.
class TranslationNet {
 public:
  TranslationNet(int in_channels, int width, std::uint64_t seed);
  Var operator()(const Var& x) const;
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }
  int in_channels() const { return in_channels_; }

 private:
  int in_channels_;
  nn::ParamStore params_;
  nn::EqualConv down1_, down2_, res1a_, res1b_, res2a_, res2b_, up1_, up2_;
};

/// Rows [0, split) from w_struct, the rest from w_tex.
Var compose_style(const Var& w_struct, const Var& w_tex, int split = 7);

/// x̂ = G(E_F(x1, ℓ), E_W(x2)).
Var encoder_forward(const Encoder& enc, const GeneratorEX& gex, const Var& x1, const Var& x2, int depth,
                    const NoiseField& noise);

}  // namespace sgx
