#include "sgx/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>

namespace sgx {

namespace {

std::string stage_name(int s) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "encoder/stage%02d", s);
  return buf;
}

int layer_for_native(int res) {
  int l = 0;
  while ((4 << l) < res) ++l;
  return 2 * l + 1;
}

}  // namespace

bool valid_skip_depth(int depth) {
  return depth == 0 || std::find(kSkipDepth.begin(), kSkipDepth.end(), depth) != kSkipDepth.end();
}

int EncoderSpec::stage_width(int stage) const {
  if (stage == 0) return width0;
  if (stage <= 3) return width1;
  if (stage <= 7) return width2;
  return width3;
}

ResBlockSE ResBlockSE::create(nn::ParamStore& ps, const std::string& name, int cin, int cout, int stride, Rng& rng) {
  ResBlockSE b;
  b.conv1 = nn::EqualConv::create(ps, name + "/conv1", cin, cout, 3, rng, stride, true, true);
  b.conv2 = nn::EqualConv::create(ps, name + "/conv2", cout, cout, 3, rng, 1, true, false);
  const int hidden = std::max(4, cout / 4);
  b.se_down = nn::EqualLinear::create(ps, name + "/se/down", cout, hidden, rng, 0.0f, 1.0f, true);
  b.se_up = nn::EqualLinear::create(ps, name + "/se/up", hidden, cout, rng);
  b.has_shortcut = cin != cout || stride != 1;
  if (b.has_shortcut) b.shortcut = nn::EqualConv::create(ps, name + "/shortcut", cin, cout, 1, rng, stride, false, false);
  return b;
}

Var ResBlockSE::operator()(const Var& x) const {
  Var r = conv2(conv1(x));
  Var gate = op::sigmoid(se_up(se_down(op::global_avg_pool(r))));
  r = op::mul_channel(r, gate);
  Var sc = has_shortcut ? shortcut(x) : x;
  return op::scale(op::add(r, sc), 1.0f / std::sqrt(2.0f));
}

Encoder::Encoder(EncoderSpec spec, const Generator& g, std::uint64_t seed)
    : spec_(spec), gspec_(g.spec()), avg_latent_(g.avg_latent()) {
  Rng rng = Rng(seed).substream("encoder");
  stem_ = nn::EqualConv::create(params_, stage_name(0), spec_.in_channels, spec_.width0, 3, rng, 1, true, true);
  for (int s = 1; s <= 21; ++s)
    blocks_.push_back(ResBlockSE::create(params_, stage_name(s), spec_.stage_width(s - 1), spec_.stage_width(s),
                                         spec_.stage_stride(s), rng));
  const int c3 = spec_.width3;
  feature_head_ = nn::EqualConv::create(params_, "encoder/feature_head", 3 * c3, gspec_.base_channels(), 3, rng);
  lat_mid_ = nn::EqualLinear::create(params_, "encoder/style_fpn/lateral_mid", spec_.width2, c3, rng);
  lat_fine_ = nn::EqualLinear::create(params_, "encoder/style_fpn/lateral_fine", spec_.width1, c3, rng);
  const int D = gspec_.latent_dim;
  const int hidden = spec_.head_hidden > 0 ? spec_.head_hidden : D;
  for (int l = 0; l < gspec_.num_style_layers(); ++l) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "encoder/style_head%02d", l);
    std::string n = buf;
    style_heads_.emplace_back(nn::EqualLinear::create(params_, n + "/fc1", c3, hidden, rng, 0.0f, 1.0f, true),
                              nn::EqualLinear::create(params_, n + "/fc2", hidden, D, rng));
  }
  for (int i = 0; i < 7; ++i) {
    if (!tap_available(i)) continue;
    const int cg = gspec_.channels_at(kSkipNativeRes[i]);
    const int ce = spec_.stage_width(kSkipStages[i]);
    const int fan_in = (cg + ce) * 9;
    const float inv_scale = std::sqrt(static_cast<float>(fan_in));
    Tensor w({cg, cg + ce, 3, 3});
    Rng r = rng.substream(static_cast<std::uint64_t>(100 + i));
    // Identity on the generator channels; small random weights on the skip channels.
    for (int o = 0; o < cg; ++o) {
      w[((static_cast<std::size_t>(o) * (cg + ce) + o) * 3 + 1) * 3 + 1] = inv_scale;
      for (int c = cg; c < cg + ce; ++c)
        for (int k = 0; k < 9; ++k) w[(static_cast<std::size_t>(o) * (cg + ce) + c) * 9 + k] = spec_.fuse_skip_init * r.normal();
    }
    char buf[40];
    std::snprintf(buf, sizeof buf, "encoder/fuse%d_layer%02d", i, tap_layer(i));
    fuse_w_[i] = params_.add(std::string(buf) + "/weight", std::move(w));
    fuse_b_[i] = params_.add(std::string(buf) + "/bias", Tensor({cg}));
  }
}

bool Encoder::tap_available(int i) const { return tap_layer(i) <= gspec_.num_conv_layers(); }
int Encoder::tap_layer(int i) const { return layer_for_native(kSkipNativeRes[i]); }

std::vector<Var> Encoder::backbone(const Var& x) const {
  const Tensor& v = x.value();
  require_4d(v, "encoder input");
  if (v.c() != spec_.in_channels)
    throw ShapeError("encoder expects " + std::to_string(spec_.in_channels) + " input channels, got " +
                     std::to_string(v.c()));
  std::vector<Var> stages;
  stages.reserve(22);
  stages.push_back(stem_(x));
  for (const auto& b : blocks_) stages.push_back(b(stages.back()));
  return stages;
}

void Encoder::check_feature_input(const Var& x1) const {
  const Tensor& v = x1.value();
  require_4d(v, "encode_feature input");
  if (v.h() % 32 || v.w() % 32)
    throw InputContractError("encode_feature: input sides must be divisible by 32, got " + std::to_string(v.h()) + "x" +
                             std::to_string(v.w()));
}

std::pair<Var, SkipSet> Encoder::encode_feature_from(const std::vector<Var>& s, int depth) const {
  if (!valid_skip_depth(depth))
    throw ArgumentError("skip depth must be one of 0,1,3,5,7,9,11,13, got " + std::to_string(depth));
  Var cat = op::concat_channels(op::concat_channels(s[11], s[16]), s[21]);
  Var f = feature_head_(cat);
  SkipSet skips;
  skips.depth = depth;
  for (int i = 6; i >= 0; --i) {
    if (kSkipDepth[i] > depth) break;
    if (!tap_available(i))
      throw ArgumentError("skip depth " + std::to_string(depth) + " needs generator layer " +
                          std::to_string(tap_layer(i)) + ", which this spec does not have");
    skips.taps.push_back({tap_layer(i), s[kSkipStages[i]], fuse_w_[i], fuse_b_[i]});
  }
  return {f, skips};
}

std::pair<Var, SkipSet> Encoder::encode_feature(const Var& x1, int depth) const {
  check_feature_input(x1);
  return encode_feature_from(backbone(x1), depth);
}

Var Encoder::encode_style_from(const std::vector<Var>& s) const {
  Var coarse = op::global_avg_pool(s[21]);
  Var mid = op::add(coarse, lat_mid_(op::global_avg_pool(s[7])));
  Var fine = op::add(mid, lat_fine_(op::global_avg_pool(s[3])));
  const int N = coarse.dim(0), D = gspec_.latent_dim;
  Var avg = op::expand0(Var(avg_latent_.reshaped({1, D})), N);
  std::vector<Var> rows;
  for (int l = 0; l < gspec_.num_style_layers(); ++l) {
    const Var& src = l < 7 ? coarse : l < 12 ? mid : fine;
    const auto& [fc1, fc2] = style_heads_[l];
    rows.push_back(op::add(fc2(fc1(src)), avg));
  }
  return op::stack_rows(rows);
}

Var Encoder::encode_style(const Var& x2) const {
  const Tensor& v = x2.value();
  require_4d(v, "encode_style input");
  if (v.h() < spec_.min_style_side || v.w() < spec_.min_style_side)
    throw InputContractError("encode_style: input must be at least " + std::to_string(spec_.min_style_side) + "x" +
                             std::to_string(spec_.min_style_side) + ", got " + std::to_string(v.h()) + "x" +
                             std::to_string(v.w()));
  return encode_style_from(backbone(x2));
}

TranslationNet::TranslationNet(int in_channels, int width, std::uint64_t seed) : in_channels_(in_channels) {
  Rng rng = Rng(seed).substream("translation_net");
  const std::string p = "translation_net/";
  down1_ = nn::EqualConv::create(params_, p + "down1", in_channels, width, 3, rng, 2, true, true);
  down2_ = nn::EqualConv::create(params_, p + "down2", width, width, 3, rng, 2, true, true);
  res1a_ = nn::EqualConv::create(params_, p + "res1/conv1", width, width, 3, rng, 1, true, true);
  res1b_ = nn::EqualConv::create(params_, p + "res1/conv2", width, width, 3, rng, 1, true, false);
  res2a_ = nn::EqualConv::create(params_, p + "res2/conv1", width, width, 3, rng, 1, true, true);
  res2b_ = nn::EqualConv::create(params_, p + "res2/conv2", width, width, 3, rng, 1, true, false);
  up1_ = nn::EqualConv::create(params_, p + "up1", width, width, 3, rng, 1, true, true);
  up2_ = nn::EqualConv::create(params_, p + "up2", width, 3, 3, rng, 1, true, false);
}

Var TranslationNet::operator()(const Var& x) const {
  const Tensor& v = x.value();
  require_4d(v, "translation net input");
  if (v.c() != in_channels_) throw ShapeError("translation net expects " + std::to_string(in_channels_) + " channels");
  if (v.h() % 4 || v.w() % 4) throw ShapeError("translation net input sides must be divisible by 4");
  Var h = down2_(down1_(x));
  h = op::add(h, res1b_(res1a_(h)));
  h = op::add(h, res2b_(res2a_(h)));
  h = up1_(op::upsample_nearest(h, 2));
  return up2_(op::upsample_nearest(h, 2));
}

Var compose_style(const Var& w_struct, const Var& w_tex, int split) {
  if (w_struct.shape() != w_tex.shape())
    throw ShapeError("compose_style: " + shape_str(w_struct.shape()) + " vs " + shape_str(w_tex.shape()));
  return style_mixing(w_struct, w_tex, split);
}

Var encoder_forward(const Encoder& enc, const GeneratorEX& gex, const Var& x1, const Var& x2, int depth,
                    const NoiseField& noise) {
  const Tensor& v = x1.value();
  require_4d(v, "encoder_forward x1");
  if (v.h() % 32 || v.w() % 32)
    throw InputContractError("encoder_forward: x1 sides must be divisible by 32, got " + std::to_string(v.h()) + "x" +
                             std::to_string(v.w()));
  auto stages = enc.backbone(x1);
  auto [f, skips] = enc.encode_feature_from(stages, depth);
  Var w = x1.node() == x2.node() ? enc.encode_style_from(stages) : enc.encode_style(x2);
  return synthesize(gex, f, w, noise, &skips);
}

}  // namespace sgx
