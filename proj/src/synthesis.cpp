#include "sgx/synthesis.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <string>

namespace sgx {

namespace {

std::string layer_name(int layer) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "generator/synthesis/layer%02d/", layer);
  return buf;
}

std::string torgb_name(int index) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "generator/synthesis/torgb%02d/", index);
  return buf;
}

std::string mapping_name(int layer) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "generator/mapping/layer%02d/", layer);
  return buf;
}

bool is_pow2(int v) { return v > 0 && (v & (v - 1)) == 0; }

}  // namespace

// ---------------------------------------------------------------------------
// GeneratorSpec

GeneratorSpec GeneratorSpec::stylegan2(int resolution) {
  GeneratorSpec s;
  s.output_resolution = resolution;
  s.latent_dim = 512;
  s.channels = {{4, 512}, {8, 512}, {16, 512}, {32, 512}, {64, 512}, {128, 256}, {256, 128}, {512, 64}, {1024, 32}};
  return s;
}

GeneratorSpec GeneratorSpec::desk(int resolution) {
  GeneratorSpec s;
  s.output_resolution = resolution;
  s.latent_dim = 64;
  s.channels = {{4, 24}, {8, 24}, {16, 24}, {32, 24}, {64, 16}, {128, 12}, {256, 8}, {512, 6}, {1024, 4}};
  s.noise_strength_init = 0.1f;
  return s;
}

void GeneratorSpec::validate() const {
  if (!is_pow2(output_resolution) || output_resolution < 32)
    throw ConfigError("output_resolution must be a power of two >= 32, got " + std::to_string(output_resolution));
  if (latent_dim < 1) throw ConfigError("latent_dim must be positive");
  if (n_mlp < 1) throw ConfigError("n_mlp must be positive");
  for (int r = 4; r <= output_resolution; r *= 2)
    if (channels_at(r) < 1) throw ConfigError("channel count at " + std::to_string(r) + " must be positive");
  if (!dilation_override.empty() && dilation_override.size() != 7)
    throw ConfigError("dilation schedule must list 7 shallow layers");
  for (int d : dilation_override)
    if (d < 1) throw ConfigError("dilations must be >= 1");
}

int GeneratorSpec::log2_res() const {
  int l = 0;
  while ((1 << l) < output_resolution) ++l;
  return l;
}

int GeneratorSpec::channels_at(int resolution) const {
  auto it = channels.find(resolution);
  if (it != channels.end()) return it->second;
  static const std::map<int, int> defaults = GeneratorSpec::stylegan2(1024).channels;
  auto d = defaults.find(resolution);
  if (d == defaults.end()) throw ConfigError("no channel count for resolution " + std::to_string(resolution));
  return d->second;
}

int GeneratorSpec::native_resolution(int layer) const {
  if (layer < 1 || layer > num_conv_layers()) throw ArgumentError("layer index out of range: " + std::to_string(layer));
  return 4 << (layer / 2);
}

std::vector<int> GeneratorSpec::dilation_schedule() const {
  if (!dilation_override.empty()) return dilation_override;
  std::vector<int> d;
  for (int k = 1; k <= 7; ++k) d.push_back(base_resolution() / (4 << (k / 2)));
  return d;
}

// ---------------------------------------------------------------------------
// Noise and skips

NoiseField::NoiseField(Mode m, std::uint64_t seed)
    : mode_(m), seed_(seed), draws_(std::make_shared<std::atomic<std::uint64_t>>(0)) {}

Tensor NoiseField::map(int layer, int n, int h, int w) const {
  switch (mode_) {
    case Mode::Zero:
      return Tensor();
    case Mode::Fixed:
      return Rng(seed_).substream(static_cast<std::uint64_t>(layer)).randn({n, 1, h, w});
    case Mode::Random: {
      std::uint64_t k = draws_->fetch_add(1);
      return Rng(Rng::mix(seed_) ^ Rng::mix(k + 1)).substream(static_cast<std::uint64_t>(layer)).randn({n, 1, h, w});
    }
  }
  return Tensor();
}

const SkipTap* SkipSet::at_layer(int layer) const {
  for (const auto& t : taps)
    if (t.layer == layer) return &t;
  return nullptr;
}

Var fuse_skip(const Var& gen_feature, const SkipTap& tap) {
  const Tensor& g = gen_feature.value();
  const Tensor& s = tap.feature.value();
  require_4d(g, "fuse_skip generator feature");
  require_4d(s, "fuse_skip skip feature");
  if (g.h() != s.h() || g.w() != s.w() || g.n() != s.n())
    throw ShapeError("skip feature " + shape_str(s.shape()) + " does not match generator layer " +
                     std::to_string(tap.layer) + " feature " + shape_str(g.shape()));
  const Tensor& wt = tap.fuse_weight.value();
  if (wt.ndim() != 4 || wt.dim(0) != g.c() || wt.dim(1) != g.c() + s.c())
    throw ShapeError("fusion conv weight " + shape_str(wt.shape()) + " incompatible with features");
  const float scale = 1.0f / std::sqrt(static_cast<float>(wt.dim(1) * wt.dim(2) * wt.dim(3)));
  Var y = op::conv2d(op::concat_channels(gen_feature, tap.feature), op::scale(tap.fuse_weight, scale),
                     {1, wt.dim(2) / 2, 1});
  return tap.fuse_bias.defined() ? op::add_channel_bias(y, tap.fuse_bias) : y;
}

// ---------------------------------------------------------------------------
// Generator

Generator::Generator(GeneratorSpec spec) : spec_(std::move(spec)) { spec_.validate(); }

Generator::Generator(GeneratorSpec spec, std::uint64_t seed) : Generator(std::move(spec)) {
  Rng rng = Rng(seed).substream("generator");
  build(&rng);
  compute_avg_latent(spec_.avg_latent_samples, Rng::mix(seed ^ 0x9e3779b97f4a7c15ULL));
}

Generator Generator::empty(GeneratorSpec spec) {
  Generator g(std::move(spec));
  g.build(nullptr);
  g.avg_latent_ = Tensor({g.spec_.latent_dim});
  return g;
}

void Generator::build(Rng* rng) {
  const int D = spec_.latent_dim;
  auto randn = [&](const Shape& s, float sd) { return rng ? rng->randn(s, sd) : Tensor(s); };
  for (int i = 0; i < spec_.n_mlp; ++i) {
    params_.add(mapping_name(i) + "weight", randn({D, D}, 1.0f / spec_.lr_mlp));
    params_.add(mapping_name(i) + "bias", Tensor({D}));
  }
  params_.add("generator/synthesis/constant", randn({1, spec_.base_channels(), 4, 4}, 1.0f));
  for (int k = 1; k <= spec_.num_conv_layers(); ++k) {
    const int res = spec_.native_resolution(k);
    const int cout = spec_.channels_at(res);
    const int cin = spec_.is_up_layer(k) ? spec_.channels_at(res / 2) : cout;
    const std::string n = layer_name(k);
    params_.add(n + "weight", randn({cout, cin, 3, 3}, 1.0f));
    params_.add(n + "bias", Tensor({cout}));
    params_.add(n + "noise_scale", Tensor({1}, rng ? spec_.noise_strength_init : 0.0f));
    params_.add(n + "style_affine/weight", randn({cin, D}, 1.0f));
    params_.add(n + "style_affine/bias", Tensor({cin}, 1.0f));
  }
  for (int r = 0; r <= spec_.log2_res() - 2; ++r) {
    const int cin = spec_.channels_at(4 << r);
    const std::string n = torgb_name(r);
    params_.add(n + "weight", randn({3, cin, 1, 1}, 1.0f));
    params_.add(n + "bias", Tensor({3}));
    params_.add(n + "style_affine/weight", randn({cin, D}, 1.0f));
    params_.add(n + "style_affine/bias", Tensor({cin}, 1.0f));
  }
  // Generator weights are frozen everywhere in this codebase.
  params_.set_trainable(false);
}

Var Generator::layer_param(int layer, const char* what) const { return params_.get(layer_name(layer) + what); }
Var Generator::torgb_param(int index, const char* what) const { return params_.get(torgb_name(index) + what); }

Var Generator::map(const Var& z) const {
  if (z.value().ndim() != 2 || z.dim(1) != spec_.latent_dim)
    throw ShapeError("z must be (N, " + std::to_string(spec_.latent_dim) + "), got " + shape_str(z.shape()));
  Var x = op::pixel_norm(z);
  const float ws = spec_.lr_mlp / std::sqrt(static_cast<float>(spec_.latent_dim));
  for (int i = 0; i < spec_.n_mlp; ++i) {
    Var y = op::linear(x, params_.get(mapping_name(i) + "weight"), Var(), ws);
    Var b = op::scale(params_.get(mapping_name(i) + "bias"), spec_.lr_mlp);
    Var y4 = op::reshape(y, {y.dim(0), y.dim(1), 1, 1});
    x = op::reshape(nn::fused_lrelu(y4, b), {y.dim(0), y.dim(1)});
  }
  return x;
}

void Generator::compute_avg_latent(int samples, std::uint64_t seed) {
  ag::NoGradGuard ng;
  Rng rng(seed);
  Var w = map(Var(rng.randn({samples, spec_.latent_dim})));
  Tensor mean({spec_.latent_dim});
  for (int n = 0; n < samples; ++n)
    for (int d = 0; d < spec_.latent_dim; ++d) mean[d] += w.value()[n * spec_.latent_dim + d];
  for (auto& v : mean.values()) v /= static_cast<float>(samples);
  avg_latent_ = std::move(mean);
}

Generator Generator::clone() const {
  Generator g(spec_);
  g.params_ = params_.clone();
  g.avg_latent_ = avg_latent_;
  return g;
}

// ---------------------------------------------------------------------------
// Kernels for the refactoring

Tensor blur_kernel() {
  const float b[4] = {1, 3, 3, 1};
  Tensor k({4, 4});
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) k[i * 4 + j] = b[i] * b[j] / 16.0f;
  return k;
}

Tensor skip_smooth_kernel() {
  const float b[3] = {1, 2, 1};
  Tensor k({3, 3});
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) k[i * 3 + j] = b[i] * b[j] / 16.0f;
  return k;
}

// Transposed conv (stride 2) followed by the blur maps native X to
//   Y[m] = sum_j q[m - 2j] X[j],  q[u] = sum_{k - s + 1 = u} w[k] b[s],  u in [-2, 3].
// On an input replicated in blocks of 2d, a conv with taps K[t] at dilation d
// reads X[floor((m + t) / 2)] for output block m, so matching Y needs
//   K[tau] + K[tau + 1] = q[-tau]  for tau in [-3, 2]
// per axis; in 2D the four K taps of each 2x2 window sum to q. Solving from
// the corner fixes K on [-2, 2]^2; the remaining equations hold because the
// blur has no Nyquist component.
Tensor derive_upsample_kernel(const Tensor& weight) {
  if (weight.ndim() != 4 || weight.dim(2) != 3 || weight.dim(3) != 3)
    throw ShapeError("derive_upsample_kernel expects (Cout,Cin,3,3)");
  const int cout = weight.dim(0), cin = weight.dim(1);
  const double b[4] = {0.25, 0.75, 0.75, 0.25};
  Tensor out({cout, cin, 5, 5});
  for (int oc = 0; oc < cout * cin; ++oc) {
    const float* w = weight.data() + oc * 9;
    // q indexed [uy + 2][ux + 2]
    double q[6][6] = {};
    for (int ky = 0; ky < 3; ++ky)
      for (int sy = 0; sy < 4; ++sy)
        for (int kx = 0; kx < 3; ++kx)
          for (int sx = 0; sx < 4; ++sx) q[ky - sy + 3][kx - sx + 3] += w[ky * 3 + kx] * b[sy] * b[sx];
    // K indexed [t + 3] for t in [-3, 3]; only [-2, 2] may be nonzero.
    double K[7][7] = {};
    for (int ty = -3; ty <= 1; ++ty)
      for (int tx = -3; tx <= 1; ++tx)
        K[ty + 4][tx + 4] = q[-ty + 2][-tx + 2] - K[ty + 3][tx + 3] - K[ty + 4][tx + 3] - K[ty + 3][tx + 4];
    float* dst = out.data() + oc * 25;
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 5; ++j) dst[i * 5 + j] = static_cast<float>(K[i + 1][j + 1]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Forward passes

namespace {

float conv_scale(const Tensor& w) { return 1.0f / std::sqrt(static_cast<float>(w.dim(1) * w.dim(2) * w.dim(3))); }

Var affine(const Generator& g, const std::string& prefix, const Var& row) {
  Var w = g.params().get(prefix + "style_affine/weight");
  Var b = g.params().get(prefix + "style_affine/bias");
  return op::linear(row, w, b, 1.0f / std::sqrt(static_cast<float>(w.dim(1))), 1.0f);
}

enum class UpMode { Native, Derived };

struct LayerArgs {
  int layer;
  int dilation = 1;
  UpMode up_mode = UpMode::Native;
};

Var styled_conv(const Generator& g, const LayerArgs& a, const Var& x, const Var& w, const NoiseField& noise) {
  const std::string prefix = layer_name(a.layer);
  Var weight = g.layer_param(a.layer, "weight");
  Var s = affine(g, prefix, op::select_row(w, a.layer - 1));
  const float ws = conv_scale(weight.value());
  Var xm = op::mul_channel(x, s);
  Var y;
  if (g.spec().is_up_layer(a.layer) && a.up_mode == UpMode::Native) {
    y = op::conv_transpose2d_s2(xm, op::scale(weight, ws));
    op::FirOpts fo;
    fo.pad_y0 = fo.pad_y1 = fo.pad_x0 = fo.pad_x1 = 1;
    y = op::fir2d(y, blur_kernel(), fo);
  } else if (g.spec().is_up_layer(a.layer)) {
    Tensor k = derive_upsample_kernel(weight.value());
    for (auto& v : k.values()) v *= ws;
    y = op::conv2d(xm, Var(std::move(k)), {1, 2 * a.dilation, a.dilation});
  } else {
    y = op::conv2d(xm, op::scale(weight, ws), {1, a.dilation, a.dilation});
  }
  y = op::mul_channel(y, op::demod_coeff(s, weight, ws));
  if (!noise.is_zero()) {
    const Tensor& v = y.value();
    y = op::add_noise(y, noise.map(a.layer, v.n(), v.h(), v.w()), g.layer_param(a.layer, "noise_scale"));
  }
  return nn::fused_lrelu(y, g.layer_param(a.layer, "bias"));
}

struct SkipUp {
  bool present = false;
  UpMode mode = UpMode::Native;
  int dilation = 1;
};

Var to_rgb(const Generator& g, int index, const Var& x, const Var& w, const Var& prev, SkipUp up) {
  const std::string prefix = torgb_name(index);
  Var weight = g.torgb_param(index, "weight");
  Var s = affine(g, prefix, op::select_row(w, 2 * index + 1));
  Var y = op::conv2d(op::mul_channel(x, s), op::scale(weight, conv_scale(weight.value())));
  y = op::add_channel_bias(y, g.torgb_param(index, "bias"));
  if (!up.present) return y;
  op::FirOpts fo;
  Var skip;
  if (up.mode == UpMode::Native) {
    fo.up = 2;
    fo.pad_y0 = fo.pad_x0 = 2;
    fo.pad_y1 = fo.pad_x1 = 1;
    skip = op::fir2d(prev, blur_kernel(), fo);
  } else {
    fo.dilation = up.dilation;
    fo.pad_y0 = fo.pad_y1 = fo.pad_x0 = fo.pad_x1 = up.dilation;
    skip = op::fir2d(prev, skip_smooth_kernel(), fo);
  }
  return op::add(y, skip);
}

void check_style(const GeneratorSpec& spec, const Var& w) {
  const Tensor& v = w.value();
  if (v.ndim() != 3 || v.dim(1) != spec.num_style_layers() || v.dim(2) != spec.latent_dim)
    throw ShapeError("style code must be (N, " + std::to_string(spec.num_style_layers()) + ", " +
                     std::to_string(spec.latent_dim) + "), got " + shape_str(v.shape()));
}

Var maybe_fuse(const Var& x, int layer, const SkipSet* skips) {
  if (!skips) return x;
  const SkipTap* t = skips->at_layer(layer);
  return t ? fuse_skip(x, *t) : x;
}

// Shared layer walk; a dilation schedule selects the refactored shallow path.
Var run(const Generator& g, Var x, const Var& w, const NoiseField& noise, const SkipSet* skips,
        const std::vector<int>* dil) {
  const GeneratorSpec& spec = g.spec();
  auto args = [&](int layer) {
    LayerArgs a{layer};
    if (dil && layer <= 7) {
      a.dilation = (*dil)[layer - 1];
      a.up_mode = UpMode::Derived;
    }
    return a;
  };
  x = styled_conv(g, args(1), x, w, noise);
  x = maybe_fuse(x, 1, skips);
  Var rgb = to_rgb(g, 0, x, w, Var(), {});
  for (int r = 1; r <= spec.log2_res() - 2; ++r) {
    const int up_layer = 2 * r, conv_layer = 2 * r + 1;
    x = styled_conv(g, args(up_layer), x, w, noise);
    x = styled_conv(g, args(conv_layer), x, w, noise);
    x = maybe_fuse(x, conv_layer, skips);
    SkipUp su{true};
    if (dil && up_layer <= 7) {
      su.mode = UpMode::Derived;
      su.dilation = (*dil)[up_layer - 1];
    }
    rgb = to_rgb(g, r, x, w, rgb, su);
  }
  return rgb;
}

}  // namespace

GeneratorEX::GeneratorEX(std::shared_ptr<const Generator> g, std::vector<int> dilations)
    : g_(std::move(g)), dilations_(dilations.empty() ? g_->spec().dilation_schedule() : std::move(dilations)) {
  if (dilations_.size() != 7) throw ConfigError("dilation schedule must list 7 shallow layers");
}

GeneratorEX refactor(std::shared_ptr<const Generator> g) { return GeneratorEX(std::move(g)); }

Tensor upsample_constant(const Generator& g) {
  ag::NoGradGuard ng;
  return op::upsample_nearest(g.constant(), 8).value();
}

Var synthesize(const GeneratorEX& gex, const Var& f, const Var& w, const NoiseField& noise, const SkipSet* skips) {
  const GeneratorSpec& spec = gex.spec();
  check_style(spec, w);
  const Tensor& fv = f.value();
  if (fv.ndim() != 4 || fv.c() != spec.base_channels())
    throw ShapeError("first-layer feature must be (N, " + std::to_string(spec.base_channels()) + ", h, w), got " +
                     shape_str(fv.shape()));
  if (fv.h() < 4 || fv.w() < 4) throw ShapeError("first-layer feature must be at least 4x4, got " + shape_str(fv.shape()));
  if (fv.n() != w.dim(0)) throw ShapeError("batch of f and w differ");
  return run(gex.base(), f, w, noise, skips, &gex.dilation_schedule());
}

Var synthesize_baseline(const Generator& g, const Var& w, const NoiseField& noise) {
  check_style(g.spec(), w);
  return run(g, op::expand0(g.constant(), w.dim(0)), w, noise, nullptr, nullptr);
}

Var modulated_conv(const Var& x, const Var& weight, const Var& style, int dilation, bool demodulate) {
  const Tensor& wv = weight.value();
  if (wv.ndim() != 4) throw ShapeError("modulated_conv weight must be 4D");
  if (style.value().ndim() != 2 || style.dim(1) != wv.dim(1) || x.value().ndim() != 4 || x.dim(1) != wv.dim(1))
    throw ShapeError("modulated_conv: style/input channels do not match weight " + shape_str(wv.shape()));
  if (dilation < 1) throw ArgumentError("dilation must be >= 1");
  const float ws = conv_scale(wv);
  Var y = op::conv2d(op::mul_channel(x, style), op::scale(weight, ws), {1, dilation * (wv.dim(2) / 2), dilation});
  if (demodulate) y = op::mul_channel(y, op::demod_coeff(style, weight, ws));
  return y;
}

Tensor effective_weight(const Tensor& weight, const Tensor& style, bool demodulate) {
  const int cout = weight.dim(0), cin = weight.dim(1), kk = weight.dim(2) * weight.dim(3);
  const int n = style.dim(0);
  const float ws = conv_scale(weight);
  Tensor out({n, cout, cin * kk});
  for (int b = 0; b < n; ++b)
    for (int o = 0; o < cout; ++o) {
      double norm = 0.0;
      float* dst = out.data() + (static_cast<std::size_t>(b) * cout + o) * cin * kk;
      for (int i = 0; i < cin; ++i)
        for (int k = 0; k < kk; ++k) {
          double v = static_cast<double>(weight[(static_cast<std::size_t>(o) * cin + i) * kk + k]) * ws * style[b * cin + i];
          dst[i * kk + k] = static_cast<float>(v);
          norm += v * v;
        }
      if (demodulate) {
        const double d = 1.0 / std::sqrt(norm + 1e-8);
        for (int j = 0; j < cin * kk; ++j) dst[j] = static_cast<float>(dst[j] * d);
      }
    }
  return out;
}

Var map_z_to_w(const Generator& g, const Var& z, float truncation) {
  Var w = g.map(z);
  const int N = w.dim(0), D = w.dim(1);
  Tensor avg({1, D}, std::vector<float>(g.avg_latent().values().begin(), g.avg_latent().values().end()));
  for (auto& v : avg.values()) v *= (1.0f - truncation);
  Var t = op::add(op::scale(w, truncation), op::expand0(Var(std::move(avg)), N));
  std::vector<Var> rows(g.spec().num_style_layers(), t);
  return op::stack_rows(rows);
}

Var style_mixing(const Var& a, const Var& b, int split) {
  if (a.shape() != b.shape() || a.value().ndim() != 3) throw ShapeError("style_mixing: codes must share shape (N,L,D)");
  const int L = a.dim(1);
  if (split < 0 || split > L) throw ArgumentError("style_mixing split must be in [0, " + std::to_string(L) + "]");
  if (split == L) return a;
  if (split == 0) return b;
  return op::concat_rows(op::slice_rows(a, 0, split), op::slice_rows(b, split, L - split));
}

int receptive_radius(const GeneratorSpec& spec) {
  const auto d = spec.dilation_schedule();
  double r = 0.0;
  for (int k = 1; k <= 7; ++k) r += spec.is_up_layer(k) ? 2.0 * d[k - 1] : d[k - 1];
  // RGB skip smoothing in the shallow blocks.
  r += d[1] + d[3] + d[5];
  for (int res = 64; res <= spec.output_resolution; res *= 2) {
    const double px = static_cast<double>(spec.base_resolution()) / res;  // base pixels per pixel at res
    r += 3.0 * px   // transposed conv + blur, in input pixels (2 * px each)
         + px       // plain conv
         + 2.0 * px;  // rgb skip upsample
  }
  return static_cast<int>(std::ceil(r)) + 1;
}

}  // namespace sgx
