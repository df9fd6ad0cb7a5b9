#include "sgx/inversion.hpp"

#include <cmath>

#include "sgx/imaging.hpp"

namespace sgx {

namespace {

Var objective(const GeneratorEX& gex, const Var& f, const Var& w, const Var& target, const PerceptualMetric& metric,
              const InvertConfig& cfg, const NoiseField& noise) {
  Var y = synthesize(gex, f, w, noise);
  Var loss = metric.distance(y, target);
  if (cfg.pixel_l2) loss = op::add(loss, op::scale(op::mse(y, target), cfg.pixel_l2_weight));
  return loss;
}

}  // namespace

InversionResult invert_step1(const Encoder& enc, const GeneratorEX& gex, const Tensor& x, const Tensor* x_aligned,
                             const PerceptualMetric& metric, const NoiseField& noise, const InvertConfig& cfg) {
  require_4d(x, "invert_step1");
  ag::NoGradGuard ng;
  Tensor style_in = (cfg.use_aligned && x_aligned) ? *x_aligned : img::resize_bilinear(x, cfg.style_size, cfg.style_size);
  auto [f, skips] = enc.encode_feature(Var(x), 0);
  Var w = enc.encode_style(Var(style_in));
  InversionResult r;
  r.f = f.value();
  r.w = w.value();
  r.spec = gex.spec();
  r.step1_loss = objective(gex, f, w, Var(x), metric, cfg, noise).value()[0];
  r.step2_loss = r.step1_loss;
  return r;
}

InversionResult invert_step2(const GeneratorEX& gex, const Tensor& x, const InversionResult& init,
                             const PerceptualMetric& metric, const InvertConfig& cfg, const NoiseField& noise) {
  if (cfg.steps < 0) throw ArgumentError("iteration count must be non-negative");
  if (init.f.empty() || init.w.empty()) throw ArgumentError("inversion needs an initial f and w");
  if (!(init.spec == gex.spec())) throw ArchitectureError("initialisation was produced for another generator");
  Var f = ag::param(init.f);
  Var w = ag::param(init.w);
  Var target(x);
  nn::Adam opt(std::vector<nn::Adam::Group>{{{w}, cfg.lr_w}, {{f}, cfg.lr_f}});

  InversionResult best = init;
  best.trace.clear();
  best.step2_loss = INFINITY;
  for (int it = 0; it <= cfg.steps; ++it) {
    Var loss = objective(gex, f, w, target, metric, cfg, noise);
    const double v = loss.value()[0];
    if (!std::isfinite(v)) throw OptimizationError("non-finite inversion loss at iteration " + std::to_string(it), it);
    best.trace.push_back(v);
    if (v < best.step2_loss) {
      best.step2_loss = v;
      best.f = f.value();
      best.w = w.value();
    }
    if (it == cfg.steps) break;
    opt.zero_grad();
    ag::backward(loss);
    opt.step();
  }
  best.iterations_used = cfg.steps;
  return best;
}

Tensor edit_latent(const Tensor& w, const Tensor& v, double scale) {
  if (w.ndim() != 3) throw ShapeError("style code must be (N, L, D), got " + shape_str(w.shape()));
  const int N = w.dim(0), L = w.dim(1), D = w.dim(2);
  const bool broadcast = v.shape() == Shape{1, D};
  if (!broadcast && v.shape() != Shape{L, D})
    throw ShapeError("editing vector " + shape_str(v.shape()) + " does not match style code " + shape_str(w.shape()));
  if (!std::isfinite(scale) || !all_finite(v)) throw ArgumentError("editing vector must be finite");
  if (scale == 0.0) return w;
  Tensor out = w;
  const float s = static_cast<float>(scale);
  for (int n = 0; n < N; ++n)
    for (int l = 0; l < L; ++l)
      for (int d = 0; d < D; ++d)
        out[(static_cast<std::size_t>(n) * L + l) * D + d] += s * v[(broadcast ? 0 : l) * D + d];
  return out;
}

Tensor edit_latent(const Tensor& w, const EditingVector& e) { return edit_latent(w, e.v, e.scale); }

Tensor domain_transfer(const InversionResult& inv, const GeneratorEX& g_prime, const NoiseField& noise) {
  if (!(inv.spec == g_prime.spec())) throw ArchitectureError("target generator architecture differs from the inverted one");
  ag::NoGradGuard ng;
  return synthesize(g_prime, Var(inv.f), Var(inv.w), noise).value();
}

Tensor shift_feature(const Tensor& f, double dy, double dx) {
  require_4d(f, "shift_feature");
  if (std::fabs(dy) >= f.h() || std::fabs(dx) >= f.w()) throw ArgumentError("shift exceeds the feature extent");
  if (dy == 0.0 && dx == 0.0) return f;
  return img::shift(f, dy, dx);
}

Tensor rotate_feature(const Tensor& f, double degrees) {
  if (degrees == 0.0) return f;
  return img::rotate(f, degrees);
}

Tensor manual_crop(const Tensor& x, const Rect& r, int size) {
  require_4d(x, "manual_crop");
  if (r.h <= 0 || r.w <= 0 || r.y < 0 || r.x < 0 || r.y + r.h > x.h() || r.x + r.w > x.w())
    throw ArgumentError("crop rectangle is empty or out of bounds");
  if (size < 1) throw ArgumentError("crop size must be positive");
  return img::resize_bilinear(img::crop(x, r.y, r.x, r.h, r.w), size, size);
}

}  // namespace sgx
