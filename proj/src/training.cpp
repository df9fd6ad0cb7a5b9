#include "sgx/training.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>

namespace sgx {

namespace {

Tensor stack_field(const std::vector<const PairedSample*>& b, Tensor PairedSample::*field) {
  std::vector<Tensor> parts;
  parts.reserve(b.size());
  for (const auto* p : b) {
    if ((p->*field).empty()) throw ArgumentError("training pair is missing a required tensor");
    parts.push_back(p->*field);
  }
  return cat0(parts);
}

Tensor sample_w(const Generator& g, Rng& rng, float truncation) {
  ag::NoGradGuard ng;
  Var z = ag::constant(rng.randn({1, g.spec().latent_dim}));
  return map_z_to_w(g, z, truncation).value();
}

Tensor render(const Generator& g, const Tensor& w, std::uint64_t noise_seed) {
  ag::NoGradGuard ng;
  return synthesize_baseline(g, ag::constant(w), NoiseField::fixed(noise_seed)).value();
}

Tensor style_crop(const Tensor& x, int side) { return img::resize_bilinear(x, side, side); }

Var detach(const Var& v) { return ag::constant(v.value()); }

}  // namespace

TaskSpec TaskSpec::defaults(TaskKind k, bool multi_factor) {
  TaskSpec s;
  s.kind = k;
  switch (k) {
    case TaskKind::Inversion: s.skip_depth = 0; break;
    case TaskKind::SuperRes: s.skip_depth = multi_factor ? 3 : 7; break;
    case TaskKind::Sketch2Face: s.skip_depth = 1; break;
    case TaskKind::Mask2Face: s.skip_depth = 3; break;
    case TaskKind::VideoEdit: s.skip_depth = 13; break;
    case TaskKind::Toonify: s.skip_depth = 13; break;
  }
  return s;
}

bool TaskSpec::adversarial() const {
  return kind == TaskKind::SuperRes || kind == TaskKind::VideoEdit || kind == TaskKind::Toonify;
}

bool TaskSpec::temporal() const { return kind == TaskKind::VideoEdit || kind == TaskKind::Toonify; }

Tensor upsample_input(const Tensor& x, int factor) {
  require_4d(x, "upsample_input");
  if (factor < 1 || factor > 64) throw ArgumentError("upsampling factor must lie in [1, 64]");
  if (factor == 1) return x;
  return img::resize_bilinear(x, x.h() * factor, x.w() * factor);
}

std::string train_log_csv_header() { return "step,total,l2,perceptual,id,reg,tmp,adv_g,adv_d,r1\n"; }

std::string train_log_csv_row(const TrainLog& l) {
  char buf[320];
  std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", l.step, l.total, l.l2,
                l.perceptual, l.id, l.reg, l.tmp, l.adv_g, l.adv_d, l.r1);
  return buf;
}

std::vector<PairedSample> synthesize_pairs(const TaskSpec& spec, const Generator& g0, const Generator* g0_prime,
                                           const Tensor* v, int n, std::uint64_t seed) {
  if (n < 1) throw ArgumentError("need at least one pair");
  if (spec.kind == TaskKind::Toonify && !g0_prime) throw ArgumentError("toonification pairs need G0'");
  if (g0_prime && !(g0_prime->spec() == g0.spec())) throw ArchitectureError("G0 and G0' differ in architecture");
  const int L = g0.spec().num_style_layers(), D = g0.spec().latent_dim;
  if (spec.kind == TaskKind::VideoEdit) {
    if (!v) throw ArgumentError("video editing pairs need an editing vector");
    if (v->shape() != Shape{L, D} && v->shape() != Shape{1, D})
      throw ShapeError("editing vector must be (L, D) or (1, D), got " + shape_str(v->shape()));
  }
  const int H = g0.spec().output_resolution;
  if (spec.kind == TaskKind::SuperRes && (spec.superres_factor < 1 || H % spec.superres_factor))
    throw ConfigError("super-resolution factor must divide the output resolution");

  Rng root(seed);
  std::vector<PairedSample> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    Rng rng = root.substream(static_cast<std::uint64_t>(i));
    PairedSample p;
    p.noise_seed = Rng::mix(seed * 1315423911ULL + static_cast<std::uint64_t>(i));
    const Tensor w = sample_w(g0, rng, spec.truncation);
    const Tensor img = render(g0, w, p.noise_seed);
    switch (spec.kind) {
      case TaskKind::Inversion:
        p.x = img;
        p.y = img;
        p.x_style = style_crop(img, spec.style_size);
        break;
      case TaskKind::SuperRes:
        p.y = img;
        p.x = img::downsample_area(img, spec.superres_factor);
        p.x_style = style_crop(upsample_input(p.x, spec.superres_factor), spec.style_size);
        break;
      case TaskKind::Sketch2Face:
        p.y = img;
        p.x = img::sketch_from_image(img);
        p.y_style = style_crop(img, spec.style_size);
        break;
      case TaskKind::Mask2Face:
        p.y = img;
        p.x = img::mask_from_image(img, spec.mask_classes);
        p.y_style = style_crop(img, spec.style_size);
        break;
      case TaskKind::VideoEdit: {
        p.x = img;
        p.x_style = style_crop(img, spec.style_size);
        p.v_scale = rng.uniform(0.0f, spec.edit_scale_max);
        Tensor sv({L, D});
        for (int l = 0; l < L; ++l)
          for (int d = 0; d < D; ++d)
            sv[static_cast<std::size_t>(l) * D + d] = p.v_scale * (*v)[(v->dim(0) == 1 ? 0 : l) * D + d];
        p.v = sv;
        Tensor we = w;
        for (std::size_t j = 0; j < we.numel(); ++j) we[j] += sv[j];
        p.y = render(g0, we, p.noise_seed);
        break;
      }
      case TaskKind::Toonify:
        p.x = img;
        p.x_style = style_crop(img, spec.style_size);
        p.y = render(*g0_prime, w, p.noise_seed);
        break;
    }
    out.push_back(std::move(p));
  }
  return out;
}

GeometricParams sample_geometric(Rng& rng, const GeometricRanges& r) {
  GeometricParams p;
  p.scale = rng.uniform(static_cast<float>(r.scale_lo), static_cast<float>(r.scale_hi));
  p.rotation_deg = rng.uniform(-static_cast<float>(r.max_rotate_deg), static_cast<float>(r.max_rotate_deg));
  p.tx = rng.uniform(-static_cast<float>(r.max_translate), static_cast<float>(r.max_translate));
  p.ty = rng.uniform(-static_cast<float>(r.max_translate), static_cast<float>(r.max_translate));
  return p;
}

img::Affine geometric_transform(const GeometricParams& p, int h, int w) {
  if (p.scale <= 0) throw ArgumentError("geometric scale must be positive");
  const double cx = (w - 1) / 2.0, cy = (h - 1) / 2.0;
  const double t = -p.rotation_deg * std::numbers::pi / 180.0;
  const double c = p.scale * std::cos(t), s = p.scale * std::sin(t);
  // Forward map: out = S R (in - c) + c + t.
  const img::Affine fwd{c, -s, cx - c * cx + s * cy + p.tx * w, s, c, cy - s * cx - c * cy + p.ty * h};
  return img::affine_invert(fwd);
}

Tensor apply_geometric(const Tensor& x, const GeometricParams& p) {
  require_4d(x, "apply_geometric");
  const img::Affine m = geometric_transform(p, x.h(), x.w());
  if (m == img::affine_identity()) return x;
  return img::warp_affine(x, m, x.h(), x.w());
}

std::pair<Tensor, Tensor> augment_geometric(const Tensor& x, const Tensor& y, std::uint64_t seed,
                                            const GeometricRanges& r) {
  Rng rng(seed);
  const GeometricParams p = sample_geometric(rng, r);
  return {apply_geometric(x, p), apply_geometric(y, p)};
}

std::vector<Var> TaskModels::trainable() const {
  std::vector<Var> out;
  if (encoder)
    for (const auto& [name, v] : encoder->params().items())
      if (v.requires_grad()) out.push_back(v);
  if (translator)
    for (const auto& [name, v] : translator->params().items())
      if (v.requires_grad()) out.push_back(v);
  return out;
}

TaskModels make_task_models(const TaskSpec& spec, std::shared_ptr<const GeneratorEX> generator, std::uint64_t seed,
                            const EncoderSpec& enc_spec) {
  if (!generator) throw ArgumentError("task models need a generator");
  if (!valid_skip_depth(spec.skip_depth)) throw ConfigError("invalid skip depth");
  Rng root(seed);
  TaskModels m;
  m.generator = generator;
  m.encoder = std::make_shared<Encoder>(enc_spec, generator->base(), root.substream("encoder").seed());
  if (spec.uses_translation())
    m.translator = std::make_shared<TranslationNet>(spec.translation_channels(), spec.translation_width,
                                                    root.substream("translation").seed());
  if (spec.adversarial())
    m.discriminator = std::make_shared<Discriminator>(spec.disc_crop, spec.disc_width,
                                                      root.substream("discriminator").seed());
  return m;
}

TaskOutput task_forward(const TaskSpec& spec, const TaskModels& m, const std::vector<const PairedSample*>& batch,
                        const NoiseField& noise) {
  if (batch.empty()) throw ArgumentError("empty batch");
  const Encoder& enc = *m.encoder;
  TaskOutput o;
  switch (spec.kind) {
    case TaskKind::Inversion:
    case TaskKind::Toonify: {
      Var x = ag::constant(stack_field(batch, &PairedSample::x));
      std::tie(o.f, o.skips) = enc.encode_feature(x, spec.skip_depth);
      o.w = enc.encode_style(ag::constant(stack_field(batch, &PairedSample::x_style)));
      break;
    }
    case TaskKind::SuperRes: {
      Var x = ag::constant(upsample_input(stack_field(batch, &PairedSample::x), spec.superres_factor));
      std::tie(o.f, o.skips) = enc.encode_feature(x, spec.skip_depth);
      o.w = enc.encode_style(ag::constant(stack_field(batch, &PairedSample::x_style)));
      break;
    }
    case TaskKind::Sketch2Face:
    case TaskKind::Mask2Face: {
      if (!m.translator) throw ConfigError("translation task without a translation network");
      Var tx = (*m.translator)(ag::constant(stack_field(batch, &PairedSample::x)));
      const auto stages = enc.backbone(tx);
      std::tie(o.f, o.skips) = enc.encode_feature_from(stages, spec.skip_depth);
      Var w_struct = enc.encode_style_from(stages);
      Var w_tex = enc.encode_style(ag::constant(stack_field(batch, &PairedSample::y_style)));
      o.w = compose_style(w_struct, w_tex, spec.style_split);
      break;
    }
    case TaskKind::VideoEdit: {
      Var x = ag::constant(stack_field(batch, &PairedSample::x));
      std::tie(o.f, o.skips) = enc.encode_feature(x, spec.skip_depth);
      Var w = enc.encode_style(ag::constant(stack_field(batch, &PairedSample::x_style)));
      Tensor v = stack_field(batch, &PairedSample::v);
      o.w = op::add(w, ag::constant(v.reshaped(w.shape())));
      break;
    }
  }
  o.y_hat = synthesize(*m.generator, o.f, o.w, noise, &o.skips);
  return o;
}

namespace {

struct StepTerms {
  Var total;
  TrainLog log;
};

// Every term but the adversarial one.
StepTerms objective(const TaskSpec& spec, const LossWeights& lw, const TaskModels& m, const TaskOutput& o,
                    const Var& y, const PerceptualMetric& metric, const IdentityEmbedder* embedder,
                    const NoiseField& second_noise) {
  StepTerms t;
  RecTerms rec = loss_rec(o.y_hat, y, lw, metric, embedder);
  t.total = rec.total;
  t.log.l2 = rec.l2;
  t.log.perceptual = rec.perceptual;
  t.log.id = rec.id;
  if (lw.reg > 0) {
    Var r = loss_reg(o.w, m.generator->base().avg_latent());
    t.log.reg = r.value()[0];
    t.total = op::add(t.total, op::scale(r, static_cast<float>(lw.reg)));
  }
  if (spec.temporal() && lw.tmp > 0) {
    Var y2 = synthesize(*m.generator, o.f, o.w, second_noise, &o.skips);
    Var tmp = loss_tmp(o.y_hat, y2);
    t.log.tmp = tmp.value()[0];
    t.total = op::add(t.total, op::scale(tmp, static_cast<float>(lw.tmp)));
  }
  return t;
}

}  // namespace

double evaluate_task(const TaskSpec& spec, const LossWeights& lw, const TaskModels& m,
                     const std::vector<PairedSample>& data, const PerceptualMetric& metric,
                     const IdentityEmbedder* embedder, std::uint64_t noise_seed) {
  if (data.empty()) throw ArgumentError("no evaluation pairs");
  ag::NoGradGuard ng;
  const int bs = std::max(1, spec.batch);
  double acc = 0.0;
  for (std::size_t i = 0; i < data.size(); i += bs) {
    std::vector<const PairedSample*> batch;
    for (std::size_t j = i; j < std::min(data.size(), i + bs); ++j) batch.push_back(&data[j]);
    const auto o = task_forward(spec, m, batch, NoiseField::fixed(noise_seed));
    Var y = ag::constant(stack_field(batch, &PairedSample::y));
    const auto t = objective(spec, lw, m, o, y, metric, embedder, NoiseField::fixed(noise_seed ^ 0x5bd1e995ULL));
    acc += t.total.value()[0] * static_cast<double>(batch.size());
  }
  return acc / static_cast<double>(data.size());
}

TrainResult train_task(const TaskSpec& spec, const LossWeights& lw, TaskModels& m,
                       const std::vector<PairedSample>& data, int steps, std::uint64_t seed,
                       const PerceptualMetric& metric, const IdentityEmbedder* embedder,
                       const std::function<void(const TrainLog&)>& on_step) {
  if (data.empty()) throw ArgumentError("no training pairs");
  if (steps < 0) throw ArgumentError("negative step count");
  const bool adv = spec.adversarial() && lw.adv > 0;
  if (adv && !m.discriminator) throw ConfigError("adversarial task without a discriminator");
  if (adv && m.generator->spec().output_resolution < spec.disc_crop)
    throw ConfigError("discriminator crop exceeds the output size");

  TrainResult res;
  const std::uint64_t eval_seed = Rng::mix(seed ^ 0xe7a1ULL);
  res.generator_checksum_before = m.generator->params().checksum();
  res.eval_before = evaluate_task(spec, lw, m, data, metric, embedder, eval_seed);

  nn::Adam opt(m.trainable(), spec.lr);
  std::unique_ptr<nn::Adam> dopt;
  if (adv) dopt = std::make_unique<nn::Adam>(m.discriminator->params().vars(), spec.disc_lr);

  Rng rng(seed);
  Rng order = rng.substream("order");
  Rng crops = rng.substream("crops");
  std::vector<std::size_t> idx(data.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::size_t cursor = idx.size();
  const int bs = std::max(1, std::min<int>(spec.batch, static_cast<int>(data.size())));

  for (int step = 0; step < steps; ++step) {
    std::vector<const PairedSample*> batch;
    std::vector<PairedSample> augmented;
    augmented.reserve(bs);
    for (int b = 0; b < bs; ++b) {
      if (cursor >= idx.size()) {
        for (std::size_t i = idx.size(); i > 1; --i)
          std::swap(idx[i - 1], idx[order.uniform_int(0, static_cast<int>(i - 1))]);
        cursor = 0;
      }
      const PairedSample& p = data[idx[cursor++]];
      if (spec.augment && spec.kind != TaskKind::SuperRes) {
        PairedSample a = p;
        std::tie(a.x, a.y) = augment_geometric(p.x, p.y, order.substream(static_cast<std::uint64_t>(step * bs + b)).seed());
        augmented.push_back(std::move(a));
        batch.push_back(&augmented.back());
      } else {
        batch.push_back(&p);
      }
    }

    const std::uint64_t step_seed = Rng::mix(seed + 0x100000001b3ULL * static_cast<std::uint64_t>(step + 1));
    TaskOutput o = task_forward(spec, m, batch, NoiseField::random(step_seed));
    Var y = ag::constant(stack_field(batch, &PairedSample::y));
    StepTerms t = objective(spec, lw, m, o, y, metric, embedder, NoiseField::random(step_seed ^ 0x9e37ULL));
    Var total = t.total;
    if (adv) {
      Var g = gen_adv_loss(*m.discriminator, random_crop(o.y_hat, spec.disc_crop, crops));
      t.log.adv_g = g.value()[0];
      total = op::add(total, op::scale(g, static_cast<float>(lw.adv)));
    }
    t.log.total = total.value()[0];
    if (!std::isfinite(t.log.total))
      throw OptimizationError("non-finite training loss at step " + std::to_string(step), step);

    opt.zero_grad();
    ag::backward(total);
    opt.step();

    if (adv) {
      m.discriminator->params().zero_grad();
      Var real = random_crop(y, spec.disc_crop, crops);
      Var fake = random_crop(detach(o.y_hat), spec.disc_crop, crops);
      Var dl = disc_loss(*m.discriminator, real, fake);
      t.log.adv_d = dl.value()[0];
      ag::backward(dl);
      if (spec.r1_every > 0 && step % spec.r1_every == 0)
        t.log.r1 = m.discriminator->accumulate_r1(real.value(), spec.r1_gamma * static_cast<float>(spec.r1_every));
      dopt->step();
    }

    t.log.step = step;
    res.history.push_back(t.log);
    if (on_step) on_step(t.log);
  }

  res.eval_after = evaluate_task(spec, lw, m, data, metric, embedder, eval_seed);
  res.generator_checksum_after = m.generator->params().checksum();
  if (res.generator_checksum_after != res.generator_checksum_before)
    throw InvariantError("generator parameters changed during training");
  return res;
}

}  // namespace sgx
