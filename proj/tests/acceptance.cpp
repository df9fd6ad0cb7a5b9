// Acceptance criteria 1-11. One line per criterion; exit status 1 if any gated one fails.
// Usage: sgx_acceptance [criterion numbers...]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <set>
#include <string>

#include "sgx/encoder.hpp"
#include "sgx/inversion.hpp"
#include "sgx/training.hpp"
#include "sgx/verify.hpp"

using namespace sgx;
using ag::Var;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... a) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, a...);
  return buf;
}

Var style_for(const Generator& g, std::uint64_t seed) {
  return map_z_to_w(g, Var(Rng(seed).substream("style").randn({1, g.spec().latent_dim})), 0.7f);
}

// 1
Outcome compatibility() {
  double worst = 0;
  std::string per;
  for (int res : {32, 64, 256}) {
    double r = 0;
    for (std::uint64_t s = 0; s < 5; ++s) r = std::max(r, compatibility_deviation(GeneratorSpec::desk(res), s));
    per += fmt(" %d:%.2e", res, r);
    worst = std::max(worst, r);
  }
  auto wrong = GeneratorSpec::desk(64).dilation_schedule();
  wrong[2] = 1;
  const double mutated = compatibility_deviation(GeneratorSpec::desk(64), 0, wrong);
  return {worst <= 1e-4 && mutated > 1e-4,
          fmt("max dev %.3e (tol 1e-4) per res%s; wrong dilation gives %.2e", worst, per.c_str(), mutated)};
}

// 2
Outcome shape_law() {
  ag::NoGradGuard ng;
  // 1024 output needs M = 32, so the pipeline output is 4H x 4W of x1.
  auto g = std::make_shared<Generator>(GeneratorSpec::desk(1024), 1);
  GeneratorEX gex(g);
  Encoder enc(EncoderSpec::desk(), *g, 2);
  const int C = g->spec().base_channels();
  bool ok = true;
  std::string d;
  for (auto [H, W] : {std::pair{256, 256}, {320, 288}, {448, 352}}) {
    Tensor x1 = Rng(H + W).randn({1, 3, H, W}, 0.5f);
    Tensor x2 = img::resize_bilinear(x1, 256, 256);
    auto [f, skips] = enc.encode_feature(Var(x1), 0);
    Var y = encoder_forward(enc, gex, Var(x1), Var(x2), 13, NoiseField::zero());
    const bool fo = f.shape() == Shape{1, C, H / 8, W / 8};
    const bool yo = y.shape() == Shape{1, 3, 4 * H, 4 * W};
    ok = ok && fo && yo;
    d += fmt(" %dx%d->f %dx%d y %dx%d;", H, W, f.dim(2), f.dim(3), y.dim(2), y.dim(3));
  }
  // Non-divisible input: rejected by the encoder, accepted after padding.
  Tensor odd = Rng(5).randn({1, 3, 250, 300});
  bool rejected = false;
  try {
    enc.encode_feature(Var(odd), 0);
  } catch (const InputContractError&) {
    rejected = true;
  }
  img::PadInfo info;
  Tensor padded = img::pad_to_grid(odd, 32, &info);
  const bool pad_ok = padded.h() == 256 && padded.w() == 320 && bit_equal(img::unpad(padded, info), odd);
  return {ok && rejected && pad_ok, d + fmt(" 250x300 rejected=%d padded->256x320=%d", rejected, pad_ok)};
}

// 3
Outcome equivariance() {
  const GeneratorSpec s = GeneratorSpec::desk(256);
  const int side = 2 * receptive_radius(s) + 12;
  const double a = equivariance_deviation(s, 0, 1, 0, side, side);
  const double b = equivariance_deviation(s, 0, 0, 2, side, side);
  return {a <= 1e-4 && b <= 1e-4,
          fmt("(1,0)->(%d,0) dev %.2e, (0,2)->(0,%d) dev %.2e (tol 1e-4), feature %dx%d, border %d px", s.scale_factor(),
              a, 2 * s.scale_factor(), b, side, side, s.scale_factor() * receptive_radius(s))};
}

// 4
Outcome parameter_identity() {
  bool ok = true;
  std::string d;
  for (GeneratorSpec s : {GeneratorSpec::desk(256), GeneratorSpec::stylegan2(256)}) {
    auto g = std::make_shared<Generator>(s, 3);
    const auto before = g->params().checksum();
    GeneratorEX gex = refactor(g);
    {
      ag::NoGradGuard ng;
      (void)synthesize(gex, Var(upsample_constant(*g)), style_for(*g, 1), NoiseField::fixed(1));
    }
    const auto after = gex.params().checksum();
    ok = ok && before == after && g->params().checksum() == before;
    d += fmt(" %016llx/%016llx", static_cast<unsigned long long>(before), static_cast<unsigned long long>(after));
  }
  return {ok, "checksums before/after (desk, full widths):" + d};
}

// 5
Outcome gradients() {
  double worst = 0;
  std::string d;
  for (int dil : {1, 2, 8}) {
    const auto e = modulated_conv_gradcheck(dil, 5);
    const double m = std::max({e[0], e[1], e[2]});
    worst = std::max(worst, m);
    d += fmt(" d%d: %.1e/%.1e/%.1e", dil, e[0], e[1], e[2]);
  }
  return {worst < 1e-3, fmt("max rel err %.2e (tol 1e-3); input/weight/style", worst) + d};
}

// 6
Outcome fixed_point() {
  auto g = std::make_shared<Generator>(GeneratorSpec::desk(256), 4);
  GeneratorEX gex(g);
  InversionResult init;
  init.spec = g->spec();
  init.f = Rng(5).randn({1, g->spec().base_channels(), 32, 32});
  {
    ag::NoGradGuard ng;
    init.w = style_for(*g, 6).value();
  }
  Tensor x;
  {
    ag::NoGradGuard ng;
    x = synthesize(gex, Var(init.f), Var(init.w), NoiseField::zero()).value();
  }
  RandomFeatureMetric metric;
  InvertConfig cfg;
  cfg.steps = 100;
  InversionResult r = invert_step2(gex, x, init, metric, cfg);
  double peak = 0;
  for (double v : r.trace) peak = std::max(peak, v);
  return {r.trace[0] <= 1e-6 && peak <= r.trace[0],
          fmt("loss[0] %.3e (tol 1e-6), max over %zu iterates %.3e", r.trace[0], r.trace.size(), peak)};
}

// 7
Outcome ordering() {
  auto g = std::make_shared<Generator>(GeneratorSpec::desk(256), 1);
  auto gex = std::make_shared<GeneratorEX>(g);
  TaskSpec spec = TaskSpec::defaults(TaskKind::Inversion);
  spec.lr = 3e-3f;
  spec.style_size = 128;
  auto data = synthesize_pairs(spec, *g, nullptr, nullptr, 64, 42);
  auto m = make_task_models(spec, gex, 3);
  RandomFeatureMetric metric;
  LossWeights lw = LossWeights::defaults(TaskKind::Inversion);
  lw.id = 0;  // no face recogniser at desk scale
  const TrainResult tr = train_task(spec, lw, m, data, 150, 9, metric, nullptr);
  bool ok = tr.eval_after < tr.eval_before;
  std::string d = fmt("encoder eval %.3f->%.3f;", tr.eval_before, tr.eval_after);
  Encoder untrained(EncoderSpec::desk(), *g, 77);
  double trained_step1 = 0, untrained_step1 = 0;
  for (int s = 0; s < 3; ++s) {
    Tensor x;
    {
      ag::NoGradGuard ng;
      x = synthesize_baseline(*g, style_for(*g, 1000 + s), NoiseField::zero()).value();
    }
    const Tensor crop = img::resize_bilinear(x, spec.style_size, spec.style_size);
    InvertConfig cfg;
    cfg.steps = 200;
    InversionResult a = invert_step1(*m.encoder, *gex, x, &crop, metric, NoiseField::zero(), cfg);
    trained_step1 += a.step1_loss;
    untrained_step1 += invert_step1(untrained, *gex, x, &crop, metric, NoiseField::zero(), cfg).step1_loss;
    InversionResult b = a;
    b.f = Rng(77 + s).randn(a.f.shape());
    const int L = a.w.dim(1), D = a.w.dim(2);
    for (int l = 0; l < L; ++l)
      for (int k = 0; k < D; ++k) b.w[l * D + k] = g->avg_latent()[k];
    const double la = invert_step2(*gex, x, a, metric, cfg).step2_loss;
    const double lb = invert_step2(*gex, x, b, metric, cfg).step2_loss;
    ok = ok && la < lb;
    d += fmt(" seed %d: step-I init %.4f vs mean-w/random-f %.4f;", s, la, lb);
  }
  d += fmt(" step-I loss trained %.3f vs untrained %.3f", trained_step1 / 3, untrained_step1 / 3);
  return {ok, d};
}

// 8
Outcome training_descent() {
  RandomFeatureMetric metric;
  bool ok = true;
  std::string d;
  for (TaskKind k : {TaskKind::SuperRes, TaskKind::Sketch2Face, TaskKind::VideoEdit, TaskKind::Toonify}) {
    int down = 0;
    bool frozen = true;
    std::string per;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      auto g = std::make_shared<Generator>(GeneratorSpec::desk(256), 100 + seed);
      std::shared_ptr<Generator> prime;
      if (k == TaskKind::Toonify) {
        // G0′: G0 with perturbed deep layers, same architecture.
        prime = std::make_shared<Generator>(g->clone());
        Rng r(200 + seed);
        for (const auto& [name, v] : prime->params().items())
          if (name.find("layer1") != std::string::npos) {
            Var p = v;
            for (auto& x : p.mutable_value().values()) x *= 1.0f + 0.3f * r.normal();
          }
      }
      Tensor v = Rng(300 + seed).randn({1, g->spec().latent_dim}, 0.5f);
      const TaskSpec spec = TaskSpec::defaults(k);
      auto data = synthesize_pairs(spec, *g, prime.get(), &v, 64, 400 + seed);
      std::shared_ptr<const GeneratorEX> gex = std::make_shared<GeneratorEX>(prime ? prime : g);
      TaskModels m = make_task_models(spec, gex, 500 + seed);
      const auto before = gex->params().checksum();
      TrainResult r = train_task(spec, LossWeights::defaults(k), m, data, 50, 600 + seed, metric, nullptr);
      down += r.eval_after < r.eval_before;
      frozen = frozen && r.generator_checksum_after == before && gex->params().checksum() == before;
      per += fmt(" %.4f->%.4f", r.eval_before, r.eval_after);
    }
    ok = ok && down >= 2 && frozen;
    d += fmt(" %s %d/3 [%s ] frozen=%d;", task_name(k), down, per.c_str(), frozen);
  }
  return {ok, d};
}

// 9
Outcome loss_identities() {
  auto g = std::make_shared<Generator>(GeneratorSpec::desk(256), 7);
  GeneratorEX gex(g);
  RandomFeatureMetric metric;
  RandomIdentityEmbedder emb;
  ag::NoGradGuard ng;
  Var w = style_for(*g, 8);
  Tensor f = Rng(9).randn({1, g->spec().base_channels(), 32, 32});
  Var y = synthesize(gex, Var(f), w, NoiseField::fixed(3));
  const double rec = loss_rec(y, y, LossWeights::defaults(TaskKind::Inversion), metric, &emb).total.value()[0];
  const int L = g->spec().num_style_layers(), D = g->spec().latent_dim;
  Tensor wbar({1, L, D});
  for (int l = 0; l < L; ++l)
    for (int k = 0; k < D; ++k) wbar[l * D + k] = g->avg_latent()[k];
  const double reg = loss_reg(Var(wbar), g->avg_latent()).value()[0];
  const double tmp =
      loss_tmp(synthesize(gex, Var(f), w, NoiseField::zero()), synthesize(gex, Var(f), w, NoiseField::zero())).value()[0];
  const Tensor v = Rng(10).randn({L, D});
  const bool edit0 =
      bit_equal(synthesize(gex, Var(f), Var(edit_latent(w.value(), v, 0.0)), NoiseField::fixed(3)).value(), y.value());
  struct Row {
    TaskKind k;
    LossWeights w;
  };
  bool table = true;
  for (Row r : {Row{TaskKind::Inversion, {1e-4, 1, 0.8, 0.1, 0.1, 30}}, Row{TaskKind::SuperRes, {0, 1, 0.8, 0, 0.1, 30}},
                Row{TaskKind::Sketch2Face, {0.005, 1, 0.8, 0, 0.1, 30}}, Row{TaskKind::Mask2Face, {0.005, 1, 0.8, 0, 0.1, 30}},
                Row{TaskKind::VideoEdit, {0, 1, 0.8, 0, 0.1, 30}}, Row{TaskKind::Toonify, {0, 1, 0.8, 0, 0.1, 30}}})
    table = table && LossWeights::defaults(r.k) == r.w;
  return {rec == 0 && reg == 0 && tmp == 0 && edit0 && table,
          fmt("rec(y,y)=%g reg(wbar)=%g tmp(zero noise)=%g edit(s=0) bit-exact=%d lambda snapshot=%d", rec, reg, tmp,
              edit0, table)};
}

// 10
Outcome metric_oracles() {
  auto g = std::make_shared<Generator>(GeneratorSpec::desk(64), 11);
  GeneratorEX gex(g);
  RandomIdentityEmbedder emb;
  ag::NoGradGuard ng;
  std::vector<Tensor> orig, edited;
  const Tensor v = Rng(12).randn({1, g->spec().latent_dim});
  const Tensor f = Rng(13).randn({1, g->spec().base_channels(), 8, 8});
  for (int i = 0; i < 10; ++i) {
    const Tensor w = style_for(*g, 20 + static_cast<std::uint64_t>(i % 3)).value();
    orig.push_back(synthesize(gex, Var(img::shift(f, 0, 0.3 * i)), Var(w), NoiseField::fixed(i)).value());
    edited.push_back(synthesize(gex, Var(img::shift(f, 0, 0.3 * i)), Var(edit_latent(w, v, 1.5)), NoiseField::fixed(i)).value());
  }
  auto brute = [&](const Tensor& a, const Tensor& b) {
    const Tensor ea = emb.embed(Var(a)).value(), eb = emb.embed(Var(b)).value();
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t i = 0; i < ea.numel(); ++i)
      ab += double(ea[i]) * eb[i], aa += double(ea[i]) * ea[i], bb += double(eb[i]) * eb[i];
    return 1.0 - ab / std::sqrt(aa * bb);
  };
  double c = 0, m = 0;
  for (int i = 0; i < 10; ++i) c += brute(edited[i], orig[i]);
  for (int i = 1; i < 10; ++i) m += brute(edited[i], edited[0]);
  c /= 10, m /= 9;
  const double dc = std::fabs(metric_id_consistency(edited, orig, emb) - c);
  const double dm = std::fabs(metric_id_maintenance(edited, emb) - m);
  return {dc <= 1e-8 && dm <= 1e-8, fmt("ID-c %.6f (|diff| %.1e), ID-m %.6f (|diff| %.1e), tol 1e-8", c, dc, m, dm)};
}

// 11
Outcome timing() {
  const GeneratorSpec s = GeneratorSpec::stylegan2(1024);
  auto g = std::make_shared<Generator>(s, 1);
  GeneratorEX gex(g);
  ag::NoGradGuard ng;
  Var w = style_for(*g, 2);
  const Var f(upsample_constant(*g));
  auto t0 = Clock::now();
  Tensor a = synthesize_baseline(*g, w, NoiseField::zero()).value();
  auto t1 = Clock::now();
  Tensor b = synthesize(gex, f, w, NoiseField::zero()).value();
  auto t2 = Clock::now();
  const double tb = std::chrono::duration<double>(t1 - t0).count(), te = std::chrono::duration<double>(t2 - t1).count();
  const double overhead = te / tb - 1.0;
  return {overhead <= 0.25, fmt("1024 full widths: baseline %.2fs refactored %.2fs overhead %+.1f%% (informational, ~25%%); dev %.1e",
                                tb, te, 100 * overhead, max_abs_diff(a, b))};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
    bool gated;
  };
  const Criterion all[] = {
      {1, "compatibility identity", compatibility, true},
      {2, "shape law", shape_law, true},
      {3, "translation equivariance", equivariance, true},
      {4, "parameter identity", parameter_identity, true},
      {5, "gradient checks", gradients, true},
      {6, "inversion fixed point", fixed_point, true},
      {7, "inversion ordering", ordering, true},
      {8, "training descent", training_descent, true},
      {9, "loss identities", loss_identities, true},
      {10, "metric oracles", metric_oracles, true},
      {11, "timing", timing, false},
  };
  int failed = 0;
  for (const auto& c : all) {
    if (!only.empty() && !only.count(c.id)) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    const char* tag = o.pass ? "PASS" : c.gated ? "FAIL" : "INFO";
    std::printf("%s [%2d] %s (%.1fs): %s\n", tag, c.id, c.name, secs, o.detail.c_str());
    std::fflush(stdout);
    if (!o.pass && c.gated) ++failed;
  }
  std::printf("%s\n", failed ? "acceptance: FAILED" : "acceptance: all gated criteria passed");
  return failed ? 1 : 0;
}
