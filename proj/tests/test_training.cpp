#include <cmath>
#include <numbers>

#include "doctest.h"
#include "sgx/training.hpp"

using namespace sgx;
using ag::Var;

namespace {

// Embedding = per-channel spatial mean; lets tests pick exact directions.
class MeanColorEmbedder : public IdentityEmbedder {
 public:
  Var embed(const Var& img) const override { return op::global_avg_pool(img); }
};

struct Toy {
  std::shared_ptr<Generator> g;
  std::shared_ptr<const GeneratorEX> gex;
  explicit Toy(int res = 256, std::uint64_t seed = 1)
      : g(std::make_shared<Generator>(GeneratorSpec::desk(res), seed)), gex(std::make_shared<GeneratorEX>(g)) {}
};

Tensor constant_image(float r, float g, float b, int side = 16) {
  Tensor t({1, 3, side, side});
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x) t.at(0, 0, y, x) = r, t.at(0, 1, y, x) = g, t.at(0, 2, y, x) = b;
  return t;
}

double brute_one_minus_cos(const IdentityEmbedder& e, const Tensor& a, const Tensor& b) {
  ag::NoGradGuard ng;
  const Tensor ea = e.embed(Var(a)).value(), eb = e.embed(Var(b)).value();
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < ea.numel(); ++i) ab += double(ea[i]) * eb[i], aa += double(ea[i]) * ea[i], bb += double(eb[i]) * eb[i];
  return 1.0 - ab / std::sqrt(aa * bb);
}

}  // namespace

TEST_CASE("loss weight defaults per task") {
  // λ2 = 1, λ3 = 0.8 everywhere; λ4 = 0.1 only for inversion; λ1 = 1e-4 inversion,
  // 0.005 sketch/mask; λ5 = 0.1; λ6 = 30.
  struct Row {
    TaskKind k;
    double reg, id;
  };
  for (Row r : {Row{TaskKind::Inversion, 1e-4, 0.1}, Row{TaskKind::SuperRes, 0, 0}, Row{TaskKind::Sketch2Face, 0.005, 0},
                Row{TaskKind::Mask2Face, 0.005, 0}, Row{TaskKind::VideoEdit, 0, 0}, Row{TaskKind::Toonify, 0, 0}}) {
    const LossWeights w = LossWeights::defaults(r.k);
    CHECK(w.reg == r.reg);
    CHECK(w.l2 == 1.0);
    CHECK(w.perceptual == 0.8);
    CHECK(w.id == r.id);
    CHECK(w.adv == 0.1);
    CHECK(w.tmp == 30.0);
  }
}

TEST_CASE("task spec defaults") {
  CHECK(TaskSpec::defaults(TaskKind::Inversion).skip_depth == 0);
  CHECK(TaskSpec::defaults(TaskKind::SuperRes).skip_depth == 7);
  CHECK(TaskSpec::defaults(TaskKind::SuperRes, true).skip_depth == 3);
  CHECK(TaskSpec::defaults(TaskKind::Sketch2Face).skip_depth == 1);
  CHECK(TaskSpec::defaults(TaskKind::Mask2Face).skip_depth == 3);
  CHECK(TaskSpec::defaults(TaskKind::VideoEdit).skip_depth == 13);
  CHECK(TaskSpec::defaults(TaskKind::Toonify).skip_depth == 13);
  CHECK(TaskSpec::defaults(TaskKind::SuperRes).adversarial());
  CHECK(TaskSpec::defaults(TaskKind::VideoEdit).adversarial());
  CHECK(TaskSpec::defaults(TaskKind::Toonify).temporal());
  CHECK_FALSE(TaskSpec::defaults(TaskKind::Sketch2Face).adversarial());
  CHECK_FALSE(TaskSpec::defaults(TaskKind::SuperRes).temporal());
  CHECK(TaskSpec::defaults(TaskKind::Mask2Face).translation_channels() == 4);
  for (const char* n : {"inversion", "superres", "sketch2face", "mask2face", "video_edit", "toonify"})
    CHECK(std::string(task_name(parse_task(n))) == n);
  CHECK_THROWS_AS(parse_task("colorize"), ConfigError);
}

TEST_CASE("loss_rec") {
  RandomFeatureMetric metric;
  Tensor y = Rng(1).randn({2, 3, 32, 32}, 0.5f);
  LossWeights lw = LossWeights::defaults(TaskKind::SuperRes);
  // λ4 = 0: no embedder needed.
  RecTerms same = loss_rec(Var(y), Var(y), lw, metric, nullptr);
  CHECK(same.total.value()[0] == 0.0f);
  Tensor yc = y;
  for (auto& v : yc.values()) v += 0.25f;
  LossWeights only_l2{0, 1, 0, 0, 0, 0};
  CHECK(loss_rec(Var(yc), Var(y), only_l2, metric, nullptr).total.value()[0] == doctest::Approx(0.0625).epsilon(1e-5));
  // Decomposition total = λ2 t2 + λ3 t3 + λ4 t4.
  MeanColorEmbedder emb;
  LossWeights inv = LossWeights::defaults(TaskKind::Inversion);
  Tensor z = Rng(2).randn(y.shape(), 0.5f);
  RecTerms r = loss_rec(Var(z), Var(y), inv, metric, &emb);
  CHECK(r.id > 0.0);
  CHECK(std::fabs(r.total.value()[0] - (inv.l2 * r.l2 + inv.perceptual * r.perceptual + inv.id * r.id)) < 1e-6);
  CHECK_THROWS_AS(loss_rec(Var(z), Var(y), inv, metric, nullptr), ConfigError);
  CHECK_THROWS_AS(loss_rec(Var(z), Var(Tensor({2, 3, 16, 16})), lw, metric, nullptr), ShapeError);
}

TEST_CASE("loss_reg") {
  Toy t(64);
  const Tensor& avg = t.g->avg_latent();
  const int L = t.g->spec().num_style_layers(), D = t.g->spec().latent_dim;
  Tensor wbar({1, L, D});
  for (int l = 0; l < L; ++l)
    for (int d = 0; d < D; ++d) wbar[l * D + d] = avg[d];
  CHECK(loss_reg(Var(wbar), avg).value()[0] == 0.0f);
  Tensor dir = Rng(3).randn({1, L, D}, 0.1f);
  auto at = [&](float k) {
    Tensor w = wbar;
    for (std::size_t i = 0; i < w.numel(); ++i) w[i] += k * dir[i];
    return w;
  };
  CHECK(loss_reg(Var(at(2)), avg).value()[0] == doctest::Approx(4 * loss_reg(Var(at(1)), avg).value()[0]).epsilon(1e-5));
  // The gradient points away from w̄, so a small descent step moves toward it.
  Var w = ag::param(at(1));
  ag::backward(loss_reg(w, avg));
  double dot = 0;
  for (std::size_t i = 0; i < dir.numel(); ++i) dot += double(w.grad()[i]) * dir[i];
  CHECK(dot > 0);
  CHECK_THROWS_AS(loss_reg(Var(Tensor({1, L, D + 1})), avg), ShapeError);
}

TEST_CASE("loss_tmp") {
  Tensor a = Rng(4).randn({1, 3, 8, 8}), b = Rng(5).randn({1, 3, 8, 8});
  CHECK(loss_tmp(Var(a), Var(a)).value()[0] == 0.0f);
  CHECK(loss_tmp(Var(a), Var(b)).value()[0] == loss_tmp(Var(b), Var(a)).value()[0]);
  CHECK_THROWS_AS(loss_tmp(Var(a), Var(Tensor({1, 3, 4, 4}))), ShapeError);
  Toy t(64);
  ag::NoGradGuard ng;
  Tensor f = Rng(6).randn({1, t.g->spec().base_channels(), 8, 8});
  Var w = map_z_to_w(*t.g, Var(Rng(7).randn({1, 64})));
  Var z1 = synthesize(*t.gex, Var(f), w, NoiseField::zero()), z2 = synthesize(*t.gex, Var(f), w, NoiseField::zero());
  CHECK(loss_tmp(z1, z2).value()[0] == 0.0f);
  NoiseField rnd = NoiseField::random(8);
  Var r1 = synthesize(*t.gex, Var(f), w, rnd), r2 = synthesize(*t.gex, Var(f), w, rnd);
  CHECK(loss_tmp(r1, r2).value()[0] > 0.0f);
}

TEST_CASE("loss_id") {
  MeanColorEmbedder e;
  Tensor a = constant_image(1, 0, 0), b = constant_image(0, 1, 0);
  CHECK(loss_id(Var(a), Var(a), e).value()[0] == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(loss_id(Var(a), Var(b), e).value()[0] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(loss_id(Var(a), Var(constant_image(-1, 0, 0)), e).value()[0] == doctest::Approx(2.0).epsilon(1e-6));
  RandomIdentityEmbedder r;
  for (int s = 0; s < 5; ++s) {
    const float v = loss_id(Var(Rng(s).randn({2, 3, 32, 32})), Var(Rng(s + 9).randn({2, 3, 32, 32})), r).value()[0];
    CHECK(v >= 0.0f);
    CHECK(v <= 2.0f);
  }
}

TEST_CASE("adversarial losses") {
  Discriminator d(16, 4, 3);
  // Constant logit b: gen = softplus(-b), disc = softplus(b) + softplus(-b).
  auto set_logit = [&](float b) {
    for (const auto& [name, v] : d.params().items())
      if (name.find("fc2") != std::string::npos) {
        Var p = v;
        const bool bias = name.find("bias") != std::string::npos;
        for (auto& x : p.mutable_value().values()) x = bias ? b : 0.0f;
      }
  };
  Tensor real = Rng(10).randn({2, 3, 16, 16}), fake = Rng(11).randn({2, 3, 16, 16});
  set_logit(0.0f);
  CHECK(gen_adv_loss(d, Var(fake)).value()[0] == doctest::Approx(std::log(2.0)).epsilon(1e-6));
  CHECK(disc_loss(d, Var(real), Var(fake)).value()[0] == doctest::Approx(2 * std::log(2.0)).epsilon(1e-6));
  set_logit(-12.0f);
  CHECK(gen_adv_loss(d, Var(fake)).value()[0] > 11.9f);
  CHECK_THROWS_AS(d(Var(Tensor({1, 3, 32, 32}))), ConfigError);
  CHECK_THROWS_AS(Discriminator(12, 4, 1), ConfigError);

  // One step decreases the discriminator loss on a frozen batch.
  Discriminator d2(16, 4, 4);
  const double before = disc_loss(d2, Var(real), Var(fake)).value()[0];
  nn::Adam opt(d2.params().vars(), 1e-3f);
  d2.params().zero_grad();
  ag::backward(disc_loss(d2, Var(real), Var(fake)));
  opt.step();
  CHECK(disc_loss(d2, Var(real), Var(fake)).value()[0] < before);
}

TEST_CASE("R1 penalty gradient matches finite differences") {
  Discriminator d(8, 4, 5);
  Tensor real = Rng(12).randn({2, 3, 8, 8});
  const float gamma = 2.0f;
  auto r1_value = [&] {
    Var x = ag::param(real);
    d.params().zero_grad();
    ag::backward(op::sum_all(d(x)));
    const Tensor gx = x.grad();
    double s = 0;
    for (float g : gx.values()) s += double(g) * g;
    return 0.5 * gamma * s / real.n();
  };
  const double r0 = r1_value();
  d.params().zero_grad();
  CHECK(d.accumulate_r1(real, gamma) == doctest::Approx(r0).epsilon(1e-5));
  // ∇x D is linear in the last layer's weights, so the penalty is quadratic there
  // and a central difference is exact up to rounding.
  Var w = d.params().get("discriminator/fc2/weight");
  const Tensor analytic = w.grad();
  const Tensor dir = Rng(13).randn(w.shape());
  double proj = 0;
  for (std::size_t i = 0; i < dir.numel(); ++i) proj += double(analytic[i]) * dir[i];
  const float h = 1e-2f;
  auto shift = [&](float k) {
    for (std::size_t i = 0; i < dir.numel(); ++i) w.mutable_value()[i] += k * dir[i];
  };
  shift(h);
  const double rp = r1_value();
  shift(-2 * h);
  const double rm = r1_value();
  shift(h);
  const double fd = (rp - rm) / (2 * h);
  CHECK(std::fabs(proj - fd) < 1e-2 * std::max(std::fabs(fd), 1e-3));
  // Existing gradients are kept and the penalty is added on top.
  d.params().zero_grad();
  ag::backward(op::sum_all(d(Var(real))));
  const Tensor base = w.grad();
  d.accumulate_r1(real, gamma);
  const Tensor both = w.grad();
  for (std::size_t i = 0; i < base.numel(); ++i) CHECK(both[i] == doctest::Approx(base[i] + analytic[i]).epsilon(1e-3));
}

TEST_CASE("pair synthesis") {
  Toy t(32, 2);
  TaskSpec s = TaskSpec::defaults(TaskKind::Inversion);
  s.style_size = 32;
  auto a = synthesize_pairs(s, *t.g, nullptr, nullptr, 3, 9), b = synthesize_pairs(s, *t.g, nullptr, nullptr, 3, 9);
  for (int i = 0; i < 3; ++i) {
    CHECK(bit_equal(a[i].x, b[i].x));
    CHECK(bit_equal(a[i].y, b[i].y));
    CHECK(a[i].noise_seed == b[i].noise_seed);
  }
  CHECK_FALSE(bit_equal(a[0].x, a[1].x));
  CHECK_FALSE(bit_equal(synthesize_pairs(s, *t.g, nullptr, nullptr, 1, 10)[0].x, a[0].x));

  TaskSpec ve = TaskSpec::defaults(TaskKind::VideoEdit);
  ve.style_size = 32;
  const int L = t.g->spec().num_style_layers(), D = t.g->spec().latent_dim;
  Tensor zero({L, D});
  for (const auto& p : synthesize_pairs(ve, *t.g, nullptr, &zero, 4, 11)) CHECK(bit_equal(p.x, p.y));
  // Recorded scales are uniform on [0, 2].
  Tensor v = Rng(12).randn({1, D});
  auto pairs = synthesize_pairs(ve, *t.g, nullptr, &v, 1000, 13);
  int hist[10] = {};
  for (const auto& p : pairs) {
    CHECK(p.v_scale >= 0.0f);
    CHECK(p.v_scale <= 2.0f);
    hist[std::min(9, static_cast<int>(p.v_scale * 5))]++;
    CHECK(p.v.shape() == Shape{L, D});
  }
  for (int h : hist) CHECK(std::abs(h - 100) < 40);
  CHECK(pairs[5].v[D + 3] == doctest::Approx(pairs[5].v_scale * v[3]).epsilon(1e-6));

  CHECK_THROWS_AS(synthesize_pairs(ve, *t.g, nullptr, nullptr, 1, 1), ArgumentError);
  Generator other(GeneratorSpec::desk(64), 3);
  CHECK_THROWS_AS(synthesize_pairs(TaskSpec::defaults(TaskKind::Toonify), *t.g, &other, nullptr, 1, 1),
                  ArchitectureError);

  TaskSpec sr = TaskSpec::defaults(TaskKind::SuperRes);
  sr.superres_factor = 4;
  sr.style_size = 32;
  auto p = synthesize_pairs(sr, *t.g, nullptr, nullptr, 1, 14)[0];
  CHECK(p.x.shape() == Shape{1, 3, 8, 8});
  CHECK(p.y.shape() == Shape{1, 3, 32, 32});
  TaskSpec mk = TaskSpec::defaults(TaskKind::Mask2Face);
  mk.style_size = 32;
  auto m = synthesize_pairs(mk, *t.g, nullptr, nullptr, 1, 15)[0];
  CHECK(m.x.c() == mk.mask_classes);
  for (int y = 0; y < 32; ++y) {
    float sum = 0;
    for (int c = 0; c < mk.mask_classes; ++c) sum += m.x.at(0, c, y, 7);
    CHECK(sum == 1.0f);
  }
}

TEST_CASE("upsample_input") {
  Tensor x = Rng(16).randn({1, 3, 8, 10});
  CHECK(bit_equal(upsample_input(x, 1), x));
  CHECK(upsample_input(x, 32).shape() == Shape{1, 3, 256, 320});
  CHECK_THROWS_AS(upsample_input(x, 65), ArgumentError);
  // Linear ramp: area-downsample then bilinear-upsample is exact away from the
  // clamped border, and off by at most half a block of slope on it.
  Tensor ramp({1, 1, 64, 64});
  for (int y = 0; y < 64; ++y)
    for (int c = 0; c < 64; ++c) ramp.at(0, 0, y, c) = (c - 31.5f) / 32.0f;
  Tensor back = upsample_input(img::downsample_area(ramp, 8), 8);
  float inner = 0, all = 0;
  for (int y = 0; y < 64; ++y)
    for (int c = 0; c < 64; ++c) {
      const float e = std::fabs(back.at(0, 0, y, c) - ramp.at(0, 0, y, c));
      all = std::max(all, e);
      if (c >= 4 && c < 60) inner = std::max(inner, e);
    }
  CHECK(inner < 1e-5f);
  CHECK(all <= 3.5f / 32.0f + 1e-5f);
}

TEST_CASE("geometric augmentation") {
  Tensor x = Rng(17).randn({1, 3, 64, 64});
  CHECK(bit_equal(apply_geometric(x, GeometricParams{}), x));
  GeometricRanges none{1.0, 1.0, 0.0, 0.0};
  auto [xi, yi] = augment_geometric(x, x, 5, none);
  CHECK(bit_equal(xi, x));

  // Marker oracle: one bright pixel in a 3-channel source and a 1-channel target.
  Tensor src({1, 3, 64, 64}), dst({1, 1, 64, 64});
  src.at(0, 1, 20, 40) = 1.0f;
  dst.at(0, 0, 20, 40) = 1.0f;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    auto [a, b] = augment_geometric(src, dst, seed);
    CHECK(a.shape() == src.shape());
    CHECK(b.shape() == dst.shape());
    CHECK(a.h() % 32 == 0);
    int ay = 0, ax = 0, by = 0, bx = 0;
    float am = -1, bm = -1;
    for (int y = 0; y < 64; ++y)
      for (int c = 0; c < 64; ++c) {
        if (a.at(0, 1, y, c) > am) am = a.at(0, 1, y, c), ay = y, ax = c;
        if (b.at(0, 0, y, c) > bm) bm = b.at(0, 0, y, c), by = y, bx = c;
      }
    CHECK(ay == by);
    CHECK(ax == bx);
    Rng rng(seed);
    const GeometricParams p = sample_geometric(rng);
    const auto fwd = img::affine_invert(geometric_transform(p, 64, 64));
    const auto q = img::affine_apply(fwd, 40, 20);
    CHECK(std::hypot(q[0] - ax, q[1] - ay) < 1.5);
    CHECK(p.scale >= 0.8);
    CHECK(p.scale <= 1.2);
    CHECK(std::fabs(p.rotation_deg) <= 15.0);
    CHECK(std::fabs(p.tx) <= 0.1);
  }
}

TEST_CASE("identity metrics match brute-force loops") {
  RandomIdentityEmbedder e;
  std::vector<Tensor> edited, original;
  for (int i = 0; i < 10; ++i) {
    edited.push_back(Rng(100 + i).randn({1, 3, 32, 32}, 0.5f));
    original.push_back(Rng(200 + i).randn({1, 3, 32, 32}, 0.5f));
  }
  double c = 0, m = 0;
  for (int i = 0; i < 10; ++i) c += brute_one_minus_cos(e, edited[i], original[i]);
  for (int i = 1; i < 10; ++i) m += brute_one_minus_cos(e, edited[i], edited[0]);
  CHECK(std::fabs(metric_id_consistency(edited, original, e) - c / 10) < 1e-8);
  CHECK(std::fabs(metric_id_maintenance(edited, e) - m / 9) < 1e-8);
  CHECK(std::fabs(metric_id_consistency(edited, edited, e)) < 1e-12);
  std::vector<Tensor> re(edited.rbegin(), edited.rend()), ro(original.rbegin(), original.rend());
  CHECK(std::fabs(metric_id_consistency(re, ro, e) - c / 10) < 1e-12);
  CHECK(std::fabs(metric_id_maintenance({edited[0], edited[0], edited[0]}, e)) < 1e-12);
  CHECK(metric_id_maintenance({edited[0]}, e) == 0.0);
  CHECK_THROWS_AS(metric_id_consistency(edited, {original[0]}, e), ShapeError);
}

TEST_CASE("task forward rules and gradient flow") {
  Toy t(256, 3);
  for (TaskKind k : {TaskKind::SuperRes, TaskKind::Sketch2Face, TaskKind::Mask2Face, TaskKind::VideoEdit,
                     TaskKind::Toonify}) {
    CAPTURE(task_name(k));
    TaskSpec s = TaskSpec::defaults(k);
    Tensor v = Rng(4).randn({1, t.g->spec().latent_dim}, 0.5f);
    auto pairs = synthesize_pairs(s, *t.g, t.g.get(), &v, 1, 21);
    TaskModels m = make_task_models(s, t.gex, 22);
    TaskOutput o = task_forward(s, m, {&pairs[0]}, NoiseField::zero());
    CHECK(o.y_hat.shape() == pairs[0].y.shape());
    ag::backward(op::sum_all(op::mul(o.y_hat, Var(Rng(23).randn(o.y_hat.shape())))));
    auto check_store = [&](const nn::ParamStore& ps) {
      for (const auto& [name, p] : ps.items()) {
        const auto at = name.find("_layer");
        if (at != std::string::npos && name.find("fuse") != std::string::npos &&
            std::stoi(name.substr(at + 6, 2)) > s.skip_depth)
          continue;  // tap not wired at this depth
        CAPTURE(name);
        double n = 0;
        if (p.has_grad()) {
          const Tensor gp = p.grad();
          for (float g : gp.values()) n += std::fabs(g);
        }
        CHECK(n > 0);
      }
    };
    check_store(m.encoder->params());
    if (m.translator) check_store(m.translator->params());
    for (const auto& [name, p] : t.g->params().items()) CHECK_FALSE(p.has_grad());
    if (k == TaskKind::VideoEdit) {
      // E_W(x̃) + v enters the generator.
      ag::NoGradGuard ng;
      Var w0 = m.encoder->encode_style(Var(pairs[0].x_style));
      Tensor d = o.w.value();
      for (std::size_t i = 0; i < d.numel(); ++i) d[i] -= w0.value()[i];
      CHECK(max_abs_diff(d, pairs[0].v.reshaped(d.shape())) < 1e-5f);
    }
  }
}

TEST_CASE("short mask-to-face run keeps the generator frozen") {
  Toy t(256, 4);
  TaskSpec s = TaskSpec::defaults(TaskKind::Mask2Face);
  s.batch = 2;
  s.lr = 1e-3f;
  auto pairs = synthesize_pairs(s, *t.g, nullptr, nullptr, 4, 31);
  TaskModels m = make_task_models(s, t.gex, 32);
  RandomFeatureMetric metric;
  const auto before = t.g->params().checksum();
  int calls = 0;
  TrainResult r = train_task(s, LossWeights::defaults(s.kind), m, pairs, 3, 33, metric, nullptr,
                             [&](const TrainLog&) { ++calls; });
  CHECK(calls == 3);
  CHECK(r.history.size() == 3);
  CHECK(r.generator_checksum_before == before);
  CHECK(r.generator_checksum_after == before);
  CHECK(t.g->params().checksum() == before);
  CHECK(std::isfinite(r.eval_after));
  CHECK(train_log_csv_header().rfind("step,total,", 0) == 0);
  CHECK(train_log_csv_row(r.history[0]).rfind("0,", 0) == 0);

  auto bad = pairs;
  bad[0].x[0] = NAN;
  bad[1].x[0] = NAN;
  bad[2].x[0] = NAN;
  bad[3].x[0] = NAN;
  CHECK_THROWS_AS(train_task(s, LossWeights::defaults(s.kind), m, bad, 1, 34, metric, nullptr), OptimizationError);
}
