#include <cmath>
#include <numbers>

#include "doctest.h"
#include "sgx/alignment.hpp"
#include "sgx/inversion.hpp"

using namespace sgx;
using ag::Var;

namespace {

struct Small {
  std::shared_ptr<Generator> g = std::make_shared<Generator>(GeneratorSpec::desk(64), 3);
  GeneratorEX gex{g};
  Tensor f = Rng(1).randn({1, g->spec().base_channels(), 8, 8});
  Tensor w;
  Small() {
    ag::NoGradGuard ng;
    w = map_z_to_w(*g, Var(Rng(2).randn({1, 64})), 0.7f).value();
  }
  Tensor render(const Tensor& ff, const Tensor& ww, const NoiseField& n = NoiseField::zero()) const {
    ag::NoGradGuard ng;
    return synthesize(gex, Var(ff), Var(ww), n).value();
  }
  InversionResult exact() const {
    InversionResult r;
    r.f = f;
    r.w = w;
    r.spec = g->spec();
    return r;
  }
};

// Dominant orientation (degrees) from the gradient structure tensor.
double orientation(const Tensor& x) {
  double sxx = 0, syy = 0, sxy = 0;
  for (int y = 1; y + 1 < x.h(); ++y)
    for (int c = 1; c + 1 < x.w(); ++c) {
      const double gx = x.at(0, 0, y, c + 1) - x.at(0, 0, y, c - 1);
      const double gy = x.at(0, 0, y + 1, c) - x.at(0, 0, y - 1, c);
      sxx += gx * gx, syy += gy * gy, sxy += gx * gy;
    }
  return 0.5 * std::atan2(2 * sxy, sxx - syy) * 180.0 / std::numbers::pi;
}

}  // namespace

TEST_CASE("step II at an exact initialisation is a fixed point") {
  Small s;
  const Tensor x = s.render(s.f, s.w);
  RandomFeatureMetric metric;
  InvertConfig cfg;
  cfg.steps = 20;
  InversionResult r = invert_step2(s.gex, x, s.exact(), metric, cfg);
  REQUIRE(r.trace.size() == 21);
  CHECK(r.trace[0] <= 1e-6);
  for (double v : r.trace) CHECK(v <= r.trace[0]);
  CHECK(r.iterations_used == 20);
}

TEST_CASE("step II reduces the loss from a perturbed start and returns the best iterate") {
  Small s;
  const Tensor x = s.render(s.f, s.w);
  InversionResult init = s.exact();
  Rng rng(4);
  for (auto& v : init.w.values()) v += 0.3f * rng.normal();
  RandomFeatureMetric metric;
  InvertConfig cfg;
  cfg.steps = 30;
  InversionResult r = invert_step2(s.gex, x, init, metric, cfg);
  CHECK(r.step2_loss < r.trace[0]);
  CHECK(r.step2_loss == doctest::Approx(*std::min_element(r.trace.begin(), r.trace.end())));
  CHECK(perceptual_distance(metric, s.render(r.f, r.w), x) == doctest::Approx(r.step2_loss).epsilon(1e-4));
  cfg.pixel_l2 = true;
  CHECK(invert_step2(s.gex, x, init, metric, cfg).step2_loss < invert_step2(s.gex, x, init, metric, {0}).trace[0] + 1.0);
}

TEST_CASE("step II errors") {
  Small s;
  const Tensor x = s.render(s.f, s.w);
  RandomFeatureMetric metric;
  InversionResult bad = s.exact();
  bad.f[0] = NAN;
  InvertConfig cfg;
  cfg.steps = 3;
  try {
    invert_step2(s.gex, x, bad, metric, cfg);
    FAIL("expected OptimizationError");
  } catch (const OptimizationError& e) {
    CHECK(e.iteration() == 0);
  }
  InversionResult other = s.exact();
  other.spec = GeneratorSpec::desk(32);
  CHECK_THROWS_AS(invert_step2(s.gex, x, other, metric, cfg), ArchitectureError);
  cfg.steps = -1;
  CHECK_THROWS_AS(invert_step2(s.gex, x, s.exact(), metric, cfg), ArgumentError);
}

TEST_CASE("step I shapes and the aligned-crop switch") {
  auto g = std::make_shared<Generator>(GeneratorSpec::desk(256), 5);
  GeneratorEX gex(g);
  Encoder enc(EncoderSpec::desk(), *g, 6);
  RandomFeatureMetric metric;
  Tensor x = Rng(7).randn({1, 3, 128, 96}, 0.5f);
  Tensor aligned = Rng(8).randn({1, 3, 128, 128}, 0.5f);
  InvertConfig cfg;
  cfg.style_size = 128;
  InversionResult a = invert_step1(enc, gex, x, &aligned, metric, NoiseField::zero(), cfg);
  CHECK(a.f.shape() == Shape{1, g->spec().base_channels(), 16, 12});
  CHECK(a.w.shape() == Shape{1, g->spec().num_style_layers(), g->spec().latent_dim});
  CHECK(a.step1_loss == a.step2_loss);
  cfg.use_aligned = false;
  InversionResult b = invert_step1(enc, gex, x, &aligned, metric, NoiseField::zero(), cfg);
  CHECK(bit_equal(a.f, b.f));
  CHECK_FALSE(bit_equal(a.w, b.w));
  CHECK_THROWS_AS(invert_step1(enc, gex, Tensor({1, 3, 100, 96}), nullptr, metric), InputContractError);
}

TEST_CASE("edit_latent") {
  Small s;
  Tensor v = Rng(9).randn({s.w.dim(1), s.w.dim(2)});
  CHECK(bit_equal(edit_latent(s.w, v, 0.0), s.w));
  Tensor ab = edit_latent(edit_latent(s.w, v, 0.5), v, 1.25), direct = edit_latent(s.w, v, 1.75);
  CHECK(max_abs_diff(ab, direct) < 1e-5f);
  Tensor row = Rng(10).randn({1, s.w.dim(2)});
  Tensor e = edit_latent(s.w, row, 2.0);
  for (int l = 0; l < s.w.dim(1); ++l)
    CHECK(e[l * s.w.dim(2) + 3] == doctest::Approx(s.w[l * s.w.dim(2) + 3] + 2.0f * row[3]));
  CHECK_THROWS_AS(edit_latent(s.w, Tensor({3, s.w.dim(2)}), 1.0), ShapeError);
  CHECK(bit_equal(edit_latent(s.w, EditingVector{v, 0.0}), s.w));
  // Scale 0 through synthesis under fixed noise is bit-identical.
  CHECK(bit_equal(s.render(s.f, edit_latent(s.w, v, 0.0), NoiseField::fixed(3)),
                  s.render(s.f, s.w, NoiseField::fixed(3))));
}

TEST_CASE("domain transfer") {
  Small s;
  InversionResult inv = s.exact();
  auto same = std::make_shared<Generator>(s.g->clone());
  CHECK(bit_equal(domain_transfer(inv, GeneratorEX(same), NoiseField::fixed(2)),
                  s.render(s.f, s.w, NoiseField::fixed(2))));
  auto toon = std::make_shared<Generator>(s.g->clone());
  Rng rng(11);
  for (const auto& [name, v] : toon->params().items())
    if (name.find("layer08") != std::string::npos || name.find("layer09") != std::string::npos) {
      Var p = v;
      for (auto& x : p.mutable_value().values()) x += 0.2f * rng.normal();
    }
  Tensor out = domain_transfer(inv, GeneratorEX(toon));
  Tensor rec = s.render(s.f, s.w);
  CHECK(out.shape() == rec.shape());
  CHECK(max_abs_diff(out, rec) > 1e-3f);
  auto other = std::make_shared<Generator>(GeneratorSpec::desk(128), 1);
  CHECK_THROWS_AS(domain_transfer(inv, GeneratorEX(other)), ArchitectureError);
}

TEST_CASE("feature shifts and rotations") {
  Tensor f = Rng(12).randn({1, 4, 10, 12});
  CHECK(bit_equal(shift_feature(f, 0, 0), f));
  Tensor s = shift_feature(f, 2, -3);
  CHECK(s.at(0, 1, 5, 4) == f.at(0, 1, 3, 7));
  CHECK(s.at(0, 1, 0, 4) == 0.0f);
  Tensor back = shift_feature(s, -2, 3);
  for (int y = 0; y < 8; ++y)
    for (int x = 3; x < 12; ++x) CHECK(back.at(0, 2, y, x) == f.at(0, 2, y, x));
  CHECK_THROWS_AS(shift_feature(f, 10, 0), ArgumentError);
  Tensor half = shift_feature(f, 0.5, 0);
  CHECK(half.at(0, 0, 5, 5) == doctest::Approx(0.5 * (f.at(0, 0, 5, 5) + f.at(0, 0, 4, 5))).epsilon(1e-5));
  CHECK(bit_equal(rotate_feature(f, 0), f));
  CHECK(bit_equal(rotate_feature(f, 360), f));
  CHECK(bit_equal(rotate_feature(f, -720), f));
  // Oriented stripes rotate by the requested angle.
  Tensor stripes({1, 1, 96, 96});
  for (int y = 0; y < 96; ++y)
    for (int x = 0; x < 96; ++x) {
      const double r2 = (y - 47.5) * (y - 47.5) + (x - 47.5) * (x - 47.5);
      stripes.at(0, 0, y, x) = static_cast<float>(std::sin(0.5 * x) * std::exp(-r2 / (2 * 25.0 * 25.0)));
    }
  double delta = orientation(rotate_feature(stripes, 10)) - orientation(stripes);
  if (delta > 90) delta -= 180;
  if (delta < -90) delta += 180;
  CHECK(std::fabs(std::fabs(delta) - 10.0) < 1.0);
}

TEST_CASE("manual crop") {
  Tensor x = Rng(13).randn({1, 3, 64, 48});
  CHECK(max_abs_diff(manual_crop(x, {0, 0, 64, 48}, 32), img::resize_bilinear(x, 32, 32)) == 0.0f);
  CHECK_THROWS_AS(manual_crop(x, {0, 0, 0, 10}), ArgumentError);
  CHECK_THROWS_AS(manual_crop(x, {10, 0, 60, 10}), ArgumentError);
  auto g = std::make_shared<Generator>(GeneratorSpec::desk(256), 1);
  Encoder enc(EncoderSpec::desk(), *g, 1);
  ag::NoGradGuard ng;
  CHECK(enc.encode_style(Var(manual_crop(x, {8, 4, 40, 40}, 64))).shape() ==
        Shape{1, g->spec().num_style_layers(), g->spec().latent_dim});
}

TEST_CASE("alignment: similarity fit and crops") {
  const Landmarks tpl = canonical_landmarks(256);
  // Image landmarks = inverse of a known similarity applied to the template.
  const double ang = 12.0 * std::numbers::pi / 180.0, sc = 0.8;
  const img::Affine truth{sc * std::cos(ang), -sc * std::sin(ang), 17.0, sc * std::sin(ang), sc * std::cos(ang), -9.0};
  const img::Affine inv = img::affine_invert(truth);
  Landmarks pts;
  for (int i = 0; i < 5; ++i) pts[i] = img::affine_apply(inv, tpl[i][0], tpl[i][1]);
  const img::Affine fit = fit_similarity(pts, tpl);
  for (int i = 0; i < 5; ++i) {
    const auto p = img::affine_apply(fit, pts[i][0], pts[i][1]);
    CHECK(std::hypot(p[0] - tpl[i][0], p[1] - tpl[i][1]) < 1.0);
  }
  CHECK(similarity_rotation_deg(fit) == doctest::Approx(12.0).epsilon(1e-6));
  CHECK(similarity_scale(fit) == doctest::Approx(0.8).epsilon(1e-6));

  Tensor image = Rng(14).randn({1, 3, 300, 320});
  StubLandmarkDetector det({pts});
  AlignResult r = align_crop(image, det, 256);
  CHECK(r.crop.shape() == Shape{1, 3, 256, 256});

  StubLandmarkDetector aligned({tpl});
  AlignResult id = align_crop(Rng(15).randn({1, 3, 256, 256}), aligned, 256);
  CHECK(std::fabs(similarity_rotation_deg(id.transform)) < 1.0);
  CHECK(std::fabs(similarity_scale(id.transform) - 1.0) < 0.02);

  CHECK_THROWS_AS(align_crop(Tensor({1, 3, 64, 64}), det), DetectionError);
  StubLandmarkDetector none({});
  CHECK_THROWS_AS(align_crop(image, none), DetectionError);
}

TEST_CASE("perceptual metric properties") {
  RandomFeatureMetric m;
  Tensor a = Rng(16).randn({2, 3, 32, 32}, 0.5f), b = Rng(17).randn({2, 3, 32, 32}, 0.5f);
  CHECK(perceptual_distance(m, a, a) == 0.0);
  CHECK(perceptual_distance(m, a, b) == doctest::Approx(perceptual_distance(m, b, a)).epsilon(1e-6));
  CHECK(perceptual_distance(m, a, b) > 0.0);
  Tensor noise = Rng(18).randn(a.shape());
  double prev = 0.0;
  for (double eps : {0.01, 0.1, 0.5}) {
    Tensor c = a;
    for (std::size_t i = 0; i < c.numel(); ++i) c[i] += static_cast<float>(eps) * noise[i];
    const double d = perceptual_distance(m, a, c);
    CHECK(d > prev);
    prev = d;
  }
  CHECK_THROWS_AS(perceptual_distance(m, a, Tensor({2, 3, 16, 16})), ShapeError);
}
