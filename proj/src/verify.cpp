#include "sgx/verify.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "json.hpp"
#include "sgx/encoder.hpp"
#include "sgx/imaging.hpp"

namespace sgx {

namespace {

Var random_w(const Generator& g, std::uint64_t seed, int n = 1) {
  Rng rng = Rng(seed).substream("style");
  return map_z_to_w(g, Var(rng.randn({n, g.spec().latent_dim})));
}

double l2norm(const Tensor& t) {
  double s = 0.0;
  for (float v : t.values()) s += static_cast<double>(v) * v;
  return std::sqrt(s);
}

double weighted_sum(const Tensor& y, const Tensor& r) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.numel(); ++i) s += static_cast<double>(y[i]) * r[i];
  return s;
}

}  // namespace

double compatibility_deviation(const GeneratorSpec& spec, std::uint64_t seed, const std::vector<int>& dilations) {
  ag::NoGradGuard ng;
  auto g = std::make_shared<Generator>(spec, seed);
  GeneratorEX gex(g, dilations);
  Var w = random_w(*g, seed);
  const NoiseField nz = NoiseField::zero();
  Tensor base = synthesize_baseline(*g, w, nz).value();
  Tensor ex = synthesize(gex, Var(upsample_constant(*g)), w, nz).value();
  return max_abs_diff(base, ex);
}

double equivariance_deviation(const GeneratorSpec& spec, std::uint64_t seed, int dy, int dx, int fh, int fw) {
  ag::NoGradGuard ng;
  auto g = std::make_shared<Generator>(spec, seed);
  GeneratorEX gex(g);
  Rng rng = Rng(seed).substream("feature");
  Tensor f = rng.randn({1, spec.base_channels(), fh, fw});
  Var w = random_w(*g, seed);
  const NoiseField nz = NoiseField::zero();
  Tensor a = synthesize(gex, Var(f), w, nz).value();
  Tensor b = synthesize(gex, Var(img::shift(f, dy, dx)), w, nz).value();
  const int M = spec.scale_factor(), border = M * receptive_radius(spec);
  const int H = a.h(), W = a.w();
  // b(y, x) should equal a(y - M dy, x - M dx) where neither location sees a border.
  const int y0 = border + std::max(0, M * dy), y1 = H - border + std::min(0, M * dy);
  const int x0 = border + std::max(0, M * dx), x1 = W - border + std::min(0, M * dx);
  if (y1 <= y0 || x1 <= x0) throw ArgumentError("feature too small for the receptive-field border");
  double dev = 0.0;
  for (int c = 0; c < a.c(); ++c)
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x)
        dev = std::max<double>(dev, std::fabs(b.at(0, c, y, x) - a.at(0, c, y - M * dy, x - M * dx)));
  return dev;
}

std::vector<double> gradient_check(const std::function<Var(const std::vector<Var>&)>& fn,
                                   const std::vector<Tensor>& inputs, double eps, std::uint64_t seed) {
  std::vector<Var> vars;
  for (const auto& t : inputs) vars.push_back(ag::param(t));
  Var y = fn(vars);
  Tensor r = Rng(seed).substream("projection").randn(y.shape());
  ag::backward(op::sum_all(op::mul(y, Var(r))));

  std::vector<double> errs;
  ag::NoGradGuard ng;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor fd(inputs[k].shape());
    for (std::size_t i = 0; i < fd.numel(); ++i) {
      auto eval = [&](double delta) {
        std::vector<Var> in;
        for (std::size_t j = 0; j < inputs.size(); ++j) {
          Tensor t = inputs[j];
          if (j == k) t[i] = static_cast<float>(t[i] + delta);
          in.emplace_back(std::move(t));
        }
        return weighted_sum(fn(in).value(), r);
      };
      fd[i] = static_cast<float>((eval(eps) - eval(-eps)) / (2 * eps));
    }
    const Tensor ga = vars[k].grad();
    Tensor diff(fd.shape());
    for (std::size_t i = 0; i < fd.numel(); ++i) diff[i] = ga[i] - fd[i];
    errs.push_back(l2norm(diff) / std::max({l2norm(ga), l2norm(fd), 1e-30}));
  }
  return errs;
}

std::vector<double> modulated_conv_gradcheck(int dilation, std::uint64_t seed) {
  Rng rng = Rng(seed).substream("gradcheck");
  const int cin = 4, cout = 3;
  Tensor x = rng.randn({1, cin, 8, 8});
  Tensor wt = rng.randn({cout, cin, 3, 3});
  Tensor s = rng.rand_uniform({1, cin}, 0.5f, 1.5f);
  kernels::BackendGuard serial(kernels::Backend::Serial);
  return gradient_check(
      [dilation](const std::vector<Var>& v) { return modulated_conv(v[0], v[1], v[2], dilation, true); }, {x, wt, s},
      1e-2, seed);
}

bool VerifyReport::all_passed() const {
  for (const auto& c : checks)
    if (!c.passed) return false;
  return !checks.empty();
}

std::string VerifyReport::to_json() const {
  nlohmann::ordered_json j;
  j["all_passed"] = all_passed();
  j["checks"] = nlohmann::ordered_json::array();
  for (const auto& c : checks)
    j["checks"].push_back({{"name", c.name},
                           {"passed", c.passed},
                           {"measured", c.measured},
                           {"tolerance", c.tolerance},
                           {"seconds", c.seconds},
                           {"detail", c.detail}});
  return j.dump(2);
}

std::string VerifyReport::to_text() const {
  std::ostringstream os;
  for (const auto& c : checks) {
    char line[256];
    std::snprintf(line, sizeof line, "%-4s %-40s measured %.3e  tol %.1e  %.2fs  %s\n", c.passed ? "PASS" : "FAIL",
                  c.name.c_str(), c.measured, c.tolerance, c.seconds, c.detail.c_str());
    os << line;
  }
  os << (all_passed() ? "all checks passed\n" : "some checks FAILED\n");
  return os.str();
}

VerifyReport run_verify(const VerifyOptions& opt) {
  VerifyReport rep;
  auto timed = [&](const std::string& name, double tol, bool lower_is_pass, auto&& body) {
    VerifyCheck c;
    c.name = name;
    c.tolerance = tol;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      c.measured = body(c.detail);
      c.passed = std::isfinite(c.measured) && (lower_is_pass ? c.measured <= tol : c.measured > tol);
    } catch (const std::exception& e) {
      c.passed = false;
      c.detail = std::string("exception: ") + e.what();
    }
    c.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    rep.checks.push_back(std::move(c));
  };

  for (int res : opt.resolutions) {
    timed("compatibility/" + std::to_string(res), 1e-4, true, [&](std::string& d) {
      double worst = 0.0;
      for (int s = 0; s < opt.seeds; ++s)
        worst = std::max(worst, compatibility_deviation(GeneratorSpec::desk(res), opt.base_seed + s));
      d = std::to_string(opt.seeds) + " seeds";
      return worst;
    });
  }

  if (opt.mutation) {
    // A wrong dilation schedule must break the identity.
    timed("mutation/dilation_schedule", 1e-4, false, [&](std::string& d) {
      auto wrong = GeneratorSpec::desk(64).dilation_schedule();
      wrong[2] = 1;
      d = "deviation must exceed tolerance";
      return compatibility_deviation(GeneratorSpec::desk(64), opt.base_seed, wrong);
    });
  }

  timed("equivariance/(1,0)", 1e-4, true, [&](std::string& d) {
    const GeneratorSpec s = GeneratorSpec::desk(64);
    const int side = 2 * receptive_radius(s) + 12;
    d = "feature " + std::to_string(side) + "x" + std::to_string(side) + " at 64";
    return equivariance_deviation(s, opt.base_seed, 1, 0, side, side);
  });
  timed("equivariance/(0,2)", 1e-4, true, [&](std::string& d) {
    const GeneratorSpec s = GeneratorSpec::desk(64);
    const int side = 2 * receptive_radius(s) + 12;
    d = "feature " + std::to_string(side) + "x" + std::to_string(side) + " at 64";
    return equivariance_deviation(s, opt.base_seed, 0, 2, side, side);
  });

  timed("shape_law", 0.0, true, [&](std::string& d) {
    ag::NoGradGuard ng;
    const GeneratorSpec s = GeneratorSpec::desk(256);
    auto g = std::make_shared<Generator>(s, opt.base_seed);
    GeneratorEX gex(g);
    Encoder enc(EncoderSpec::desk(), *g, opt.base_seed);
    double bad = 0.0;
    const int sizes[][2] = {{256, 256}, {320, 288}};
    for (const auto& hw : sizes) {
      Tensor x = Rng(opt.base_seed).randn({1, 3, hw[0], hw[1]});
      auto [f, sk] = enc.encode_feature(Var(x), 0);
      if (f.shape() != Shape{1, s.base_channels(), hw[0] / 8, hw[1] / 8}) bad += 1;
      Var y = synthesize(gex, f, random_w(*g, opt.base_seed), NoiseField::zero());
      if (y.shape() != Shape{1, 3, hw[0] / 8 * s.scale_factor(), hw[1] / 8 * s.scale_factor()}) bad += 1;
    }
    d = "mismatched shapes";
    return bad;
  });

  timed("parameter_identity", 0.0, true, [&](std::string& d) {
    auto g = std::make_shared<Generator>(GeneratorSpec::desk(64), opt.base_seed);
    const auto before = g->params().checksum();
    GeneratorEX gex = refactor(g);
    {
      ag::NoGradGuard ng;
      (void)synthesize(gex, Var(upsample_constant(*g)), random_w(*g, opt.base_seed), NoiseField::zero());
    }
    d = "checksum before/after refactor";
    return gex.params().checksum() == before ? 0.0 : 1.0;
  });

  for (int dil : {1, 2, 8}) {
    timed("gradient/modulated_conv_d" + std::to_string(dil), 1e-3, true, [&](std::string& d) {
      const auto e = modulated_conv_gradcheck(dil, opt.base_seed);
      char buf[96];
      std::snprintf(buf, sizeof buf, "input %.2e weight %.2e style %.2e", e[0], e[1], e[2]);
      d = buf;
      return std::max({e[0], e[1], e[2]});
    });
  }

  timed("determinism/fixed_noise", 0.0, true, [&](std::string& d) {
    ag::NoGradGuard ng;
    auto g = std::make_shared<Generator>(GeneratorSpec::desk(64), opt.base_seed);
    GeneratorEX gex(g);
    Tensor f = Rng(opt.base_seed).randn({1, g->spec().base_channels(), 12, 10});
    Var w = random_w(*g, opt.base_seed);
    Tensor a = synthesize(gex, Var(f), w, NoiseField::fixed(opt.base_seed)).value();
    Tensor b = synthesize(gex, Var(f), w, NoiseField::fixed(opt.base_seed)).value();
    d = "bit equality of two runs";
    return bit_equal(a, b) ? 0.0 : 1.0;
  });

  timed("backend_agreement", 1e-4, true, [&](std::string& d) {
    ag::NoGradGuard ng;
    auto g = std::make_shared<Generator>(GeneratorSpec::desk(64), opt.base_seed);
    GeneratorEX gex(g);
    Tensor f = Rng(opt.base_seed).randn({1, g->spec().base_channels(), 8, 8});
    Var w = random_w(*g, opt.base_seed);
    Tensor a, b;
    {
      kernels::BackendGuard bg(kernels::Backend::Serial);
      a = synthesize(gex, Var(f), w, NoiseField::zero()).value();
    }
    {
      kernels::BackendGuard bg(kernels::Backend::Parallel);
      b = synthesize(gex, Var(f), w, NoiseField::zero()).value();
    }
    d = "serial vs parallel kernels";
    return max_abs_diff(a, b);
  });

  return rep;
}

}  // namespace sgx
