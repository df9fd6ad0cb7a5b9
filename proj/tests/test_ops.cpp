#include <cmath>

#include "doctest.h"
#include "sgx/nn.hpp"
#include "sgx/synthesis.hpp"
#include "sgx/verify.hpp"

using namespace sgx;
using ag::Var;

namespace {

constexpr double kTol = 1e-3;

void check_grads(const std::function<Var(const std::vector<Var>&)>& fn, const std::vector<Tensor>& in,
                 double eps = 1e-2) {
  kernels::BackendGuard serial(kernels::Backend::Serial);
  for (double e : gradient_check(fn, in, eps)) CHECK(e < kTol);
}

Tensor rnd(const Shape& s, std::uint64_t seed, float sd = 1.0f) { return Rng(seed).randn(s, sd); }

}  // namespace

TEST_CASE("gradients: elementwise and broadcasting ops") {
  check_grads([](auto& v) { return op::mul(op::add(v[0], v[1]), op::sub(v[0], v[1])); },
              {rnd({2, 3, 4, 4}, 1), rnd({2, 3, 4, 4}, 2)});
  check_grads([](auto& v) { return op::mul_channel(v[0], v[1]); }, {rnd({2, 3, 4, 4}, 3), rnd({2, 3}, 4)});
  check_grads([](auto& v) { return op::add_channel_bias(v[0], v[1]); }, {rnd({2, 3, 4, 4}, 5), rnd({3}, 6)});
  check_grads([](auto& v) { return op::leaky_relu(v[0], 0.2f, std::sqrt(2.0f)); }, {rnd({1, 2, 5, 5}, 7)}, 1e-3);
  check_grads([](auto& v) { return op::sigmoid(v[0]); }, {rnd({3, 4}, 8)});
  check_grads([](auto& v) { return op::softplus(v[0]); }, {rnd({3, 4}, 9)});
  check_grads([](auto& v) { return op::expand0(v[0], 3); }, {rnd({1, 2, 3, 3}, 10)});
}

TEST_CASE("gradients: convolutions") {
  for (int dil : {1, 2, 3})
    check_grads([dil](auto& v) { return op::conv2d(v[0], v[1], {1, dil, dil}); },
                {rnd({2, 3, 7, 6}, 11), rnd({4, 3, 3, 3}, 12)});
  check_grads([](auto& v) { return op::conv2d(v[0], v[1], {2, 1, 1}); }, {rnd({1, 3, 8, 8}, 13), rnd({2, 3, 3, 3}, 14)});
  check_grads([](auto& v) { return op::conv_transpose2d_s2(v[0], v[1]); },
              {rnd({2, 3, 4, 5}, 15), rnd({4, 3, 3, 3}, 16)});
}

TEST_CASE("gradients: modulated convolution at dilations 1, 2, 8") {
  for (int dil : {1, 2, 8})
    for (double e : modulated_conv_gradcheck(dil, 17)) CHECK(e < kTol);
  // Without demodulation as used by ToRGB.
  check_grads([](auto& v) { return modulated_conv(v[0], v[1], v[2], 1, false); },
              {rnd({2, 4, 5, 5}, 18), rnd({3, 4, 1, 1}, 19), rnd({2, 4}, 20)});
}

TEST_CASE("gradients: fir, pooling and resampling") {
  op::FirOpts up{2, 1, 1, 2, 1, 2, 1};
  check_grads([&](auto& v) { return op::fir2d(v[0], blur_kernel(), up); }, {rnd({1, 2, 5, 4}, 21)});
  op::FirOpts dil{1, 1, 2, 2, 2, 2, 2};
  check_grads([&](auto& v) { return op::fir2d(v[0], skip_smooth_kernel(), dil); }, {rnd({1, 2, 6, 6}, 22)});
  check_grads([](auto& v) { return op::avg_pool2(v[0]); }, {rnd({1, 2, 6, 4}, 23)});
  check_grads([](auto& v) { return op::global_avg_pool(v[0]); }, {rnd({2, 3, 4, 4}, 24)});
  check_grads([](auto& v) { return op::upsample_nearest(v[0], 3); }, {rnd({1, 2, 3, 2}, 25)});
  check_grads([](auto& v) { return op::crop(v[0], 1, 2, 3, 3); }, {rnd({1, 2, 6, 6}, 26)});
  check_grads([](auto& v) { return op::concat_channels(v[0], v[1]); }, {rnd({2, 2, 3, 3}, 27), rnd({2, 1, 3, 3}, 28)});
}

TEST_CASE("gradients: normalisations and reductions") {
  check_grads([](auto& v) { return op::pixel_norm(v[0]); }, {rnd({3, 8}, 29)});
  check_grads([](auto& v) { return op::channel_normalize(v[0]); }, {rnd({2, 4, 3, 3}, 30)});
  check_grads([](auto& v) { return op::demod_coeff(v[0], v[1], 0.3f); }, {rnd({2, 3}, 31), rnd({4, 3, 3, 3}, 32)});
  check_grads([](auto& v) { return op::mse(v[0], v[1]); }, {rnd({2, 3, 4}, 33), rnd({2, 3, 4}, 34)});
  check_grads([](auto& v) { return op::mean_abs_diff(v[0], v[1]); }, {rnd({2, 3, 4}, 35), rnd({2, 3, 4}, 36)}, 1e-3);
  check_grads([](auto& v) { return op::cosine_rows(v[0], v[1]); }, {rnd({3, 6}, 37), rnd({3, 6}, 38)});
  check_grads([](auto& v) { return op::minibatch_stddev(v[0], 4); }, {rnd({4, 3, 4, 4}, 39)});
  check_grads([](auto& v) { return op::linear(v[0], v[1], v[2], 0.5f, 2.0f); },
              {rnd({3, 5}, 40), rnd({4, 5}, 41), rnd({4}, 42)});
}

TEST_CASE("gradients: row manipulation and noise") {
  check_grads([](auto& v) { return op::concat_rows(op::slice_rows(v[0], 0, 2), op::slice_rows(v[1], 2, 3)); },
              {rnd({2, 5, 3}, 43), rnd({2, 5, 3}, 44)});
  check_grads([](auto& v) { return op::stack_rows({op::select_row(v[0], 1), op::select_row(v[0], 0)}); },
              {rnd({2, 3, 4}, 45)});
  const Tensor noise = rnd({2, 1, 3, 3}, 46);
  check_grads([&](auto& v) { return op::add_noise(v[0], noise, v[1]); }, {rnd({2, 2, 3, 3}, 47), rnd({1}, 48)});
}

TEST_CASE("demodulation coefficients match a direct oracle") {
  Tensor s = rnd({2, 3}, 50), w = rnd({4, 3, 3, 3}, 51);
  const float wscale = 0.25f;
  Tensor d = op::demod_coeff(Var(s), Var(w), wscale).value();
  for (int n = 0; n < 2; ++n)
    for (int o = 0; o < 4; ++o) {
      double acc = 0;
      for (int i = 0; i < 3; ++i)
        for (int t = 0; t < 9; ++t) {
          const double v = wscale * w[(o * 3 + i) * 9 + t] * s[n * 3 + i];
          acc += v * v;
        }
      CHECK(d[n * 4 + o] == doctest::Approx(1.0 / std::sqrt(acc + 1e-8)).epsilon(1e-5));
    }
}

TEST_CASE("no-grad guard suppresses recording") {
  Var a = ag::param(rnd({2, 2}, 60));
  {
    ag::NoGradGuard ng;
    Var b = op::scale(a, 2.0f);
    CHECK_FALSE(b.requires_grad());
  }
  CHECK(op::scale(a, 2.0f).requires_grad());
}

TEST_CASE("Adam follows the bias-corrected update") {
  Var p = ag::param(Tensor({1}, 1.0f));
  nn::Adam opt({p}, 0.1f);
  ag::backward(op::scale(p, 3.0f));
  opt.step();
  // m̂ = g, v̂ = g², step = lr · g / (|g| + eps)
  CHECK(p.value()[0] == doctest::Approx(1.0 - 0.1 * 3.0 / (3.0 + 1e-8)).epsilon(1e-6));
}

TEST_CASE("parameter store checksum tracks values and names") {
  nn::ParamStore a;
  a.add("x", Tensor({2}, 1.0f));
  nn::ParamStore b = a.clone();
  CHECK(a.checksum() == b.checksum());
  Var v = b.get("x");
  v.mutable_value()[1] = 1.0000001f;
  CHECK(a.checksum() != b.checksum());
  CHECK_THROWS_AS(a.add("x", Tensor({1})), InvariantError);
}
