#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "sgx/kernels.hpp"
#include "sgx/rng.hpp"

using namespace sgx;
namespace k = sgx::kernels;

namespace {

float max_diff(const std::vector<float>& a, const std::vector<float>& b) {
  float m = 0.0f;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

std::vector<float> randv(Rng& r, std::size_t n) {
  std::vector<float> v(n);
  for (auto& x : v) x = r.normal();
  return v;
}

}  // namespace

TEST_CASE("conv kernels: parallel matches serial reference") {
  Rng rng(1);
  for (int dil : {1, 2, 4}) {
    for (int stride : {1, 2}) {
      k::ConvGeom g{2, 5, 11, 9, 7, 3, stride, dil, dil};
      const std::size_t nx = 2 * 5 * 11 * 9, nw = 7 * 5 * 9, ny = 2 * 7 * g.out_h() * g.out_w();
      auto x = randv(rng, nx), w = randv(rng, nw), gy = randv(rng, ny);
      std::vector<float> ys(ny), yp(ny), gxs(nx), gxp(nx), gws(nw, 0.f), gwp(nw, 0.f);
      k::serial::conv2d_forward(g, x.data(), w.data(), ys.data());
      k::parallel::conv2d_forward(g, x.data(), w.data(), yp.data());
      CHECK(max_diff(ys, yp) < 1e-4f);
      k::serial::conv2d_backward_input(g, gy.data(), w.data(), gxs.data());
      k::parallel::conv2d_backward_input(g, gy.data(), w.data(), gxp.data());
      CHECK(max_diff(gxs, gxp) < 1e-4f);
      k::serial::conv2d_backward_weight(g, x.data(), gy.data(), gws.data());
      k::parallel::conv2d_backward_weight(g, x.data(), gy.data(), gwp.data());
      CHECK(max_diff(gws, gwp) < 1e-3f);
    }
  }
}

TEST_CASE("conv backward_input is the adjoint of forward") {
  // <conv(x), gy> == <x, conv^T(gy)>
  Rng rng(2);
  k::ConvGeom g{1, 3, 8, 8, 4, 3, 1, 2, 2};
  const std::size_t nx = 3 * 64, ny = 4 * g.out_h() * g.out_w();
  auto x = randv(rng, nx), w = randv(rng, 4 * 3 * 9), gy = randv(rng, ny);
  std::vector<float> y(ny), gx(nx);
  k::serial::conv2d_forward(g, x.data(), w.data(), y.data());
  k::serial::conv2d_backward_input(g, gy.data(), w.data(), gx.data());
  double a = 0, b = 0;
  for (std::size_t i = 0; i < ny; ++i) a += double(y[i]) * gy[i];
  for (std::size_t i = 0; i < nx; ++i) b += double(x[i]) * gx[i];
  CHECK(a == doctest::Approx(b).epsilon(1e-5));
}

TEST_CASE("fir kernels: parallel matches serial, adjoint identity") {
  Rng rng(3);
  k::FirGeom g{3, 7, 6, 4, 4, 2, 1, 1, 2, 1, 2, 1};
  const std::size_t nx = 3 * 7 * 6, ny = 3 * g.out_h() * g.out_w();
  auto x = randv(rng, nx), f = randv(rng, 16), gy = randv(rng, ny);
  std::vector<float> ys(ny), yp(ny), gxs(nx), gxp(nx);
  k::serial::fir2d_forward(g, x.data(), f.data(), ys.data());
  k::parallel::fir2d_forward(g, x.data(), f.data(), yp.data());
  CHECK(max_diff(ys, yp) < 1e-5f);
  k::serial::fir2d_adjoint(g, gy.data(), f.data(), gxs.data());
  k::parallel::fir2d_adjoint(g, gy.data(), f.data(), gxp.data());
  CHECK(max_diff(gxs, gxp) < 1e-5f);
  double a = 0, b = 0;
  for (std::size_t i = 0; i < ny; ++i) a += double(ys[i]) * gy[i];
  for (std::size_t i = 0; i < nx; ++i) b += double(x[i]) * gxs[i];
  CHECK(a == doctest::Approx(b).epsilon(1e-5));
}

TEST_CASE("gemm: transposes and beta") {
  Rng rng(4);
  const int m = 5, n = 7, kk = 3;
  auto a = randv(rng, m * kk), b = randv(rng, kk * n), c0 = randv(rng, m * n);
  for (bool ta : {false, true})
    for (bool tb : {false, true}) {
      std::vector<float> cs = c0, cp = c0;
      k::serial::gemm(m, n, kk, a.data(), ta, b.data(), tb, cs.data(), 0.5f);
      k::parallel::gemm(m, n, kk, a.data(), ta, b.data(), tb, cp.data(), 0.5f);
      CHECK(max_diff(cs, cp) < 1e-5f);
      // Direct oracle.
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
          double acc = 0.5 * c0[i * n + j];
          for (int p = 0; p < kk; ++p)
            acc += double(ta ? a[p * m + i] : a[i * kk + p]) * (tb ? b[j * kk + p] : b[p * n + j]);
          CHECK(cs[i * n + j] == doctest::Approx(acc).epsilon(1e-5));
        }
    }
}

TEST_CASE("backend guard restores the previous backend") {
  k::set_backend(k::Backend::Parallel);
  {
    k::BackendGuard g(k::Backend::Serial);
    CHECK(k::backend() == k::Backend::Serial);
  }
  CHECK(k::backend() == k::Backend::Parallel);
}
