#include <algorithm>
#include <cstddef>

#include "sgx/kernels.hpp"

namespace sgx::kernels::serial {

void conv2d_forward(const ConvGeom& g, const float* x, const float* wt, float* y) {
  const int oh = g.out_h(), ow = g.out_w();
  for (int n = 0; n < g.n; ++n)
    for (int co = 0; co < g.cout; ++co)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          double acc = 0.0;
          for (int ci = 0; ci < g.cin; ++ci)
            for (int ky = 0; ky < g.k; ++ky) {
              int iy = oy * g.stride - g.pad + ky * g.dilation;
              if (iy < 0 || iy >= g.h) continue;
              for (int kx = 0; kx < g.k; ++kx) {
                int ix = ox * g.stride - g.pad + kx * g.dilation;
                if (ix < 0 || ix >= g.w) continue;
                acc += static_cast<double>(wt[((static_cast<std::size_t>(co) * g.cin + ci) * g.k + ky) * g.k + kx]) *
                       x[((static_cast<std::size_t>(n) * g.cin + ci) * g.h + iy) * g.w + ix];
              }
            }
          y[((static_cast<std::size_t>(n) * g.cout + co) * oh + oy) * ow + ox] = static_cast<float>(acc);
        }
}

void conv2d_backward_input(const ConvGeom& g, const float* gy, const float* wt, float* gx) {
  const int oh = g.out_h(), ow = g.out_w();
  std::fill(gx, gx + static_cast<std::size_t>(g.n) * g.cin * g.h * g.w, 0.0f);
  for (int n = 0; n < g.n; ++n)
    for (int co = 0; co < g.cout; ++co)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          float go = gy[((static_cast<std::size_t>(n) * g.cout + co) * oh + oy) * ow + ox];
          for (int ci = 0; ci < g.cin; ++ci)
            for (int ky = 0; ky < g.k; ++ky) {
              int iy = oy * g.stride - g.pad + ky * g.dilation;
              if (iy < 0 || iy >= g.h) continue;
              for (int kx = 0; kx < g.k; ++kx) {
                int ix = ox * g.stride - g.pad + kx * g.dilation;
                if (ix < 0 || ix >= g.w) continue;
                gx[((static_cast<std::size_t>(n) * g.cin + ci) * g.h + iy) * g.w + ix] +=
                    go * wt[((static_cast<std::size_t>(co) * g.cin + ci) * g.k + ky) * g.k + kx];
              }
            }
        }
}

void conv2d_backward_weight(const ConvGeom& g, const float* x, const float* gy, float* gw) {
  const int oh = g.out_h(), ow = g.out_w();
  for (int co = 0; co < g.cout; ++co)
    for (int ci = 0; ci < g.cin; ++ci)
      for (int ky = 0; ky < g.k; ++ky)
        for (int kx = 0; kx < g.k; ++kx) {
          double acc = 0.0;
          for (int n = 0; n < g.n; ++n)
            for (int oy = 0; oy < oh; ++oy) {
              int iy = oy * g.stride - g.pad + ky * g.dilation;
              if (iy < 0 || iy >= g.h) continue;
              for (int ox = 0; ox < ow; ++ox) {
                int ix = ox * g.stride - g.pad + kx * g.dilation;
                if (ix < 0 || ix >= g.w) continue;
                acc += static_cast<double>(gy[((static_cast<std::size_t>(n) * g.cout + co) * oh + oy) * ow + ox]) *
                       x[((static_cast<std::size_t>(n) * g.cin + ci) * g.h + iy) * g.w + ix];
              }
            }
          gw[((static_cast<std::size_t>(co) * g.cin + ci) * g.k + ky) * g.k + kx] += static_cast<float>(acc);
        }
}

namespace {
// Value of the zero-inserted input at padded coordinate (py, px); 0 outside.
inline float upsampled(const FirGeom& g, const float* plane, int py, int px) {
  int uy = py - g.pad_y0, ux = px - g.pad_x0;
  if (uy < 0 || ux < 0 || uy % g.up || ux % g.up) return 0.0f;
  int iy = uy / g.up, ix = ux / g.up;
  if (iy >= g.h || ix >= g.w) return 0.0f;
  return plane[static_cast<std::size_t>(iy) * g.w + ix];
}
}  // namespace

void fir2d_forward(const FirGeom& g, const float* x, const float* f, float* y) {
  const int oh = g.out_h(), ow = g.out_w();
  for (int p = 0; p < g.planes; ++p) {
    const float* plane = x + static_cast<std::size_t>(p) * g.h * g.w;
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        double acc = 0.0;
        for (int ky = 0; ky < g.kh; ++ky)
          for (int kx = 0; kx < g.kw; ++kx)
            acc += static_cast<double>(f[ky * g.kw + kx]) *
                   upsampled(g, plane, oy * g.down + ky * g.dilation, ox * g.down + kx * g.dilation);
        y[(static_cast<std::size_t>(p) * oh + oy) * ow + ox] = static_cast<float>(acc);
      }
  }
}

void fir2d_adjoint(const FirGeom& g, const float* gy, const float* f, float* gx) {
  const int oh = g.out_h(), ow = g.out_w();
  std::fill(gx, gx + static_cast<std::size_t>(g.planes) * g.h * g.w, 0.0f);
  for (int p = 0; p < g.planes; ++p)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        float go = gy[(static_cast<std::size_t>(p) * oh + oy) * ow + ox];
        for (int ky = 0; ky < g.kh; ++ky)
          for (int kx = 0; kx < g.kw; ++kx) {
            int uy = oy * g.down + ky * g.dilation - g.pad_y0;
            int ux = ox * g.down + kx * g.dilation - g.pad_x0;
            if (uy < 0 || ux < 0 || uy % g.up || ux % g.up) continue;
            int iy = uy / g.up, ix = ux / g.up;
            if (iy >= g.h || ix >= g.w) continue;
            gx[(static_cast<std::size_t>(p) * g.h + iy) * g.w + ix] += go * f[ky * g.kw + kx];
          }
      }
}

void gemm(int m, int n, int k, const float* a, bool trans_a, const float* b, bool trans_b, float* c,
          float beta) {
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int p = 0; p < k; ++p) {
        float av = trans_a ? a[static_cast<std::size_t>(p) * m + i] : a[static_cast<std::size_t>(i) * k + p];
        float bv = trans_b ? b[static_cast<std::size_t>(j) * k + p] : b[static_cast<std::size_t>(p) * n + j];
        acc += static_cast<double>(av) * bv;
      }
      float& out = c[static_cast<std::size_t>(i) * n + j];
      out = static_cast<float>(acc + (beta == 0.0f ? 0.0 : static_cast<double>(beta) * out));
    }
}

}  // namespace sgx::kernels::serial
