#include <algorithm>
#include <atomic>
#include <cstddef>
#include <vector>

#include <Eigen/Core>

#include "sgx/kernels.hpp"

namespace sgx::kernels {

namespace {
std::atomic<Backend> g_backend{Backend::Parallel};
}

void set_backend(Backend b) { g_backend.store(b); }
Backend backend() { return g_backend.load(); }

namespace parallel {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

bool is_pointwise(const ConvGeom& g) { return g.k == 1 && g.stride == 1 && g.pad == 0; }

// col[(ci*k + ky)*k + kx][oy*ow + ox] = x[ci][oy*stride - pad + ky*dil][...]
void im2col(const ConvGeom& g, const float* x, float* col) {
  const int oh = g.out_h(), ow = g.out_w();
  const std::size_t ohw = static_cast<std::size_t>(oh) * ow;
  for (int ci = 0; ci < g.cin; ++ci) {
    const float* plane = x + static_cast<std::size_t>(ci) * g.h * g.w;
    for (int ky = 0; ky < g.k; ++ky)
      for (int kx = 0; kx < g.k; ++kx) {
        float* row = col + ((static_cast<std::size_t>(ci) * g.k + ky) * g.k + kx) * ohw;
        for (int oy = 0; oy < oh; ++oy) {
          int iy = oy * g.stride - g.pad + ky * g.dilation;
          float* dst = row + static_cast<std::size_t>(oy) * ow;
          if (iy < 0 || iy >= g.h) {
            std::fill(dst, dst + ow, 0.0f);
            continue;
          }
          const float* src = plane + static_cast<std::size_t>(iy) * g.w;
          int off = kx * g.dilation - g.pad;
          if (g.stride == 1) {
            int lo = std::clamp(-off, 0, ow), hi = std::clamp(g.w - off, 0, ow);
            std::fill(dst, dst + lo, 0.0f);
            if (hi > lo) std::copy(src + lo + off, src + hi + off, dst + lo);
            std::fill(dst + std::max(hi, lo), dst + ow, 0.0f);
          } else {
            for (int ox = 0; ox < ow; ++ox) {
              int ix = ox * g.stride + off;
              dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : 0.0f;
            }
          }
        }
      }
  }
}

void col2im(const ConvGeom& g, const float* col, float* x) {
  const int oh = g.out_h(), ow = g.out_w();
  const std::size_t ohw = static_cast<std::size_t>(oh) * ow;
  std::fill(x, x + static_cast<std::size_t>(g.cin) * g.h * g.w, 0.0f);
  for (int ci = 0; ci < g.cin; ++ci) {
    float* plane = x + static_cast<std::size_t>(ci) * g.h * g.w;
    for (int ky = 0; ky < g.k; ++ky)
      for (int kx = 0; kx < g.k; ++kx) {
        const float* row = col + ((static_cast<std::size_t>(ci) * g.k + ky) * g.k + kx) * ohw;
        for (int oy = 0; oy < oh; ++oy) {
          int iy = oy * g.stride - g.pad + ky * g.dilation;
          if (iy < 0 || iy >= g.h) continue;
          const float* src = row + static_cast<std::size_t>(oy) * ow;
          float* dst = plane + static_cast<std::size_t>(iy) * g.w;
          int off = kx * g.dilation - g.pad;
          for (int ox = 0; ox < ow; ++ox) {
            int ix = ox * g.stride + off;
            if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
          }
        }
      }
  }
}

}  // namespace

void conv2d_forward(const ConvGeom& g, const float* x, const float* wt, float* y) {
  const int oh = g.out_h(), ow = g.out_w();
  const int kk = g.cin * g.k * g.k;
  const std::size_t ohw = static_cast<std::size_t>(oh) * ow;
  CMapMat w(wt, g.cout, kk);
#pragma omp parallel
  {
    std::vector<float> col;
    if (!is_pointwise(g)) col.resize(static_cast<std::size_t>(kk) * ohw);
#pragma omp for schedule(static)
    for (int n = 0; n < g.n; ++n) {
      const float* xn = x + static_cast<std::size_t>(n) * g.cin * g.h * g.w;
      const float* cp = xn;
      if (!is_pointwise(g)) {
        im2col(g, xn, col.data());
        cp = col.data();
      }
      MapMat yn(y + static_cast<std::size_t>(n) * g.cout * ohw, g.cout, static_cast<Eigen::Index>(ohw));
      yn.noalias() = w * CMapMat(cp, kk, static_cast<Eigen::Index>(ohw));
    }
  }
}

void conv2d_backward_input(const ConvGeom& g, const float* gy, const float* wt, float* gx) {
  const int oh = g.out_h(), ow = g.out_w();
  const int kk = g.cin * g.k * g.k;
  const std::size_t ohw = static_cast<std::size_t>(oh) * ow;
  CMapMat w(wt, g.cout, kk);
#pragma omp parallel
  {
    std::vector<float> col(is_pointwise(g) ? 0 : static_cast<std::size_t>(kk) * ohw);
#pragma omp for schedule(static)
    for (int n = 0; n < g.n; ++n) {
      CMapMat gyn(gy + static_cast<std::size_t>(n) * g.cout * ohw, g.cout, static_cast<Eigen::Index>(ohw));
      float* gxn = gx + static_cast<std::size_t>(n) * g.cin * g.h * g.w;
      if (is_pointwise(g)) {
        MapMat(gxn, kk, static_cast<Eigen::Index>(ohw)).noalias() = w.transpose() * gyn;
      } else {
        MapMat(col.data(), kk, static_cast<Eigen::Index>(ohw)).noalias() = w.transpose() * gyn;
        col2im(g, col.data(), gxn);
      }
    }
  }
}

void conv2d_backward_weight(const ConvGeom& g, const float* x, const float* gy, float* gw) {
  const int oh = g.out_h(), ow = g.out_w();
  const int kk = g.cin * g.k * g.k;
  const std::size_t ohw = static_cast<std::size_t>(oh) * ow;
  MapMat out(gw, g.cout, kk);
#pragma omp parallel
  {
    RowMat local = RowMat::Zero(g.cout, kk);
    std::vector<float> col(is_pointwise(g) ? 0 : static_cast<std::size_t>(kk) * ohw);
#pragma omp for schedule(static)
    for (int n = 0; n < g.n; ++n) {
      const float* xn = x + static_cast<std::size_t>(n) * g.cin * g.h * g.w;
      const float* cp = xn;
      if (!is_pointwise(g)) {
        im2col(g, xn, col.data());
        cp = col.data();
      }
      CMapMat gyn(gy + static_cast<std::size_t>(n) * g.cout * ohw, g.cout, static_cast<Eigen::Index>(ohw));
      local.noalias() += gyn * CMapMat(cp, kk, static_cast<Eigen::Index>(ohw)).transpose();
    }
#pragma omp critical
    out += local;
  }
}

void fir2d_forward(const FirGeom& g, const float* x, const float* f, float* y) {
  const int oh = g.out_h(), ow = g.out_w();
#pragma omp parallel for schedule(static)
  for (int p = 0; p < g.planes; ++p) {
    const float* plane = x + static_cast<std::size_t>(p) * g.h * g.w;
    float* out = y + static_cast<std::size_t>(p) * oh * ow;
    std::fill(out, out + static_cast<std::size_t>(oh) * ow, 0.0f);
    // Scatter each input sample through the taps it reaches.
    for (int ky = 0; ky < g.kh; ++ky)
      for (int kx = 0; kx < g.kw; ++kx) {
        const float tap = f[ky * g.kw + kx];
        if (tap == 0.0f) continue;
        for (int oy = 0; oy < oh; ++oy) {
          int uy = oy * g.down + ky * g.dilation - g.pad_y0;
          if (uy < 0 || uy % g.up) continue;
          int iy = uy / g.up;
          if (iy >= g.h) continue;
          const float* src = plane + static_cast<std::size_t>(iy) * g.w;
          float* dst = out + static_cast<std::size_t>(oy) * ow;
          for (int ox = 0; ox < ow; ++ox) {
            int ux = ox * g.down + kx * g.dilation - g.pad_x0;
            if (ux < 0 || ux % g.up) continue;
            int ix = ux / g.up;
            if (ix < g.w) dst[ox] += tap * src[ix];
          }
        }
      }
  }
}

void fir2d_adjoint(const FirGeom& g, const float* gy, const float* f, float* gx) {
  const int oh = g.out_h(), ow = g.out_w();
#pragma omp parallel for schedule(static)
  for (int p = 0; p < g.planes; ++p) {
    const float* gout = gy + static_cast<std::size_t>(p) * oh * ow;
    float* plane = gx + static_cast<std::size_t>(p) * g.h * g.w;
    std::fill(plane, plane + static_cast<std::size_t>(g.h) * g.w, 0.0f);
    for (int ky = 0; ky < g.kh; ++ky)
      for (int kx = 0; kx < g.kw; ++kx) {
        const float tap = f[ky * g.kw + kx];
        if (tap == 0.0f) continue;
        for (int oy = 0; oy < oh; ++oy) {
          int uy = oy * g.down + ky * g.dilation - g.pad_y0;
          if (uy < 0 || uy % g.up) continue;
          int iy = uy / g.up;
          if (iy >= g.h) continue;
          const float* src = gout + static_cast<std::size_t>(oy) * ow;
          float* dst = plane + static_cast<std::size_t>(iy) * g.w;
          for (int ox = 0; ox < ow; ++ox) {
            int ux = ox * g.down + kx * g.dilation - g.pad_x0;
            if (ux < 0 || ux % g.up) continue;
            int ix = ux / g.up;
            if (ix < g.w) dst[ix] += tap * src[ox];
          }
        }
      }
  }
}

void gemm(int m, int n, int k, const float* a, bool trans_a, const float* b, bool trans_b, float* c,
          float beta) {
  MapMat cm(c, m, n);
  if (beta == 0.0f) cm.setZero();
  else if (beta != 1.0f) cm *= beta;
  if (!trans_a && !trans_b) cm.noalias() += CMapMat(a, m, k) * CMapMat(b, k, n);
  else if (trans_a && !trans_b) cm.noalias() += CMapMat(a, k, m).transpose() * CMapMat(b, k, n);
  else if (!trans_a && trans_b) cm.noalias() += CMapMat(a, m, k) * CMapMat(b, n, k).transpose();
  else cm.noalias() += CMapMat(a, k, m).transpose() * CMapMat(b, n, k).transpose();
}

}  // namespace parallel

// Dispatch.
#define SGX_DISPATCH(call) \
  (backend() == Backend::Serial ? serial::call : parallel::call)

void conv2d_forward(const ConvGeom& g, const float* x, const float* wt, float* y) {
  SGX_DISPATCH(conv2d_forward(g, x, wt, y));
}
void conv2d_backward_input(const ConvGeom& g, const float* gy, const float* wt, float* gx) {
  SGX_DISPATCH(conv2d_backward_input(g, gy, wt, gx));
}
void conv2d_backward_weight(const ConvGeom& g, const float* x, const float* gy, float* gw) {
  SGX_DISPATCH(conv2d_backward_weight(g, x, gy, gw));
}
void fir2d_forward(const FirGeom& g, const float* x, const float* f, float* y) {
  SGX_DISPATCH(fir2d_forward(g, x, f, y));
}
void fir2d_adjoint(const FirGeom& g, const float* gy, const float* f, float* gx) {
  SGX_DISPATCH(fir2d_adjoint(g, gy, f, gx));
}
void gemm(int m, int n, int k, const float* a, bool trans_a, const float* b, bool trans_b, float* c, float beta) {
  SGX_DISPATCH(gemm(m, n, k, a, trans_a, b, trans_b, c, beta));
}

#undef SGX_DISPATCH

}  // namespace sgx::kernels
