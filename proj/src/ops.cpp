#include "sgx/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>

namespace sgx::op {

namespace {

constexpr std::size_t kParallelThreshold = 32768;

void give(const Var& v, Tensor g) {
  if (v.requires_grad()) v.node()->accumulate(g);
}

void require_same(const Var& a, const Var& b, const char* what) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

template <class F>
Tensor map_unary(const Tensor& x, F f) {
  Tensor y(x.shape());
  const float* src = x.data();
  float* dst = y.data();
  const std::size_t n = x.numel();
#pragma omp parallel for schedule(static) if (n > kParallelThreshold)
  for (std::size_t i = 0; i < n; ++i) dst[i] = f(src[i]);
  return y;
}

template <class F>
Tensor map_binary(const Tensor& a, const Tensor& b, F f) {
  Tensor y(a.shape());
  const float* pa = a.data();
  const float* pb = b.data();
  float* dst = y.data();
  const std::size_t n = a.numel();
#pragma omp parallel for schedule(static) if (n > kParallelThreshold)
  for (std::size_t i = 0; i < n; ++i) dst[i] = f(pa[i], pb[i]);
  return y;
}

Tensor transpose01(const Tensor& w) {
  const int a = w.dim(0), b = w.dim(1);
  const std::size_t inner = w.numel() / (static_cast<std::size_t>(a) * b);
  Shape s = w.shape();
  std::swap(s[0], s[1]);
  Tensor t(s);
  for (int i = 0; i < a; ++i)
    for (int j = 0; j < b; ++j)
      std::copy_n(w.data() + (static_cast<std::size_t>(i) * b + j) * inner, inner,
                  t.data() + (static_cast<std::size_t>(j) * a + i) * inner);
  return t;
}

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same(a, b, "add");
  return ag::make_result(map_binary(a.value(), b.value(), [](float x, float y) { return x + y; }), {a, b},
                         [a, b](const Tensor& g) {
                           give(a, g);
                           give(b, g);
                         });
}

Var sub(const Var& a, const Var& b) {
  require_same(a, b, "sub");
  return ag::make_result(map_binary(a.value(), b.value(), [](float x, float y) { return x - y; }), {a, b},
                         [a, b](const Tensor& g) {
                           give(a, g);
                           if (b.requires_grad()) give(b, map_unary(g, [](float v) { return -v; }));
                         });
}

Var mul(const Var& a, const Var& b) {
  require_same(a, b, "mul");
  return ag::make_result(map_binary(a.value(), b.value(), [](float x, float y) { return x * y; }), {a, b},
                         [a, b](const Tensor& g) {
                           if (a.requires_grad()) give(a, map_binary(g, b.value(), [](float u, float v) { return u * v; }));
                           if (b.requires_grad()) give(b, map_binary(g, a.value(), [](float u, float v) { return u * v; }));
                         });
}

Var scale(const Var& a, float c) {
  return ag::make_result(map_unary(a.value(), [c](float x) { return x * c; }), {a},
                         [a, c](const Tensor& g) { give(a, map_unary(g, [c](float v) { return v * c; })); });
}

Var add_scalar(const Var& a, float c) {
  return ag::make_result(map_unary(a.value(), [c](float x) { return x + c; }), {a},
                         [a](const Tensor& g) { give(a, g); });
}

Var mul_channel(const Var& x, const Var& s) {
  const Tensor& xv = x.value();
  require_4d(xv, "mul_channel");
  require_shape(s.value(), {xv.n(), xv.c()}, "mul_channel style");
  const int N = xv.n(), C = xv.c();
  const std::size_t hw = static_cast<std::size_t>(xv.h()) * xv.w();
  Tensor y(xv.shape());
#pragma omp parallel for schedule(static)
  for (int nc = 0; nc < N * C; ++nc) {
    const float sv = s.value()[nc];
    const float* src = xv.data() + nc * hw;
    float* dst = y.data() + nc * hw;
    for (std::size_t i = 0; i < hw; ++i) dst[i] = src[i] * sv;
  }
  return ag::make_result(std::move(y), {x, s}, [x, s, N, C, hw](const Tensor& g) {
    if (x.requires_grad()) {
      Tensor gx(g.shape());
#pragma omp parallel for schedule(static)
      for (int nc = 0; nc < N * C; ++nc) {
        const float sv = s.value()[nc];
        for (std::size_t i = 0; i < hw; ++i) gx[nc * hw + i] = g[nc * hw + i] * sv;
      }
      give(x, std::move(gx));
    }
    if (s.requires_grad()) {
      Tensor gs(s.shape());
#pragma omp parallel for schedule(static)
      for (int nc = 0; nc < N * C; ++nc) {
        double acc = 0.0;
        for (std::size_t i = 0; i < hw; ++i) acc += static_cast<double>(g[nc * hw + i]) * x.value()[nc * hw + i];
        gs[nc] = static_cast<float>(acc);
      }
      give(s, std::move(gs));
    }
  });
}

Var add_channel_bias(const Var& x, const Var& b) {
  const Tensor& xv = x.value();
  require_4d(xv, "add_channel_bias");
  require_shape(b.value(), {xv.c()}, "add_channel_bias bias");
  const int N = xv.n(), C = xv.c();
  const std::size_t hw = static_cast<std::size_t>(xv.h()) * xv.w();
  Tensor y(xv.shape());
#pragma omp parallel for schedule(static)
  for (int nc = 0; nc < N * C; ++nc) {
    const float bv = b.value()[nc % C];
    for (std::size_t i = 0; i < hw; ++i) y[nc * hw + i] = xv[nc * hw + i] + bv;
  }
  return ag::make_result(std::move(y), {x, b}, [x, b, N, C, hw](const Tensor& g) {
    give(x, g);
    if (b.requires_grad()) {
      Tensor gb(b.shape());
      for (int nc = 0; nc < N * C; ++nc) {
        double acc = 0.0;
        for (std::size_t i = 0; i < hw; ++i) acc += g[nc * hw + i];
        gb[nc % C] += static_cast<float>(acc);
      }
      give(b, std::move(gb));
    }
  });
}

Var expand0(const Var& x, int n) {
  const Tensor& xv = x.value();
  if (xv.ndim() == 0 || xv.dim(0) != 1) throw ShapeError("expand0 expects a leading dimension of 1, got " + shape_str(xv.shape()));
  Shape s = xv.shape();
  s[0] = n;
  Tensor y(s);
  for (int i = 0; i < n; ++i) std::copy(xv.data(), xv.data() + xv.numel(), y.data() + i * xv.numel());
  return ag::make_result(std::move(y), {x}, [x, n](const Tensor& g) {
    Tensor gx(x.shape());
    const std::size_t m = gx.numel();
    for (int i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) gx[j] += g[i * m + j];
    give(x, std::move(gx));
  });
}

Var conv2d(const Var& x, const Var& w, ConvOpts o) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  require_4d(xv, "conv2d input");
  if (wv.ndim() != 4 || wv.dim(2) != wv.dim(3))
    throw ShapeError("conv2d weight must be (Cout,Cin,k,k), got " + shape_str(wv.shape()));
  if (wv.dim(1) != xv.c())
    throw ShapeError("conv2d: input has " + std::to_string(xv.c()) + " channels, weight expects " + std::to_string(wv.dim(1)));
  if (o.dilation < 1 || o.stride < 1) throw ArgumentError("conv2d: stride and dilation must be >= 1");
  kernels::ConvGeom geom{xv.n(), xv.c(), xv.h(), xv.w(), wv.dim(0), wv.dim(2), o.stride, o.pad, o.dilation};
  if (geom.out_h() < 1 || geom.out_w() < 1)
    throw ShapeError("conv2d: input " + shape_str(xv.shape()) + " too small for kernel extent");
  Tensor y({geom.n, geom.cout, geom.out_h(), geom.out_w()});
  kernels::conv2d_forward(geom, xv.data(), wv.data(), y.data());
  return ag::make_result(std::move(y), {x, w}, [x, w, geom](const Tensor& g) {
    if (x.requires_grad()) {
      Tensor gx(x.shape());
      kernels::conv2d_backward_input(geom, g.data(), w.value().data(), gx.data());
      give(x, std::move(gx));
    }
    if (w.requires_grad()) {
      Tensor gw(w.shape());
      kernels::conv2d_backward_weight(geom, x.value().data(), g.data(), gw.data());
      give(w, std::move(gw));
    }
  });
}

Var conv_transpose2d_s2(const Var& x, const Var& w) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  require_4d(xv, "conv_transpose2d input");
  if (wv.ndim() != 4 || wv.dim(1) != xv.c())
    throw ShapeError("conv_transpose2d: weight " + shape_str(wv.shape()) + " incompatible with input " + shape_str(xv.shape()));
  const int k = wv.dim(2), cout = wv.dim(0);
  const int oh = (xv.h() - 1) * 2 + k, ow = (xv.w() - 1) * 2 + k;
  // Adjoint of a stride-2 convolution from the (cout, oh, ow) map to x.
  kernels::ConvGeom geom{xv.n(), cout, oh, ow, xv.c(), k, 2, 0, 1};
  Tensor wt = transpose01(wv);
  Tensor y({xv.n(), cout, oh, ow});
  kernels::conv2d_backward_input(geom, xv.data(), wt.data(), y.data());
  return ag::make_result(std::move(y), {x, w}, [x, w, geom, wt = std::move(wt)](const Tensor& g) {
    if (x.requires_grad()) {
      Tensor gx(x.shape());
      kernels::conv2d_forward(geom, g.data(), wt.data(), gx.data());
      give(x, std::move(gx));
    }
    if (w.requires_grad()) {
      Tensor gwt(wt.shape());
      kernels::conv2d_backward_weight(geom, g.data(), x.value().data(), gwt.data());
      give(w, transpose01(gwt));
    }
  });
}

Var fir2d(const Var& x, const Tensor& filter, FirOpts o) {
  const Tensor& xv = x.value();
  require_4d(xv, "fir2d input");
  if (filter.ndim() != 2) throw ShapeError("fir2d filter must be 2D");
  kernels::FirGeom geom{xv.n() * xv.c(), xv.h(), xv.w(), filter.dim(0), filter.dim(1), o.up, o.down, o.dilation,
                        o.pad_y0, o.pad_y1, o.pad_x0, o.pad_x1};
  if (geom.out_h() < 1 || geom.out_w() < 1) throw ShapeError("fir2d: input " + shape_str(xv.shape()) + " too small");
  Tensor y({xv.n(), xv.c(), geom.out_h(), geom.out_w()});
  kernels::fir2d_forward(geom, xv.data(), filter.data(), y.data());
  return ag::make_result(std::move(y), {x}, [x, geom, filter](const Tensor& g) {
    Tensor gx(x.shape());
    kernels::fir2d_adjoint(geom, g.data(), filter.data(), gx.data());
    give(x, std::move(gx));
  });
}

Var leaky_relu(const Var& x, float slope, float gain) {
  Tensor y = map_unary(x.value(), [=](float v) { return (v >= 0.0f ? v : v * slope) * gain; });
  return ag::make_result(std::move(y), {x}, [x, slope, gain](const Tensor& g) {
    give(x, map_binary(g, x.value(), [=](float gv, float v) { return gv * (v >= 0.0f ? gain : slope * gain); }));
  });
}

Var sigmoid(const Var& x) {
  Tensor y = map_unary(x.value(), [](float v) { return 1.0f / (1.0f + std::exp(-v)); });
  Tensor yc = y;
  return ag::make_result(std::move(y), {x}, [x, yc = std::move(yc)](const Tensor& g) {
    give(x, map_binary(g, yc, [](float gv, float s) { return gv * s * (1.0f - s); }));
  });
}

Var softplus(const Var& x) {
  Tensor y = map_unary(x.value(), [](float v) { return v > 20.0f ? v : std::log1p(std::exp(v)); });
  return ag::make_result(std::move(y), {x}, [x](const Tensor& g) {
    give(x, map_binary(g, x.value(), [](float gv, float v) { return gv / (1.0f + std::exp(-v)); }));
  });
}

Var abs(const Var& x) {
  return ag::make_result(map_unary(x.value(), [](float v) { return std::fabs(v); }), {x}, [x](const Tensor& g) {
    give(x, map_binary(g, x.value(), [](float gv, float v) { return v > 0.0f ? gv : (v < 0.0f ? -gv : 0.0f); }));
  });
}

Var linear(const Var& x, const Var& w, const Var& b, float wscale, float bscale) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  if (xv.ndim() != 2 || wv.ndim() != 2 || xv.dim(1) != wv.dim(1))
    throw ShapeError("linear: input " + shape_str(xv.shape()) + " incompatible with weight " + shape_str(wv.shape()));
  const int N = xv.dim(0), in = xv.dim(1), out = wv.dim(0);
  if (b.defined()) require_shape(b.value(), {out}, "linear bias");
  Tensor y({N, out});
  kernels::gemm(N, out, in, xv.data(), false, wv.data(), true, y.data(), 0.0f);
  for (int n = 0; n < N; ++n)
    for (int o = 0; o < out; ++o)
      y[n * out + o] = y[n * out + o] * wscale + (b.defined() ? b.value()[o] * bscale : 0.0f);
  std::vector<Var> inputs{x, w};
  if (b.defined()) inputs.push_back(b);
  return ag::make_result(std::move(y), inputs, [x, w, b, wscale, bscale, N, in, out](const Tensor& g) {
    if (x.requires_grad()) {
      Tensor gx({N, in});
      kernels::gemm(N, in, out, g.data(), false, w.value().data(), false, gx.data(), 0.0f);
      for (auto& v : gx.values()) v *= wscale;
      give(x, std::move(gx));
    }
    if (w.requires_grad()) {
      Tensor gw({out, in});
      kernels::gemm(out, in, N, g.data(), true, x.value().data(), false, gw.data(), 0.0f);
      for (auto& v : gw.values()) v *= wscale;
      give(w, std::move(gw));
    }
    if (b.defined() && b.requires_grad()) {
      Tensor gb({out});
      for (int n = 0; n < N; ++n)
        for (int o = 0; o < out; ++o) gb[o] += g[n * out + o] * bscale;
      give(b, std::move(gb));
    }
  });
}

Var pixel_norm(const Var& x, float eps) {
  const Tensor& xv = x.value();
  if (xv.ndim() != 2) throw ShapeError("pixel_norm expects (N,D)");
  const int N = xv.dim(0), D = xv.dim(1);
  Tensor y(xv.shape());
  std::vector<float> r(N);
  for (int n = 0; n < N; ++n) {
    double ss = 0.0;
    for (int d = 0; d < D; ++d) ss += static_cast<double>(xv[n * D + d]) * xv[n * D + d];
    r[n] = static_cast<float>(1.0 / std::sqrt(ss / D + eps));
    for (int d = 0; d < D; ++d) y[n * D + d] = xv[n * D + d] * r[n];
  }
  return ag::make_result(std::move(y), {x}, [x, r, N, D](const Tensor& g) {
    Tensor gx(x.shape());
    const Tensor& xv = x.value();
    for (int n = 0; n < N; ++n) {
      double dot = 0.0;
      for (int d = 0; d < D; ++d) dot += static_cast<double>(g[n * D + d]) * xv[n * D + d];
      const double rr = r[n];
      for (int d = 0; d < D; ++d)
        gx[n * D + d] = static_cast<float>(rr * g[n * D + d] - xv[n * D + d] * rr * rr * rr * dot / D);
    }
    give(x, std::move(gx));
  });
}

Var demod_coeff(const Var& s, const Var& w, float wscale, float eps) {
  const Tensor& sv = s.value();
  const Tensor& wv = w.value();
  if (sv.ndim() != 2 || wv.ndim() != 4 || sv.dim(1) != wv.dim(1))
    throw ShapeError("demod_coeff: style " + shape_str(sv.shape()) + " incompatible with weight " + shape_str(wv.shape()));
  const int N = sv.dim(0), Cin = sv.dim(1), Cout = wv.dim(0);
  const int kk = wv.dim(2) * wv.dim(3);
  const float ws2 = wscale * wscale;
  // q[o][i] = wscale^2 * sum_k w[o,i,k]^2
  Tensor q({Cout, Cin});
  for (int o = 0; o < Cout; ++o)
    for (int i = 0; i < Cin; ++i) {
      double acc = 0.0;
      for (int k = 0; k < kk; ++k) {
        double v = wv[(static_cast<std::size_t>(o) * Cin + i) * kk + k];
        acc += v * v;
      }
      q[o * Cin + i] = static_cast<float>(acc * ws2);
    }
  Tensor d({N, Cout});
  for (int n = 0; n < N; ++n)
    for (int o = 0; o < Cout; ++o) {
      double acc = 0.0;
      for (int i = 0; i < Cin; ++i) acc += static_cast<double>(sv[n * Cin + i]) * sv[n * Cin + i] * q[o * Cin + i];
      d[n * Cout + o] = static_cast<float>(1.0 / std::sqrt(acc + eps));
    }
  Tensor dc = d;
  return ag::make_result(std::move(d), {s, w}, [s, w, q, dc = std::move(dc), N, Cin, Cout, kk, ws2](const Tensor& g) {
    const Tensor& sv = s.value();
    // dd/dsum = -0.5 d^3
    std::vector<double> t(static_cast<std::size_t>(N) * Cout);
    for (int i = 0; i < N * Cout; ++i) t[i] = -0.5 * g[i] * static_cast<double>(dc[i]) * dc[i] * dc[i];
    if (s.requires_grad()) {
      Tensor gs(s.shape());
      for (int n = 0; n < N; ++n)
        for (int i = 0; i < Cin; ++i) {
          double acc = 0.0;
          for (int o = 0; o < Cout; ++o) acc += t[n * Cout + o] * q[o * Cin + i];
          gs[n * Cin + i] = static_cast<float>(acc * 2.0 * sv[n * Cin + i]);
        }
      give(s, std::move(gs));
    }
    if (w.requires_grad()) {
      Tensor gw(w.shape());
      const Tensor& wv = w.value();
      for (int o = 0; o < Cout; ++o)
        for (int i = 0; i < Cin; ++i) {
          double acc = 0.0;
          for (int n = 0; n < N; ++n) acc += t[n * Cout + o] * sv[n * Cin + i] * sv[n * Cin + i];
          for (int k = 0; k < kk; ++k) {
            std::size_t idx = (static_cast<std::size_t>(o) * Cin + i) * kk + k;
            gw[idx] = static_cast<float>(acc * ws2 * 2.0 * wv[idx]);
          }
        }
      give(w, std::move(gw));
    }
  });
}

Var channel_normalize(const Var& x, float eps) {
  const Tensor& xv = x.value();
  require_4d(xv, "channel_normalize");
  const int N = xv.n(), C = xv.c();
  const std::size_t hw = static_cast<std::size_t>(xv.h()) * xv.w();
  Tensor y(xv.shape());
  Tensor r({N, 1, xv.h(), xv.w()});
#pragma omp parallel for schedule(static)
  for (int n = 0; n < N; ++n)
    for (std::size_t p = 0; p < hw; ++p) {
      double ss = 0.0;
      for (int c = 0; c < C; ++c) {
        double v = xv[(static_cast<std::size_t>(n) * C + c) * hw + p];
        ss += v * v;
      }
      float rv = static_cast<float>(1.0 / std::sqrt(ss + eps));
      r[n * hw + p] = rv;
      for (int c = 0; c < C; ++c) {
        std::size_t idx = (static_cast<std::size_t>(n) * C + c) * hw + p;
        y[idx] = xv[idx] * rv;
      }
    }
  return ag::make_result(std::move(y), {x}, [x, r = std::move(r), N, C, hw](const Tensor& g) {
    const Tensor& xv = x.value();
    Tensor gx(x.shape());
#pragma omp parallel for schedule(static)
    for (int n = 0; n < N; ++n)
      for (std::size_t p = 0; p < hw; ++p) {
        double dot = 0.0;
        for (int c = 0; c < C; ++c) {
          std::size_t idx = (static_cast<std::size_t>(n) * C + c) * hw + p;
          dot += static_cast<double>(g[idx]) * xv[idx];
        }
        const double rv = r[n * hw + p];
        for (int c = 0; c < C; ++c) {
          std::size_t idx = (static_cast<std::size_t>(n) * C + c) * hw + p;
          gx[idx] = static_cast<float>(rv * g[idx] - xv[idx] * rv * rv * rv * dot);
        }
      }
    give(x, std::move(gx));
  });
}

Var concat_channels(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_4d(av, "concat_channels");
  require_4d(bv, "concat_channels");
  if (av.n() != bv.n() || av.h() != bv.h() || av.w() != bv.w())
    throw ShapeError("concat_channels: " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
  const int N = av.n(), Ca = av.c(), Cb = bv.c();
  const std::size_t hw = static_cast<std::size_t>(av.h()) * av.w();
  Tensor y({N, Ca + Cb, av.h(), av.w()});
  for (int n = 0; n < N; ++n) {
    std::copy_n(av.data() + n * Ca * hw, Ca * hw, y.data() + n * (Ca + Cb) * hw);
    std::copy_n(bv.data() + n * Cb * hw, Cb * hw, y.data() + (n * (Ca + Cb) + Ca) * hw);
  }
  return ag::make_result(std::move(y), {a, b}, [a, b, N, Ca, Cb, hw](const Tensor& g) {
    if (a.requires_grad()) {
      Tensor ga(a.shape());
      for (int n = 0; n < N; ++n) std::copy_n(g.data() + n * (Ca + Cb) * hw, Ca * hw, ga.data() + n * Ca * hw);
      give(a, std::move(ga));
    }
    if (b.requires_grad()) {
      Tensor gb(b.shape());
      for (int n = 0; n < N; ++n) std::copy_n(g.data() + (n * (Ca + Cb) + Ca) * hw, Cb * hw, gb.data() + n * Cb * hw);
      give(b, std::move(gb));
    }
  });
}

Var global_avg_pool(const Var& x) {
  const Tensor& xv = x.value();
  require_4d(xv, "global_avg_pool");
  const int N = xv.n(), C = xv.c();
  const std::size_t hw = static_cast<std::size_t>(xv.h()) * xv.w();
  Tensor y({N, C});
  for (int nc = 0; nc < N * C; ++nc) {
    double acc = 0.0;
    for (std::size_t i = 0; i < hw; ++i) acc += xv[nc * hw + i];
    y[nc] = static_cast<float>(acc / static_cast<double>(hw));
  }
  return ag::make_result(std::move(y), {x}, [x, N, C, hw](const Tensor& g) {
    Tensor gx(x.shape());
    for (int nc = 0; nc < N * C; ++nc) {
      const float v = g[nc] / static_cast<float>(hw);
      std::fill_n(gx.data() + nc * hw, hw, v);
    }
    give(x, std::move(gx));
  });
}

Var avg_pool2(const Var& x) {
  const Tensor& xv = x.value();
  require_4d(xv, "avg_pool2");
  const int H = xv.h() / 2, W = xv.w() / 2;
  if (H < 1 || W < 1) throw ShapeError("avg_pool2: input too small " + shape_str(xv.shape()));
  const int P = xv.n() * xv.c(), ih = xv.h(), iw = xv.w();
  Tensor y({xv.n(), xv.c(), H, W});
#pragma omp parallel for schedule(static)
  for (int p = 0; p < P; ++p)
    for (int i = 0; i < H; ++i)
      for (int j = 0; j < W; ++j) {
        const float* s = xv.data() + (static_cast<std::size_t>(p) * ih + 2 * i) * iw + 2 * j;
        y[(static_cast<std::size_t>(p) * H + i) * W + j] = 0.25f * (s[0] + s[1] + s[iw] + s[iw + 1]);
      }
  return ag::make_result(std::move(y), {x}, [x, P, H, W, ih, iw](const Tensor& g) {
    Tensor gx(x.shape());
#pragma omp parallel for schedule(static)
    for (int p = 0; p < P; ++p)
      for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) {
          float v = 0.25f * g[(static_cast<std::size_t>(p) * H + i) * W + j];
          float* d = gx.data() + (static_cast<std::size_t>(p) * ih + 2 * i) * iw + 2 * j;
          d[0] += v;
          d[1] += v;
          d[iw] += v;
          d[iw + 1] += v;
        }
    give(x, std::move(gx));
  });
}

Var upsample_nearest(const Var& x, int factor) {
  const Tensor& xv = x.value();
  require_4d(xv, "upsample_nearest");
  if (factor < 1) throw ArgumentError("upsample_nearest: factor must be >= 1");
  const int P = xv.n() * xv.c(), ih = xv.h(), iw = xv.w(), oh = ih * factor, ow = iw * factor;
  Tensor y({xv.n(), xv.c(), oh, ow});
#pragma omp parallel for schedule(static)
  for (int p = 0; p < P; ++p)
    for (int i = 0; i < oh; ++i)
      for (int j = 0; j < ow; ++j)
        y[(static_cast<std::size_t>(p) * oh + i) * ow + j] = xv[(static_cast<std::size_t>(p) * ih + i / factor) * iw + j / factor];
  return ag::make_result(std::move(y), {x}, [x, P, ih, iw, oh, ow, factor](const Tensor& g) {
    Tensor gx(x.shape());
#pragma omp parallel for schedule(static)
    for (int p = 0; p < P; ++p)
      for (int i = 0; i < oh; ++i)
        for (int j = 0; j < ow; ++j)
          gx[(static_cast<std::size_t>(p) * ih + i / factor) * iw + j / factor] += g[(static_cast<std::size_t>(p) * oh + i) * ow + j];
    give(x, std::move(gx));
  });
}

Var reshape(const Var& x, Shape shape) {
  Tensor y = x.value().reshaped(std::move(shape));
  return ag::make_result(std::move(y), {x}, [x](const Tensor& g) { give(x, g.reshaped(x.shape())); });
}

Var crop(const Var& x, int y0, int x0, int h, int w) {
  const Tensor& xv = x.value();
  require_4d(xv, "crop");
  if (y0 < 0 || x0 < 0 || h < 1 || w < 1 || y0 + h > xv.h() || x0 + w > xv.w())
    throw ArgumentError("crop window out of bounds for " + shape_str(xv.shape()));
  const int P = xv.n() * xv.c(), ih = xv.h(), iw = xv.w();
  Tensor y({xv.n(), xv.c(), h, w});
  for (int p = 0; p < P; ++p)
    for (int i = 0; i < h; ++i)
      std::copy_n(xv.data() + (static_cast<std::size_t>(p) * ih + y0 + i) * iw + x0, w,
                  y.data() + (static_cast<std::size_t>(p) * h + i) * w);
  return ag::make_result(std::move(y), {x}, [x, P, ih, iw, y0, x0, h, w](const Tensor& g) {
    Tensor gx(x.shape());
    for (int p = 0; p < P; ++p)
      for (int i = 0; i < h; ++i)
        std::copy_n(g.data() + (static_cast<std::size_t>(p) * h + i) * w, w,
                    gx.data() + (static_cast<std::size_t>(p) * ih + y0 + i) * iw + x0);
    give(x, std::move(gx));
  });
}

Var add_noise(const Var& x, const Tensor& noise, const Var& strength) {
  const Tensor& xv = x.value();
  require_4d(xv, "add_noise");
  require_shape(noise, {xv.n(), 1, xv.h(), xv.w()}, "add_noise map");
  require_shape(strength.value(), {1}, "add_noise strength");
  const int N = xv.n(), C = xv.c();
  const std::size_t hw = static_cast<std::size_t>(xv.h()) * xv.w();
  const float sv = strength.value()[0];
  Tensor y(xv.shape());
#pragma omp parallel for schedule(static)
  for (int nc = 0; nc < N * C; ++nc) {
    const float* nz = noise.data() + (nc / C) * hw;
    for (std::size_t i = 0; i < hw; ++i) y[nc * hw + i] = xv[nc * hw + i] + sv * nz[i];
  }
  return ag::make_result(std::move(y), {x, strength}, [x, strength, noise, N, C, hw](const Tensor& g) {
    give(x, g);
    if (strength.requires_grad()) {
      double acc = 0.0;
      for (int nc = 0; nc < N * C; ++nc) {
        const float* nz = noise.data() + (nc / C) * hw;
        for (std::size_t i = 0; i < hw; ++i) acc += static_cast<double>(g[nc * hw + i]) * nz[i];
      }
      give(strength, Tensor({1}, static_cast<float>(acc)));
    }
  });
}

Var slice_rows(const Var& w, int begin, int count) {
  const Tensor& wv = w.value();
  if (wv.ndim() != 3) throw ShapeError("slice_rows expects (N,L,D), got " + shape_str(wv.shape()));
  const int N = wv.dim(0), L = wv.dim(1), D = wv.dim(2);
  if (begin < 0 || count < 0 || begin + count > L) throw ArgumentError("slice_rows: range out of bounds");
  Tensor y({N, count, D});
  for (int n = 0; n < N; ++n)
    std::copy_n(wv.data() + (static_cast<std::size_t>(n) * L + begin) * D, static_cast<std::size_t>(count) * D,
                y.data() + static_cast<std::size_t>(n) * count * D);
  return ag::make_result(std::move(y), {w}, [w, N, L, D, begin, count](const Tensor& g) {
    Tensor gw(w.shape());
    for (int n = 0; n < N; ++n)
      std::copy_n(g.data() + static_cast<std::size_t>(n) * count * D, static_cast<std::size_t>(count) * D,
                  gw.data() + (static_cast<std::size_t>(n) * L + begin) * D);
    give(w, std::move(gw));
  });
}

Var select_row(const Var& w, int l) {
  const Tensor& wv = w.value();
  if (wv.ndim() != 3) throw ShapeError("select_row expects (N,L,D), got " + shape_str(wv.shape()));
  return reshape(slice_rows(w, l, 1), {wv.dim(0), wv.dim(2)});
}

Var concat_rows(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.ndim() != 3 || bv.ndim() != 3 || av.dim(0) != bv.dim(0) || av.dim(2) != bv.dim(2))
    throw ShapeError("concat_rows: " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
  const int N = av.dim(0), La = av.dim(1), Lb = bv.dim(1), D = av.dim(2);
  Tensor y({N, La + Lb, D});
  for (int n = 0; n < N; ++n) {
    std::copy_n(av.data() + static_cast<std::size_t>(n) * La * D, static_cast<std::size_t>(La) * D,
                y.data() + static_cast<std::size_t>(n) * (La + Lb) * D);
    std::copy_n(bv.data() + static_cast<std::size_t>(n) * Lb * D, static_cast<std::size_t>(Lb) * D,
                y.data() + (static_cast<std::size_t>(n) * (La + Lb) + La) * D);
  }
  return ag::make_result(std::move(y), {a, b}, [a, b, N, La, Lb, D](const Tensor& g) {
    if (a.requires_grad()) {
      Tensor ga(a.shape());
      for (int n = 0; n < N; ++n)
        std::copy_n(g.data() + static_cast<std::size_t>(n) * (La + Lb) * D, static_cast<std::size_t>(La) * D,
                    ga.data() + static_cast<std::size_t>(n) * La * D);
      give(a, std::move(ga));
    }
    if (b.requires_grad()) {
      Tensor gb(b.shape());
      for (int n = 0; n < N; ++n)
        std::copy_n(g.data() + (static_cast<std::size_t>(n) * (La + Lb) + La) * D, static_cast<std::size_t>(Lb) * D,
                    gb.data() + static_cast<std::size_t>(n) * Lb * D);
      give(b, std::move(gb));
    }
  });
}

Var stack_rows(const std::vector<Var>& rows) {
  if (rows.empty()) throw ShapeError("stack_rows of nothing");
  const int N = rows[0].dim(0), D = rows[0].dim(1), L = static_cast<int>(rows.size());
  Tensor y({N, L, D});
  for (int l = 0; l < L; ++l) {
    require_shape(rows[l].value(), {N, D}, "stack_rows");
    for (int n = 0; n < N; ++n)
      std::copy_n(rows[l].value().data() + static_cast<std::size_t>(n) * D, D,
                  y.data() + (static_cast<std::size_t>(n) * L + l) * D);
  }
  return ag::make_result(std::move(y), rows, [rows, N, L, D](const Tensor& g) {
    for (int l = 0; l < L; ++l) {
      if (!rows[l].requires_grad()) continue;
      Tensor gr({N, D});
      for (int n = 0; n < N; ++n)
        std::copy_n(g.data() + (static_cast<std::size_t>(n) * L + l) * D, D, gr.data() + static_cast<std::size_t>(n) * D);
      give(rows[l], std::move(gr));
    }
  });
}

Var sum_all(const Var& x) {
  double s = sgx::sum(x.value());
  return ag::make_result(Tensor({1}, static_cast<float>(s)), {x},
                         [x](const Tensor& g) { give(x, Tensor(x.shape(), g[0])); });
}

Var mean_all(const Var& x) {
  const double n = static_cast<double>(x.value().numel());
  double s = sgx::sum(x.value()) / n;
  return ag::make_result(Tensor({1}, static_cast<float>(s)), {x},
                         [x, n](const Tensor& g) { give(x, Tensor(x.shape(), static_cast<float>(g[0] / n))); });
}

Var mse(const Var& a, const Var& b) {
  require_same(a, b, "mse");
  const std::size_t n = a.value().numel();
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double d = static_cast<double>(a.value()[i]) - b.value()[i];
    s += d * d;
  }
  return ag::make_result(Tensor({1}, static_cast<float>(s / n)), {a, b}, [a, b, n](const Tensor& g) {
    const float c = static_cast<float>(2.0 * g[0] / n);
    Tensor ga = map_binary(a.value(), b.value(), [c](float x, float y) { return c * (x - y); });
    if (b.requires_grad()) give(b, map_unary(ga, [](float v) { return -v; }));
    if (a.requires_grad()) give(a, std::move(ga));
  });
}

Var mean_abs_diff(const Var& a, const Var& b) {
  require_same(a, b, "mean_abs_diff");
  const std::size_t n = a.value().numel();
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += std::fabs(static_cast<double>(a.value()[i]) - b.value()[i]);
  return ag::make_result(Tensor({1}, static_cast<float>(s / n)), {a, b}, [a, b, n](const Tensor& g) {
    const float c = static_cast<float>(g[0] / n);
    Tensor ga = map_binary(a.value(), b.value(), [c](float x, float y) { return x > y ? c : (x < y ? -c : 0.0f); });
    if (b.requires_grad()) give(b, map_unary(ga, [](float v) { return -v; }));
    if (a.requires_grad()) give(a, std::move(ga));
  });
}

Var cosine_rows(const Var& a, const Var& b, float eps) {
  require_same(a, b, "cosine_rows");
  if (a.value().ndim() != 2) throw ShapeError("cosine_rows expects (N,D)");
  const int N = a.dim(0), D = a.dim(1);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  std::vector<double> na(N), nb(N), dot(N);
  Tensor y({N});
  for (int n = 0; n < N; ++n) {
    double aa = 0, bb = 0, ab = 0;
    for (int d = 0; d < D; ++d) {
      double x = av[n * D + d], z = bv[n * D + d];
      aa += x * x;
      bb += z * z;
      ab += x * z;
    }
    na[n] = std::sqrt(aa + eps);
    nb[n] = std::sqrt(bb + eps);
    dot[n] = ab;
    y[n] = static_cast<float>(ab / (na[n] * nb[n]));
  }
  return ag::make_result(std::move(y), {a, b}, [a, b, na, nb, dot, N, D](const Tensor& g) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    Tensor ga({N, D}), gb({N, D});
    for (int n = 0; n < N; ++n) {
      const double c = dot[n] / (na[n] * nb[n]);
      for (int d = 0; d < D; ++d) {
        ga[n * D + d] = static_cast<float>(g[n] * (bv[n * D + d] / (na[n] * nb[n]) - c * av[n * D + d] / (na[n] * na[n])));
        gb[n * D + d] = static_cast<float>(g[n] * (av[n * D + d] / (na[n] * nb[n]) - c * bv[n * D + d] / (nb[n] * nb[n])));
      }
    }
    give(a, std::move(ga));
    give(b, std::move(gb));
  });
}

Var minibatch_stddev(const Var& x, int group) {
  const Tensor& xv = x.value();
  require_4d(xv, "minibatch_stddev");
  const int N = xv.n(), C = xv.c(), H = xv.h(), W = xv.w();
  int G = std::max(1, std::min(group, N));
  while (N % G) --G;
  const int M = N / G;
  const std::size_t chw = static_cast<std::size_t>(C) * H * W;
  // Sample n = g*M + m belongs to subgroup m.
  Tensor mean({M, static_cast<int>(chw)}), sd({M, static_cast<int>(chw)});
  std::vector<float> stat(M);
  for (int m = 0; m < M; ++m) {
    double tot = 0.0;
    for (std::size_t j = 0; j < chw; ++j) {
      double mu = 0.0;
      for (int g = 0; g < G; ++g) mu += xv[(g * M + m) * chw + j];
      mu /= G;
      double var = 0.0;
      for (int g = 0; g < G; ++g) {
        double d = xv[(g * M + m) * chw + j] - mu;
        var += d * d;
      }
      var /= G;
      double s = std::sqrt(var + 1e-8);
      mean[m * chw + j] = static_cast<float>(mu);
      sd[m * chw + j] = static_cast<float>(s);
      tot += s;
    }
    stat[m] = static_cast<float>(tot / chw);
  }
  Tensor extra({N, 1, H, W});
  for (int n = 0; n < N; ++n) std::fill_n(extra.data() + static_cast<std::size_t>(n) * H * W, H * W, stat[n % M]);
  Var stat_map = ag::make_result(std::move(extra), {x}, [x, mean, sd, N, G, M, chw, H, W](const Tensor& g) {
    const Tensor& xv = x.value();
    Tensor gx(x.shape());
    std::vector<double> gs(M, 0.0);
    for (int n = 0; n < N; ++n)
      for (int i = 0; i < H * W; ++i) gs[n % M] += g[static_cast<std::size_t>(n) * H * W + i];
    for (int n = 0; n < N; ++n) {
      const int m = n % M;
      for (std::size_t j = 0; j < chw; ++j)
        gx[n * chw + j] = static_cast<float>(gs[m] / chw * (xv[n * chw + j] - mean[m * chw + j]) / (G * sd[m * chw + j]));
    }
    give(x, std::move(gx));
  });
  return concat_channels(x, stat_map);
}

}  // namespace sgx::op
