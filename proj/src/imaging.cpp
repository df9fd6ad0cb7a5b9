#include "sgx/imaging.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace sgx::img {

Affine affine_identity() { return {1, 0, 0, 0, 1, 0}; }

Affine affine_invert(const Affine& a) {
  const double det = a[0] * a[4] - a[1] * a[3];
  if (std::fabs(det) < 1e-15) throw ArgumentError("affine transform is singular");
  const double i0 = a[4] / det, i1 = -a[1] / det, i3 = -a[3] / det, i4 = a[0] / det;
  return {i0, i1, -(i0 * a[2] + i1 * a[5]), i3, i4, -(i3 * a[2] + i4 * a[5])};
}

Affine affine_compose(const Affine& o, const Affine& i) {
  return {o[0] * i[0] + o[1] * i[3], o[0] * i[1] + o[1] * i[4], o[0] * i[2] + o[1] * i[5] + o[2],
          o[3] * i[0] + o[4] * i[3], o[3] * i[1] + o[4] * i[4], o[3] * i[2] + o[4] * i[5] + o[5]};
}

std::array<double, 2> affine_apply(const Affine& a, double x, double y) {
  return {a[0] * x + a[1] * y + a[2], a[3] * x + a[4] * y + a[5]};
}

Tensor warp_affine(const Tensor& x, const Affine& m, int out_h, int out_w, float fill) {
  require_4d(x, "warp_affine");
  const int P = x.n() * x.c(), H = x.h(), W = x.w();
  Tensor y({x.n(), x.c(), out_h, out_w});
#pragma omp parallel for schedule(static)
  for (int oy = 0; oy < out_h; ++oy)
    for (int ox = 0; ox < out_w; ++ox) {
      auto [sx, sy] = affine_apply(m, ox, oy);
      const int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
      const double fx = sx - x0, fy = sy - y0;
      const int xs[2] = {x0, x0 + 1}, ys[2] = {y0, y0 + 1};
      const double wx[2] = {1 - fx, fx}, wy[2] = {1 - fy, fy};
      for (int p = 0; p < P; ++p) {
        const float* plane = x.data() + static_cast<std::size_t>(p) * H * W;
        double acc = 0.0;
        for (int a = 0; a < 2; ++a)
          for (int b = 0; b < 2; ++b) {
            const double wt = wy[a] * wx[b];
            if (wt == 0.0) continue;
            const bool in = ys[a] >= 0 && ys[a] < H && xs[b] >= 0 && xs[b] < W;
            acc += wt * (in ? plane[static_cast<std::size_t>(ys[a]) * W + xs[b]] : fill);
          }
        y[(static_cast<std::size_t>(p) * out_h + oy) * out_w + ox] = static_cast<float>(acc);
      }
    }
  return y;
}

Tensor resize_bilinear(const Tensor& x, int out_h, int out_w) {
  require_4d(x, "resize_bilinear");
  if (out_h < 1 || out_w < 1) throw ArgumentError("resize target must be positive");
  const int P = x.n() * x.c(), H = x.h(), W = x.w();
  const double sy = static_cast<double>(H) / out_h, sx = static_cast<double>(W) / out_w;
  Tensor y({x.n(), x.c(), out_h, out_w});
#pragma omp parallel for schedule(static)
  for (int oy = 0; oy < out_h; ++oy) {
    const double fy = std::clamp((oy + 0.5) * sy - 0.5, 0.0, static_cast<double>(H - 1));
    const int y0 = static_cast<int>(std::floor(fy)), y1 = std::min(y0 + 1, H - 1);
    const double ty = fy - y0;
    for (int ox = 0; ox < out_w; ++ox) {
      const double fx = std::clamp((ox + 0.5) * sx - 0.5, 0.0, static_cast<double>(W - 1));
      const int x0 = static_cast<int>(std::floor(fx)), x1 = std::min(x0 + 1, W - 1);
      const double tx = fx - x0;
      for (int p = 0; p < P; ++p) {
        const float* s = x.data() + static_cast<std::size_t>(p) * H * W;
        const double v = (1 - ty) * ((1 - tx) * s[y0 * W + x0] + tx * s[y0 * W + x1]) +
                         ty * ((1 - tx) * s[y1 * W + x0] + tx * s[y1 * W + x1]);
        y[(static_cast<std::size_t>(p) * out_h + oy) * out_w + ox] = static_cast<float>(v);
      }
    }
  }
  return y;
}

Tensor downsample_area(const Tensor& x, int factor) {
  require_4d(x, "downsample_area");
  if (factor < 1 || x.h() % factor || x.w() % factor)
    throw ArgumentError("downsample factor must divide the image sides");
  const int P = x.n() * x.c(), H = x.h(), W = x.w(), oh = H / factor, ow = W / factor;
  Tensor y({x.n(), x.c(), oh, ow});
  const double inv = 1.0 / (static_cast<double>(factor) * factor);
  for (int p = 0; p < P; ++p)
    for (int i = 0; i < oh; ++i)
      for (int j = 0; j < ow; ++j) {
        double acc = 0.0;
        for (int a = 0; a < factor; ++a)
          for (int b = 0; b < factor; ++b)
            acc += x[(static_cast<std::size_t>(p) * H + i * factor + a) * W + j * factor + b];
        y[(static_cast<std::size_t>(p) * oh + i) * ow + j] = static_cast<float>(acc * inv);
      }
  return y;
}

Tensor shift(const Tensor& x, double dy, double dx) {
  require_4d(x, "shift");
  if (dy == std::round(dy) && dx == std::round(dx)) {
    const int iy = static_cast<int>(dy), ix = static_cast<int>(dx);
    const int P = x.n() * x.c(), H = x.h(), W = x.w();
    Tensor y(x.shape());
    for (int p = 0; p < P; ++p)
      for (int r = 0; r < H; ++r) {
        const int sr = r - iy;
        if (sr < 0 || sr >= H) continue;
        for (int c = 0; c < W; ++c) {
          const int sc = c - ix;
          if (sc >= 0 && sc < W)
            y[(static_cast<std::size_t>(p) * H + r) * W + c] = x[(static_cast<std::size_t>(p) * H + sr) * W + sc];
        }
      }
    return y;
  }
  return warp_affine(x, {1, 0, -dx, 0, 1, -dy}, x.h(), x.w());
}

Tensor rotate(const Tensor& x, double degrees) {
  require_4d(x, "rotate");
  const double turns = degrees / 360.0;
  if (turns == std::round(turns)) return x;
  const double t = degrees * std::numbers::pi / 180.0;
  const double cx = (x.w() - 1) / 2.0, cy = (x.h() - 1) / 2.0;
  // Output -> input is the inverse rotation. Image y points down, so a
  // counter-clockwise turn on screen uses -t in these coordinates.
  const double c = std::cos(t), s = std::sin(-t);
  const Affine fwd{c, -s, cx - c * cx + s * cy, s, c, cy - s * cx - c * cy};
  return warp_affine(x, affine_invert(fwd), x.h(), x.w());
}

Tensor sketch_from_image(const Tensor& rgb) {
  require_4d(rgb, "sketch_from_image");
  const int N = rgb.n(), H = rgb.h(), W = rgb.w();
  Tensor out({N, 1, H, W});
  for (int n = 0; n < N; ++n) {
    std::vector<float> lum(static_cast<std::size_t>(H) * W);
    for (int i = 0; i < H * W; ++i) {
      double acc = 0.0;
      for (int c = 0; c < rgb.c(); ++c) acc += rgb[(static_cast<std::size_t>(n) * rgb.c() + c) * H * W + i];
      lum[i] = static_cast<float>(acc / rgb.c());
    }
    auto at = [&](int r, int c) { return lum[std::clamp(r, 0, H - 1) * W + std::clamp(c, 0, W - 1)]; };
    for (int r = 0; r < H; ++r)
      for (int c = 0; c < W; ++c) {
        const double gx = at(r - 1, c + 1) + 2 * at(r, c + 1) + at(r + 1, c + 1) - at(r - 1, c - 1) -
                          2 * at(r, c - 1) - at(r + 1, c - 1);
        const double gy = at(r + 1, c - 1) + 2 * at(r + 1, c) + at(r + 1, c + 1) - at(r - 1, c - 1) -
                          2 * at(r - 1, c) - at(r - 1, c + 1);
        const double mag = std::min(1.0, std::sqrt(gx * gx + gy * gy) / 2.0);
        out[(static_cast<std::size_t>(n) * H + r) * W + c] = static_cast<float>(1.0 - 2.0 * mag);
      }
  }
  return out;
}

Tensor mask_from_image(const Tensor& rgb, int classes) {
  require_4d(rgb, "mask_from_image");
  if (classes < 2) throw ArgumentError("mask needs at least two classes");
  const int N = rgb.n(), H = rgb.h(), W = rgb.w();
  Tensor out({N, classes, H, W});
  for (int n = 0; n < N; ++n)
    for (int i = 0; i < H * W; ++i) {
      double acc = 0.0;
      for (int c = 0; c < rgb.c(); ++c) acc += rgb[(static_cast<std::size_t>(n) * rgb.c() + c) * H * W + i];
      const double l = std::clamp((acc / rgb.c() + 1.0) / 2.0, 0.0, 1.0 - 1e-9);
      const int k = static_cast<int>(l * classes);
      out[(static_cast<std::size_t>(n) * classes + k) * H * W + i] = 1.0f;
    }
  return out;
}

Tensor pad_to_grid(const Tensor& x, int grid, PadInfo* info) {
  require_4d(x, "pad_to_grid");
  const int H = x.h(), W = x.w();
  const int ph = (grid - H % grid) % grid, pw = (grid - W % grid) % grid;
  PadInfo pi{ph / 2, ph - ph / 2, pw / 2, pw - pw / 2, H, W};
  if (pi.top >= H || pi.bottom >= H || pi.left >= W || pi.right >= W)
    throw InputContractError("image too small to reflect-pad to a multiple of " + std::to_string(grid));
  if (info) *info = pi;
  const int oh = H + ph, ow = W + pw, P = x.n() * x.c();
  auto reflect = [](int i, int n) {
    if (i < 0) return -i;
    if (i >= n) return 2 * n - 2 - i;
    return i;
  };
  Tensor y({x.n(), x.c(), oh, ow});
  for (int p = 0; p < P; ++p)
    for (int r = 0; r < oh; ++r)
      for (int c = 0; c < ow; ++c)
        y[(static_cast<std::size_t>(p) * oh + r) * ow + c] =
            x[(static_cast<std::size_t>(p) * H + reflect(r - pi.top, H)) * W + reflect(c - pi.left, W)];
  return y;
}

Tensor unpad(const Tensor& x, const PadInfo& info, int scale) {
  return crop(x, info.top * scale, info.left * scale, info.orig_h * scale, info.orig_w * scale);
}

Tensor crop(const Tensor& x, int y0, int x0, int h, int w) {
  require_4d(x, "crop");
  if (y0 < 0 || x0 < 0 || h < 1 || w < 1 || y0 + h > x.h() || x0 + w > x.w())
    throw ArgumentError("crop window out of bounds");
  const int P = x.n() * x.c(), H = x.h(), W = x.w();
  Tensor y({x.n(), x.c(), h, w});
  for (int p = 0; p < P; ++p)
    for (int r = 0; r < h; ++r)
      std::copy_n(x.data() + (static_cast<std::size_t>(p) * H + y0 + r) * W + x0, w,
                  y.data() + (static_cast<std::size_t>(p) * h + r) * w);
  return y;
}

}  // namespace sgx::img
