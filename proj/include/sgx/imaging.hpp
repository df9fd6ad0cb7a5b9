#pragma once

#include <array>

#include "sgx/tensor.hpp"

// Non-differentiable raster utilities on NCHW tensors.
namespace sgx::img {

/// Row-major 2x3 affine map from output pixel centres to input coordinates.
using Affine = std::array<double, 6>;

Affine affine_identity();
Affine affine_invert(const Affine& a);
Affine affine_compose(const Affine& outer, const Affine& inner);
std::array<double, 2> affine_apply(const Affine& a, double x, double y);

/// Samples x at coordinates produced by `out_to_in` for every output pixel;
/// outside samples read zero (or `fill`).
Tensor warp_affine(const Tensor& x, const Affine& out_to_in, int out_h, int out_w, float fill = 0.0f);

/// Half-pixel-centred bilinear resize with edge clamping.
Tensor resize_bilinear(const Tensor& x, int out_h, int out_w);
/// Mean over non-overlapping factor x factor blocks.
Tensor downsample_area(const Tensor& x, int factor);

/// Shifts by (dy, dx) pixels, zero fill. Integer shifts are exact.
Tensor shift(const Tensor& x, double dy, double dx);
/// Rotation about the centre by `degrees` (counter-clockwise), bilinear, zero fill.
Tensor rotate(const Tensor& x, double degrees);

/// Sobel edge sketch in [-1, 1]: dark strokes on white, one channel.
Tensor sketch_from_image(const Tensor& rgb);
/// Luminance quantised into `classes` one-hot channels in {0, 1}.
Tensor mask_from_image(const Tensor& rgb, int classes);

struct PadInfo {
  int top = 0, bottom = 0, left = 0, right = 0;
  int orig_h = 0, orig_w = 0;
};
/// Reflect-pads so both sides are multiples of `grid`.
Tensor pad_to_grid(const Tensor& x, int grid, PadInfo* info);
Tensor unpad(const Tensor& x, const PadInfo& info, int scale = 1);

/// Copies a crop (y0, x0, h, w) out of every image in the batch.
Tensor crop(const Tensor& x, int y0, int x0, int h, int w);

}  // namespace sgx::img
