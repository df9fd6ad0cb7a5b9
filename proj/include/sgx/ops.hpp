#pragma once

#include <vector>

#include "sgx/autograd.hpp"
#include "sgx/kernels.hpp"

// Differentiable operations on ag::Var. Feature maps are NCHW; style and latent
// batches are (N, D); per-layer style codes are (N, L, D).
namespace sgx::op {

using ag::Var;

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, float c);
Var add_scalar(const Var& a, float c);

/// x (N,C,H,W) * s (N,C) broadcast over space.
Var mul_channel(const Var& x, const Var& s);
/// x (N,C,H,W) + b (C).
Var add_channel_bias(const Var& x, const Var& b);
/// Repeats a (1,...) tensor n times along the leading dimension.
Var expand0(const Var& x, int n);

struct ConvOpts {
  int stride = 1;
  int pad = 0;
  int dilation = 1;
};
/// Cross-correlation, weight (Cout,Cin,k,k) shared across the batch.
Var conv2d(const Var& x, const Var& w, ConvOpts o = {});
/// Transposed convolution with stride 2 and no padding: (h-1)*2 + k outputs.
Var conv_transpose2d_s2(const Var& x, const Var& w);

/// Fixed depthwise filter (kh,kw) applied to every channel plane.
struct FirOpts {
  int up = 1, down = 1, dilation = 1;
  int pad_y0 = 0, pad_y1 = 0, pad_x0 = 0, pad_x1 = 0;
};
Var fir2d(const Var& x, const Tensor& filter, FirOpts o);

Var leaky_relu(const Var& x, float slope = 0.2f, float gain = 1.0f);
Var sigmoid(const Var& x);
Var softplus(const Var& x);
Var abs(const Var& x);

/// y = x (w*wscale)^T + b*bscale for x (N,in), w (out,in), b (out) or undefined.
Var linear(const Var& x, const Var& w, const Var& b, float wscale = 1.0f, float bscale = 1.0f);
/// x / sqrt(mean(x^2 over dim 1) + eps) for x (N,D).
Var pixel_norm(const Var& x, float eps = 1e-8f);
/// Demodulation coefficients rsqrt(sum_i s_i^2 * wscale^2 * sum_k w_oik^2 + eps): (N,Cout).
Var demod_coeff(const Var& s, const Var& w, float wscale, float eps = 1e-8f);
/// x / sqrt(sum_c x^2 + eps) at every spatial position.
Var channel_normalize(const Var& x, float eps = 1e-10f);

Var concat_channels(const Var& a, const Var& b);
Var global_avg_pool(const Var& x);  // (N,C,H,W) -> (N,C)
Var avg_pool2(const Var& x);
Var upsample_nearest(const Var& x, int factor);
Var reshape(const Var& x, Shape shape);
Var crop(const Var& x, int y0, int x0, int h, int w);

/// Adds strength * noise where noise is (N,1,H,W) and strength a (1) parameter.
Var add_noise(const Var& x, const Tensor& noise, const Var& strength);

/// Row l of (N,L,D) as (N,D).
Var select_row(const Var& w, int l);
/// Rows [begin, begin+count) of (N,L,D).
Var slice_rows(const Var& w, int begin, int count);
/// Concatenates (N,La,D) and (N,Lb,D) along the row axis.
Var concat_rows(const Var& a, const Var& b);
/// Stacks L tensors (N,D) into (N,L,D).
Var stack_rows(const std::vector<Var>& rows);

Var sum_all(const Var& x);
Var mean_all(const Var& x);
Var mse(const Var& a, const Var& b);
Var mean_abs_diff(const Var& a, const Var& b);
/// Row-wise cosine similarity of (N,D) pairs: (N).
Var cosine_rows(const Var& a, const Var& b, float eps = 1e-8f);
/// Appends the group standard deviation channel (StyleGAN2 minibatch stddev).
Var minibatch_stddev(const Var& x, int group);

}  // namespace sgx::op
