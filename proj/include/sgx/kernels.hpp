#pragma once

// Compute kernels behind the autograd ops. Every kernel has a serial reference
// implementation (sgx::kernels::serial) written as direct loops and a parallel
// implementation (sgx::kernels::parallel) using OpenMP and blocked GEMM. The
// dispatching free functions route to the active backend.

namespace sgx::kernels {

enum class Backend { Serial, Parallel };

void set_backend(Backend b);
Backend backend();

/// Scoped backend switch, used by tests that cross-check whole networks.
class BackendGuard {
 public:
  explicit BackendGuard(Backend b) : prev_(backend()) { set_backend(b); }
  ~BackendGuard() { set_backend(prev_); }
  BackendGuard(const BackendGuard&) = delete;
  BackendGuard& operator=(const BackendGuard&) = delete;

 private:
  Backend prev_;
};

/// Cross-correlation geometry: x (n,cin,h,w), weight (cout,cin,k,k), y (n,cout,oh,ow).
struct ConvGeom {
  int n = 1, cin = 1, h = 1, w = 1, cout = 1, k = 1;
  int stride = 1, pad = 0, dilation = 1;
  int out_h() const { return (h + 2 * pad - dilation * (k - 1) - 1) / stride + 1; }
  int out_w() const { return (w + 2 * pad - dilation * (k - 1) - 1) / stride + 1; }
};

/// Depthwise FIR geometry: each of `planes` h×w maps is zero-insert upsampled by
/// `up`, padded, then correlated with a kh×kw filter at `dilation` and stride `down`.
struct FirGeom {
  int planes = 1, h = 1, w = 1;
  int kh = 1, kw = 1;
  int up = 1, down = 1, dilation = 1;
  int pad_y0 = 0, pad_y1 = 0, pad_x0 = 0, pad_x1 = 0;
  int out_h() const { return (h * up + pad_y0 + pad_y1 - dilation * (kh - 1) - 1) / down + 1; }
  int out_w() const { return (w * up + pad_x0 + pad_x1 - dilation * (kw - 1) - 1) / down + 1; }
};

#define SGX_KERNEL_DECLS                                                                     \
  void conv2d_forward(const ConvGeom& g, const float* x, const float* wt, float* y);         \
  void conv2d_backward_input(const ConvGeom& g, const float* gy, const float* wt, float* gx); \
  void conv2d_backward_weight(const ConvGeom& g, const float* x, const float* gy, float* gw); \
  void fir2d_forward(const FirGeom& g, const float* x, const float* f, float* y);            \
  void fir2d_adjoint(const FirGeom& g, const float* gy, const float* f, float* gx);          \
  void gemm(int m, int n, int k, const float* a, bool trans_a, const float* b, bool trans_b,  \
            float* c, float beta);

// Semantics shared by both backends:
//   conv2d_forward          overwrites y
//   conv2d_backward_input   overwrites gx
//   conv2d_backward_weight  accumulates into gw
//   fir2d_forward           overwrites y
//   fir2d_adjoint           overwrites gx
//   gemm                    c = op(a) * op(b) + beta * c, row-major, op(a) is m×k

namespace serial {
SGX_KERNEL_DECLS
}
namespace parallel {
SGX_KERNEL_DECLS
}

SGX_KERNEL_DECLS

#undef SGX_KERNEL_DECLS

}  // namespace sgx::kernels
