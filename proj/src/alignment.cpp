#include "sgx/alignment.hpp"

#include <cmath>
#include <numbers>

namespace sgx {

Landmarks canonical_landmarks(int size) {
  // Widely used 112 px five-point template.
  static constexpr Landmarks k112{{{38.2946, 51.6963}, {73.5318, 51.5014}, {56.0252, 71.7366},
                                   {41.5493, 92.3655}, {70.7299, 92.2041}}};
  const double s = size / 112.0;
  Landmarks out;
  for (int i = 0; i < 5; ++i) out[i] = {(k112[i][0] + 0.5) * s - 0.5, (k112[i][1] + 0.5) * s - 0.5};
  return out;
}

std::vector<Landmarks> StubLandmarkDetector::detect(const Tensor& image) const {
  require_4d(image, "detect");
  double lo = INFINITY, hi = -INFINITY;
  for (float v : image.values()) {
    lo = std::min<double>(lo, v);
    hi = std::max<double>(hi, v);
  }
  if (image.empty() || hi - lo < 1e-6) return {};
  return faces_;
}

img::Affine fit_similarity(const Landmarks& src, const Landmarks& dst) {
  // Closed-form 2-D Umeyama: dst ≈ [a -b; b a] src + t.
  double msx = 0, msy = 0, mdx = 0, mdy = 0;
  for (int i = 0; i < 5; ++i) {
    msx += src[i][0];
    msy += src[i][1];
    mdx += dst[i][0];
    mdy += dst[i][1];
  }
  msx /= 5, msy /= 5, mdx /= 5, mdy /= 5;
  double sxx = 0, sxy = 0, var = 0;
  for (int i = 0; i < 5; ++i) {
    const double ax = src[i][0] - msx, ay = src[i][1] - msy;
    const double bx = dst[i][0] - mdx, by = dst[i][1] - mdy;
    sxx += ax * bx + ay * by;
    sxy += ax * by - ay * bx;
    var += ax * ax + ay * ay;
  }
  if (var < 1e-12) throw DetectionError("degenerate landmarks");
  const double a = sxx / var, b = sxy / var;
  return {a, -b, mdx - a * msx + b * msy, b, a, mdy - b * msx - a * msy};
}

double similarity_rotation_deg(const img::Affine& a) { return std::atan2(a[3], a[0]) * 180.0 / std::numbers::pi; }

double similarity_scale(const img::Affine& a) { return std::hypot(a[0], a[3]); }

AlignResult align_crop(const Tensor& x, const LandmarkDetector& detector, int size) {
  require_4d(x, "align_crop");
  if (x.n() != 1) throw ArgumentError("align_crop takes a single image");
  const auto faces = detector.detect(x);
  if (faces.empty()) throw DetectionError("no face detected");
  AlignResult r;
  r.landmarks = faces.front();
  r.transform = fit_similarity(r.landmarks, canonical_landmarks(size));
  r.crop = img::warp_affine(x, img::affine_invert(r.transform), size, size);
  return r;
}

}  // namespace sgx
