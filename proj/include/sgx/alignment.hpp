#pragma once

#include <array>
#include <vector>

#include "sgx/imaging.hpp"

namespace sgx {

/// Eyes, nose tip, mouth corners as (x, y) pixel coordinates.
using Landmarks = std::array<std::array<double, 2>, 5>;

/// Five-point face template for a size x size crop.
Landmarks canonical_landmarks(int size);

class LandmarkDetector {
 public:
  virtual ~LandmarkDetector() = default;
  /// All faces found in a single image (1, C, H, W).
  virtual std::vector<Landmarks> detect(const Tensor& image) const = 0;
};

/// Returns preset landmarks for any image with content, nothing for a flat one.
class StubLandmarkDetector : public LandmarkDetector {
 public:
  explicit StubLandmarkDetector(std::vector<Landmarks> faces) : faces_(std::move(faces)) {}
  std::vector<Landmarks> detect(const Tensor& image) const override;

 private:
  std::vector<Landmarks> faces_;
};

/// Least-squares similarity (rotation, uniform scale, translation) mapping src to dst.
img::Affine fit_similarity(const Landmarks& src, const Landmarks& dst);
/// Rotation in degrees and scale of a similarity map.
double similarity_rotation_deg(const img::Affine& a);
double similarity_scale(const img::Affine& a);

struct AlignResult {
  Tensor crop;
  img::Affine transform;  // image -> crop coordinates
  Landmarks landmarks;    // detected landmarks in the image
};

/// Aligned crop of the first detected face. Throws DetectionError when none is found.
AlignResult align_crop(const Tensor& x, const LandmarkDetector& detector, int size = 256);

}  // namespace sgx
