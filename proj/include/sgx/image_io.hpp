#pragma once

#include <string>
#include <vector>

#include "sgx/tensor.hpp"

namespace sgx {

/// 8-bit PNG -> (1, C, H, W) in [-1, 1]. `channels` 1 or 3 converts; 0 keeps
/// the file's colour channels (alpha is dropped).
Tensor read_png(const std::string& path, int channels = 3);
/// Writes image 0 of an (N, 1|3, H, W) tensor, clamping to [-1, 1].
void write_png(const std::string& path, const Tensor& img);

float to_unit(std::uint8_t v);
std::uint8_t from_unit(float v);

struct VideoClip {
  std::vector<Tensor> frames;  // each (1, C, H, W)
  double fps = 25.0;
  void validate() const;
};

/// Frames are the directory's *.png files in name order; fps from "fps.txt" when present.
VideoClip read_frame_dir(const std::string& dir, int channels = 3);
void write_frame_dir(const std::string& dir, const VideoClip& clip);

}  // namespace sgx
