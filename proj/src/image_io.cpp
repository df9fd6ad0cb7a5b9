#include "sgx/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>

namespace sgx {

namespace fs = std::filesystem;

float to_unit(std::uint8_t v) { return v / 127.5f - 1.0f; }

std::uint8_t from_unit(float v) {
  const float c = std::clamp(v, -1.0f, 1.0f);
  return static_cast<std::uint8_t>(std::lround((c + 1.0f) * 127.5f));
}

Tensor read_png(const std::string& path, int channels) {
  if (channels != 0 && channels != 1 && channels != 3) throw ArgumentError("channels must be 0, 1 or 3");
  png_image im{};
  im.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&im, path.c_str()))
    throw ImportError("cannot read PNG " + path + ": " + im.message);
  const bool file_gray = !(im.format & PNG_FORMAT_FLAG_COLOR);
  const int c = channels == 0 ? (file_gray ? 1 : 3) : channels;
  im.format = c == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  const int H = static_cast<int>(im.height), W = static_cast<int>(im.width);
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(im));
  if (!png_image_finish_read(&im, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&im);
    throw ImportError("cannot decode PNG " + path + ": " + im.message);
  }
  Tensor t({1, c, H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int k = 0; k < c; ++k) t.at(0, k, y, x) = to_unit(buf[(static_cast<std::size_t>(y) * W + x) * c + k]);
  return t;
}

void write_png(const std::string& path, const Tensor& img) {
  require_4d(img, "write_png");
  const int c = img.c(), H = img.h(), W = img.w();
  if (c != 1 && c != 3) throw ShapeError("PNG output needs 1 or 3 channels, got " + std::to_string(c));
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(H) * W * c);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int k = 0; k < c; ++k) buf[(static_cast<std::size_t>(y) * W + x) * c + k] = from_unit(img.at(0, k, y, x));
  png_image im{};
  im.version = PNG_IMAGE_VERSION;
  im.width = static_cast<png_uint_32>(W);
  im.height = static_cast<png_uint_32>(H);
  im.format = c == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&im, path.c_str(), 0, buf.data(), 0, nullptr))
    throw ArgumentError("cannot write PNG " + path + ": " + im.message);
}

void VideoClip::validate() const {
  if (frames.empty()) throw ArgumentError("video clip has no frames");
  for (const auto& f : frames)
    if (f.shape() != frames.front().shape())
      throw ShapeError("frame shapes differ: " + shape_str(f.shape()) + " vs " + shape_str(frames.front().shape()));
  if (!(fps > 0)) throw ArgumentError("frame rate must be positive");
}

VideoClip read_frame_dir(const std::string& dir, int channels) {
  if (!fs::is_directory(dir)) throw ImportError("not a frame directory: " + dir);
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  VideoClip clip;
  for (const auto& p : files) clip.frames.push_back(read_png(p.string(), channels));
  std::ifstream fps(fs::path(dir) / "fps.txt");
  if (fps) fps >> clip.fps;
  clip.validate();
  return clip;
}

void write_frame_dir(const std::string& dir, const VideoClip& clip) {
  clip.validate();
  fs::create_directories(dir);
  for (std::size_t i = 0; i < clip.frames.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "%06zu.png", i);
    write_png((fs::path(dir) / name).string(), clip.frames[i]);
  }
  std::ofstream(fs::path(dir) / "fps.txt") << clip.fps << '\n';
}

}  // namespace sgx
