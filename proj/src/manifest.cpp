#include "sgx/manifest.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "sgx/archive.hpp"
#include "sgx/image_io.hpp"

namespace sgx {

namespace fs = std::filesystem;

namespace {

std::string under(const std::string& base, const std::string& p) {
  if (base.empty() || fs::path(p).is_absolute()) return p;
  return (fs::path(base) / p).string();
}

Rect parse_crop(const std::string& s, int line) {
  Rect r;
  char c1, c2, c3;
  std::istringstream is(s);
  if (!(is >> r.x >> c1 >> r.y >> c2 >> r.w >> c3 >> r.h) || c1 != ',' || c2 != ',' || c3 != ',')
    throw ConfigError("manifest line " + std::to_string(line) + ": crop must be x,y,w,h");
  return r;
}

Tensor style_of(const Tensor& img, const std::optional<Rect>& crop, int side) {
  return crop ? manual_crop(img, *crop, side) : img::resize_bilinear(img, side, side);
}

}  // namespace

std::vector<ManifestRecord> parse_manifest(const std::string& text, const std::string& base_dir) {
  std::vector<ManifestRecord> out;
  std::istringstream is(text);
  std::string line;
  int no = 0;
  while (std::getline(is, line)) {
    ++no;
    if (const auto h = line.find('#'); h != std::string::npos) line.resize(h);
    std::istringstream ls(line);
    std::vector<std::string> tok;
    for (std::string t; ls >> t;) tok.push_back(t);
    if (tok.empty()) continue;
    if (tok.size() < 2) throw ConfigError("manifest line " + std::to_string(no) + ": need source and target");
    ManifestRecord r;
    r.source = under(base_dir, tok[0]);
    r.target = under(base_dir, tok[1]);
    for (std::size_t i = 2; i < tok.size(); ++i) {
      if (tok[i].rfind("crop=", 0) == 0) r.crop = parse_crop(tok[i].substr(5), no);
      else if (r.vector.empty()) r.vector = under(base_dir, tok[i]);
      else throw ConfigError("manifest line " + std::to_string(no) + ": unexpected field " + tok[i]);
    }
    out.push_back(std::move(r));
  }
  if (out.empty()) throw ConfigError("manifest has no records");
  return out;
}

std::vector<ManifestRecord> read_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open manifest " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_manifest(ss.str(), fs::path(path).parent_path().string());
}

std::vector<PairedSample> load_manifest_pairs(const TaskSpec& spec, const GeneratorSpec& gspec,
                                              const std::vector<ManifestRecord>& records) {
  const int L = gspec.num_style_layers(), D = gspec.latent_dim;
  std::vector<PairedSample> out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    PairedSample p;
    p.noise_seed = Rng::mix(i);
    p.y = read_png(r.target, 3);
    switch (spec.kind) {
      case TaskKind::Inversion:
      case TaskKind::Toonify:
        p.x = read_png(r.source, 3);
        p.x_style = style_of(p.x, r.crop, spec.style_size);
        break;
      case TaskKind::SuperRes:
        p.x = read_png(r.source, 3);
        p.x_style = style_of(upsample_input(p.x, spec.superres_factor), r.crop, spec.style_size);
        break;
      case TaskKind::Sketch2Face:
        p.x = read_png(r.source, 1);
        p.y_style = style_of(p.y, r.crop, spec.style_size);
        break;
      case TaskKind::Mask2Face:
        p.x = img::mask_from_image(read_png(r.source, 3), spec.mask_classes);
        p.y_style = style_of(p.y, r.crop, spec.style_size);
        break;
      case TaskKind::VideoEdit: {
        p.x = read_png(r.source, 3);
        p.x_style = style_of(p.x, r.crop, spec.style_size);
        if (r.vector.empty()) throw ConfigError("video editing record " + std::to_string(i + 1) + " has no vector");
        const TensorList t = read_archive(r.vector);
        if (t.empty()) throw ImportError("no tensor in " + r.vector);
        const Tensor& v = t.front().second;
        const bool row = static_cast<int>(v.numel()) == D;
        if (!row && static_cast<int>(v.numel()) != L * D)
          throw ShapeError("editing vector " + r.vector + " has " + std::to_string(v.numel()) + " values");
        p.v = Tensor({L, D});
        for (int l = 0; l < L; ++l)
          for (int d = 0; d < D; ++d) p.v[static_cast<std::size_t>(l) * D + d] = v[(row ? 0 : l) * D + d];
        p.v_scale = 1.0f;
        break;
      }
    }
    const int M = gspec.scale_factor();
    const int want_h = spec.kind == TaskKind::SuperRes ? p.x.h() * spec.superres_factor / 8 * M : p.x.h() / 8 * M;
    if (p.y.h() != want_h) throw ShapeError("manifest record " + std::to_string(i + 1) + ": target height " +
                                            std::to_string(p.y.h()) + " does not match the source");
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace sgx
