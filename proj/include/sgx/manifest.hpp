#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sgx/inversion.hpp"
#include "sgx/training.hpp"

namespace sgx {

/// One line of a dataset manifest: `source target [vector] [crop=x,y,w,h]`,
/// whitespace separated. Relative paths resolve against the manifest's directory.
struct ManifestRecord {
  std::string source, target, vector;
  std::optional<Rect> crop;  // aligned crop of the style image
};

std::vector<ManifestRecord> parse_manifest(const std::string& text, const std::string& base_dir = "");
std::vector<ManifestRecord> read_manifest(const std::string& path);

/// Loads PNG pairs for `spec.kind`. Vectors are archive files holding an
/// (L, D), (1, D) or (D) tensor.
std::vector<PairedSample> load_manifest_pairs(const TaskSpec& spec, const GeneratorSpec& gspec,
                                              const std::vector<ManifestRecord>& records);

}  // namespace sgx
