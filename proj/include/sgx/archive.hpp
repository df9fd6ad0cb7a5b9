#pragma once

#include <string>
#include <utility>
#include <vector>

#include "sgx/synthesis.hpp"

namespace sgx {

/// Ordered named tensors.
using TensorList = std::vector<std::pair<std::string, Tensor>>;

/// Native tensor archive (.sgxa): little-endian float32 records.
void write_archive(const std::string& path, const TensorList& tensors);
TensorList read_archive(const std::string& path);
const Tensor& find_tensor(const TensorList& list, const std::string& name);

/// JSON metadata written next to an archive as `<path>.json`.
void write_sidecar(const std::string& archive_path, const std::string& json_text);
std::string read_sidecar(const std::string& archive_path);

/// safetensors (F32 only).
void write_safetensors(const std::string& path, const TensorList& tensors);
TensorList read_safetensors(const std::string& path);

TensorList params_to_list(const nn::ParamStore& ps);
/// Strict copy into `ps`: every parameter must be present with a matching shape.
void load_params(nn::ParamStore& ps, const TensorList& tensors, const std::string& prefix = "");

/// Generator parameters plus the average latent ("meta/avg_latent").
void save_generator(const std::string& path, const Generator& g);
Generator load_generator(const std::string& path, const GeneratorSpec& spec);

/// external key -> internal name.
struct MappingTable {
  std::vector<std::pair<std::string, std::string>> rows;
};
/// Tab-separated "external<TAB>internal" lines; '#' starts a comment.
MappingTable read_mapping_table(const std::string& path);
void write_mapping_table(const std::string& path, const MappingTable& t);
/// Key layout of the widely used PyTorch StyleGAN2 port for `spec`.
MappingTable stylegan2_mapping_table(const GeneratorSpec& spec);

/// Builds a Generator from an external checkpoint. Singleton dims are ignored
/// when comparing shapes. A missing "meta/avg_latent" is recomputed.
Generator import_generator(const TensorList& external, const MappingTable& table, const GeneratorSpec& spec,
                           std::uint64_t avg_seed = 0);
TensorList export_generator(const Generator& g, const MappingTable& table);

}  // namespace sgx
