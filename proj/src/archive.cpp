#include "sgx/archive.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace sgx {

namespace {

constexpr char kMagic[8] = {'S', 'G', 'X', 'A', '0', '0', '0', '1'};

template <class T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(std::istream& is, const std::string& path) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw ImportError("truncated archive: " + path);
  return v;
}

Shape squeeze(const Shape& s) {
  Shape out;
  for (int d : s)
    if (d != 1) out.push_back(d);
  return out;
}

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ImportError("cannot open " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

void write_archive(const std::string& path, const TensorList& tensors) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ArgumentError("cannot write " + path);
  os.write(kMagic, sizeof kMagic);
  put<std::uint64_t>(os, tensors.size());
  for (const auto& [name, t] : tensors) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(t.ndim()));
    for (int d : t.shape()) put<std::int64_t>(os, d);
    os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(float)));
  }
  if (!os) throw ArgumentError("failed writing " + path);
}

TensorList read_archive(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ImportError("cannot open " + path);
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) throw ImportError("not a tensor archive: " + path);
  const auto count = get<std::uint64_t>(is, path);
  TensorList out;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto len = get<std::uint32_t>(is, path);
    if (len > (1u << 16)) throw ImportError("corrupt tensor name in " + path);
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw ImportError("truncated archive: " + path);
    const auto nd = get<std::uint32_t>(is, path);
    if (nd > 8) throw ImportError("corrupt rank for " + name);
    Shape s(nd);
    for (auto& d : s) {
      const auto v = get<std::int64_t>(is, path);
      if (v < 0 || v > (1LL << 31)) throw ImportError("corrupt dimension for " + name);
      d = static_cast<int>(v);
    }
    Tensor t(s);
    if (!is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(float))))
      throw ImportError("truncated data for " + name);
    out.emplace_back(std::move(name), std::move(t));
  }
  return out;
}

const Tensor& find_tensor(const TensorList& list, const std::string& name) {
  for (const auto& [n, t] : list)
    if (n == name) return t;
  throw ImportError("missing tensor: " + name);
}

void write_sidecar(const std::string& archive_path, const std::string& json_text) {
  std::ofstream os(archive_path + ".json");
  if (!os) throw ArgumentError("cannot write " + archive_path + ".json");
  os << json_text << '\n';
}

std::string read_sidecar(const std::string& archive_path) { return slurp(archive_path + ".json"); }

void write_safetensors(const std::string& path, const TensorList& tensors) {
  nlohmann::ordered_json header = nlohmann::ordered_json::object();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    const std::uint64_t bytes = t.numel() * sizeof(float);
    header[name] = {{"dtype", "F32"}, {"shape", t.shape()}, {"data_offsets", {offset, offset + bytes}}};
    offset += bytes;
  }
  std::string h = header.dump();
  while (h.size() % 8) h.push_back(' ');
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ArgumentError("cannot write " + path);
  put<std::uint64_t>(os, h.size());
  os.write(h.data(), static_cast<std::streamsize>(h.size()));
  for (const auto& [name, t] : tensors)
    os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(float)));
}

TensorList read_safetensors(const std::string& path) {
  const std::string raw = slurp(path);
  if (raw.size() < 8) throw ImportError("truncated safetensors file: " + path);
  std::uint64_t hlen = 0;
  std::memcpy(&hlen, raw.data(), 8);
  if (hlen > raw.size() - 8) throw ImportError("corrupt safetensors header: " + path);
  nlohmann::ordered_json header;
  try {
    header = nlohmann::ordered_json::parse(raw.substr(8, hlen));
  } catch (const std::exception& e) {
    throw ImportError("bad safetensors header in " + path + ": " + e.what());
  }
  const std::size_t base = 8 + hlen;
  TensorList out;
  for (auto it = header.begin(); it != header.end(); ++it) {
    if (it.key() == "__metadata__") continue;
    const auto& e = it.value();
    if (e.value("dtype", "") != "F32") throw ImportError("tensor " + it.key() + " is not F32");
    Shape s = e.at("shape").get<Shape>();
    const auto off = e.at("data_offsets").get<std::vector<std::uint64_t>>();
    Tensor t(s);
    if (off.size() != 2 || off[1] - off[0] != t.numel() * sizeof(float) || base + off[1] > raw.size())
      throw ImportError("bad data offsets for " + it.key());
    std::memcpy(t.data(), raw.data() + base + off[0], off[1] - off[0]);
    out.emplace_back(it.key(), std::move(t));
  }
  return out;
}

TensorList params_to_list(const nn::ParamStore& ps) {
  TensorList out;
  for (const auto& [name, v] : ps.items()) out.emplace_back(name, v.value());
  return out;
}

void load_params(nn::ParamStore& ps, const TensorList& tensors, const std::string& prefix) {
  std::vector<std::string> missing;
  for (const auto& [name, v] : ps.items()) {
    if (!prefix.empty() && name.rfind(prefix, 0) != 0) continue;
    auto it = std::find_if(tensors.begin(), tensors.end(), [&](const auto& p) { return p.first == name; });
    if (it == tensors.end()) {
      missing.push_back(name);
      continue;
    }
    if (it->second.shape() != v.shape())
      throw ImportError("shape mismatch for " + name + ": " + shape_str(it->second.shape()) + " vs " +
                        shape_str(v.shape()));
  }
  if (!missing.empty()) {
    std::string msg = "missing tensors:";
    for (const auto& m : missing) msg += " " + m;
    throw ImportError(msg);
  }
  for (const auto& [name, v] : ps.items()) {
    if (!prefix.empty() && name.rfind(prefix, 0) != 0) continue;
    Var var = v;
    var.mutable_value() = find_tensor(tensors, name);
  }
}

void save_generator(const std::string& path, const Generator& g) {
  TensorList list = params_to_list(g.params());
  list.emplace_back("meta/avg_latent", g.avg_latent());
  write_archive(path, list);
}

Generator load_generator(const std::string& path, const GeneratorSpec& spec) {
  const TensorList list = read_archive(path);
  Generator g = Generator::empty(spec);
  load_params(g.params(), list);
  Tensor avg = find_tensor(list, "meta/avg_latent");
  require_shape(avg, {spec.latent_dim}, "average latent");
  g.set_avg_latent(std::move(avg));
  return g;
}

MappingTable read_mapping_table(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ImportError("cannot open mapping table " + path);
  MappingTable t;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0 || tab + 1 >= line.size())
      throw ImportError("mapping table line " + std::to_string(lineno) + " needs two tab-separated keys");
    t.rows.emplace_back(line.substr(0, tab), line.substr(tab + 1));
  }
  return t;
}

void write_mapping_table(const std::string& path, const MappingTable& t) {
  std::ofstream os(path);
  if (!os) throw ArgumentError("cannot write " + path);
  os << "# external\tinternal\n";
  for (const auto& [e, i] : t.rows) os << e << '\t' << i << '\n';
}

MappingTable stylegan2_mapping_table(const GeneratorSpec& spec) {
  spec.validate();
  MappingTable t;
  char buf[64];
  for (int i = 0; i < spec.n_mlp; ++i) {
    std::snprintf(buf, sizeof buf, "generator/mapping/layer%02d/", i);
    const std::string ext = "style." + std::to_string(i + 1) + ".";
    t.rows.emplace_back(ext + "weight", std::string(buf) + "weight");
    t.rows.emplace_back(ext + "bias", std::string(buf) + "bias");
  }
  t.rows.emplace_back("input.input", "generator/synthesis/constant");
  for (int k = 1; k <= spec.num_conv_layers(); ++k) {
    std::snprintf(buf, sizeof buf, "generator/synthesis/layer%02d/", k);
    const std::string in(buf);
    const std::string ext = k == 1 ? "conv1." : "convs." + std::to_string(k - 2) + ".";
    t.rows.emplace_back(ext + "conv.weight", in + "weight");
    t.rows.emplace_back(ext + "conv.modulation.weight", in + "style_affine/weight");
    t.rows.emplace_back(ext + "conv.modulation.bias", in + "style_affine/bias");
    t.rows.emplace_back(ext + "noise.weight", in + "noise_scale");
    t.rows.emplace_back(ext + "activate.bias", in + "bias");
  }
  for (int r = 0; r < spec.log2_res() - 1; ++r) {
    std::snprintf(buf, sizeof buf, "generator/synthesis/torgb%02d/", r);
    const std::string in(buf);
    const std::string ext = r == 0 ? "to_rgb1." : "to_rgbs." + std::to_string(r - 1) + ".";
    t.rows.emplace_back(ext + "conv.weight", in + "weight");
    t.rows.emplace_back(ext + "conv.modulation.weight", in + "style_affine/weight");
    t.rows.emplace_back(ext + "conv.modulation.bias", in + "style_affine/bias");
    t.rows.emplace_back(ext + "bias", in + "bias");
  }
  t.rows.emplace_back("latent_avg", "meta/avg_latent");
  return t;
}

Generator import_generator(const TensorList& external, const MappingTable& table, const GeneratorSpec& spec,
                           std::uint64_t avg_seed) {
  Generator g = Generator::empty(spec);
  std::vector<std::string> missing;
  std::vector<std::string> covered;
  bool have_avg = false;
  for (const auto& [ext, in] : table.rows) {
    const bool is_avg = in == "meta/avg_latent";
    if (!is_avg && !g.params().contains(in)) continue;  // rows for larger resolutions
    auto it = std::find_if(external.begin(), external.end(), [&](const auto& p) { return p.first == ext; });
    if (it == external.end()) {
      if (!is_avg) missing.push_back(ext + " (" + in + ")");
      continue;
    }
    const Tensor& src = it->second;
    if (is_avg) {
      if (src.numel() != static_cast<std::size_t>(spec.latent_dim))
        throw ImportError("shape mismatch for " + ext + ": " + shape_str(src.shape()));
      g.set_avg_latent(src.reshaped({spec.latent_dim}));
      have_avg = true;
      continue;
    }
    Var dst = g.params().get(in);
    if (squeeze(src.shape()) != squeeze(dst.shape()))
      throw ImportError("shape mismatch for " + ext + " -> " + in + ": " + shape_str(src.shape()) + " vs " +
                        shape_str(dst.shape()));
    dst.mutable_value() = src.reshaped(dst.shape());
    covered.push_back(in);
  }
  if (!missing.empty()) {
    std::string msg = "checkpoint lacks mapped keys:";
    for (const auto& m : missing) msg += " " + m;
    throw ImportError(msg);
  }
  for (const auto& [name, v] : g.params().items())
    if (std::find(covered.begin(), covered.end(), name) == covered.end())
      throw ImportError("mapping table does not cover parameter " + name);
  for (const auto& [name, v] : g.params().items())
    if (!all_finite(v.value())) throw ImportError("non-finite values in " + name);
  if (!have_avg) g.compute_avg_latent(spec.avg_latent_samples, avg_seed);
  return g;
}

TensorList export_generator(const Generator& g, const MappingTable& table) {
  TensorList out;
  for (const auto& [ext, in] : table.rows) {
    if (in == "meta/avg_latent") {
      out.emplace_back(ext, g.avg_latent());
      continue;
    }
    if (g.params().contains(in)) out.emplace_back(ext, g.params().get(in).value());
  }
  return out;
}

}  // namespace sgx
