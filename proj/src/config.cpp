#include "sgx/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace sgx {

using json = nlohmann::ordered_json;

namespace {

void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!ok.count(it.key())) throw ConfigError("unknown config key: " + where + "." + it.key());
}

template <class T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const std::exception& e) {
    throw ConfigError("bad value for " + where + "." + key + ": " + e.what());
  }
}

// Shortest decimal that round-trips a float, so dumps read 1e-4 rather than 9.99999974e-05.
double clean(float v) {
  char buf[32];
  for (int prec = 1; prec <= 9; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtof(buf, nullptr) == v) break;
  }
  return std::strtod(buf, nullptr);
}

}  // namespace

GeneratorSpec RunConfig::generator_spec() const {
  GeneratorSpec s;
  if (generator_preset == "desk") s = GeneratorSpec::desk(resolution);
  else if (generator_preset == "stylegan2") s = GeneratorSpec::stylegan2(resolution);
  else throw ConfigError("unknown generator preset " + generator_preset);
  s.validate();
  return s;
}

EncoderSpec RunConfig::encoder_spec() const {
  if (encoder_preset == "desk") return EncoderSpec::desk();
  if (encoder_preset == "full") return EncoderSpec::full();
  throw ConfigError("unknown encoder preset " + encoder_preset);
}

NoiseField RunConfig::noise_field(std::uint64_t salt) const {
  const std::uint64_t s = Rng(seed).substream("noise").substream(salt).seed();
  if (noise == "zero") return NoiseField::zero();
  if (noise == "fixed") return NoiseField::fixed(s);
  if (noise == "random") return NoiseField::random(s);
  throw ConfigError("noise must be zero, fixed or random");
}

void RunConfig::set_task(TaskKind kind) {
  task = TaskSpec::defaults(kind);
  loss = LossWeights::defaults(kind);
}

RunConfig parse_run_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  check_keys(j, "config",
             {"generator", "encoder", "task", "loss_weights", "invert", "train", "seed", "noise", "threads",
              "pad_mode", "output_dir"});
  RunConfig c;
  if (j.contains("generator")) {
    const auto& g = j["generator"];
    check_keys(g, "generator", {"preset", "resolution", "weights", "prime_weights"});
    read(g, "preset", c.generator_preset, "generator");
    read(g, "resolution", c.resolution, "generator");
    read(g, "weights", c.generator_weights, "generator");
    read(g, "prime_weights", c.generator_prime_weights, "generator");
  }
  if (j.contains("encoder")) {
    const auto& e = j["encoder"];
    check_keys(e, "encoder", {"preset", "checkpoint"});
    read(e, "preset", c.encoder_preset, "encoder");
    read(e, "checkpoint", c.encoder_checkpoint, "encoder");
  }
  if (j.contains("task")) {
    const auto& t = j["task"];
    check_keys(t, "task",
               {"kind", "multi_factor", "skip_depth", "style_split", "superres_factor", "style_size", "disc_crop",
                "disc_width", "batch", "lr", "disc_lr", "r1_gamma", "r1_every", "edit_scale_max", "mask_classes",
                "translation_width", "truncation", "augment"});
    if (t.contains("kind")) {
      TaskKind k;
      try {
        k = parse_task(t["kind"].get<std::string>());
      } catch (const std::exception& e) {
        throw ConfigError(std::string("bad task.kind: ") + e.what());
      }
      bool multi = false;
      read(t, "multi_factor", multi, "task");
      c.task = TaskSpec::defaults(k, multi);
      c.loss = LossWeights::defaults(k);
    }
    auto& s = c.task;
    read(t, "skip_depth", s.skip_depth, "task");
    read(t, "style_split", s.style_split, "task");
    read(t, "superres_factor", s.superres_factor, "task");
    read(t, "style_size", s.style_size, "task");
    read(t, "disc_crop", s.disc_crop, "task");
    read(t, "disc_width", s.disc_width, "task");
    read(t, "batch", s.batch, "task");
    read(t, "lr", s.lr, "task");
    read(t, "disc_lr", s.disc_lr, "task");
    read(t, "r1_gamma", s.r1_gamma, "task");
    read(t, "r1_every", s.r1_every, "task");
    read(t, "edit_scale_max", s.edit_scale_max, "task");
    read(t, "mask_classes", s.mask_classes, "task");
    read(t, "translation_width", s.translation_width, "task");
    read(t, "truncation", s.truncation, "task");
    read(t, "augment", s.augment, "task");
    if (!valid_skip_depth(s.skip_depth)) throw ConfigError("task.skip_depth must be one of 0,1,3,5,7,9,11,13");
    if (s.batch < 1) throw ConfigError("task.batch must be positive");
  }
  if (j.contains("loss_weights")) {
    const auto& l = j["loss_weights"];
    check_keys(l, "loss_weights", {"reg", "l2", "perceptual", "id", "adv", "tmp"});
    read(l, "reg", c.loss.reg, "loss_weights");
    read(l, "l2", c.loss.l2, "loss_weights");
    read(l, "perceptual", c.loss.perceptual, "loss_weights");
    read(l, "id", c.loss.id, "loss_weights");
    read(l, "adv", c.loss.adv, "loss_weights");
    read(l, "tmp", c.loss.tmp, "loss_weights");
  }
  if (j.contains("invert")) {
    const auto& v = j["invert"];
    check_keys(v, "invert", {"steps", "lr_w", "lr_f", "pixel_l2", "pixel_l2_weight", "use_aligned", "style_size"});
    read(v, "steps", c.invert.steps, "invert");
    read(v, "lr_w", c.invert.lr_w, "invert");
    read(v, "lr_f", c.invert.lr_f, "invert");
    read(v, "pixel_l2", c.invert.pixel_l2, "invert");
    read(v, "pixel_l2_weight", c.invert.pixel_l2_weight, "invert");
    read(v, "use_aligned", c.invert.use_aligned, "invert");
    read(v, "style_size", c.invert.style_size, "invert");
    if (c.invert.steps < 0) throw ConfigError("invert.steps must be non-negative");
  }
  if (j.contains("train")) {
    const auto& t = j["train"];
    check_keys(t, "train", {"steps", "pairs"});
    read(t, "steps", c.train_steps, "train");
    read(t, "pairs", c.train_pairs, "train");
  }
  read(j, "seed", c.seed, "config");
  read(j, "noise", c.noise, "config");
  read(j, "threads", c.threads, "config");
  read(j, "pad_mode", c.pad_mode, "config");
  read(j, "output_dir", c.output_dir, "config");
  if (c.pad_mode != "pad" && c.pad_mode != "reject") throw ConfigError("pad_mode must be pad or reject");
  (void)c.noise_field();
  (void)c.generator_spec();
  (void)c.encoder_spec();
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_run_config(ss.str());
}

std::string dump_run_config(const RunConfig& c) {
  const auto& t = c.task;
  json j;
  j["generator"] = {{"preset", c.generator_preset},
                    {"resolution", c.resolution},
                    {"weights", c.generator_weights},
                    {"prime_weights", c.generator_prime_weights}};
  j["encoder"] = {{"preset", c.encoder_preset}, {"checkpoint", c.encoder_checkpoint}};
  j["task"] = {{"kind", task_name(t.kind)},
               {"skip_depth", t.skip_depth},
               {"style_split", t.style_split},
               {"superres_factor", t.superres_factor},
               {"style_size", t.style_size},
               {"disc_crop", t.disc_crop},
               {"disc_width", t.disc_width},
               {"batch", t.batch},
               {"lr", clean(t.lr)},
               {"disc_lr", clean(t.disc_lr)},
               {"r1_gamma", clean(t.r1_gamma)},
               {"r1_every", t.r1_every},
               {"edit_scale_max", clean(t.edit_scale_max)},
               {"mask_classes", t.mask_classes},
               {"translation_width", t.translation_width},
               {"truncation", clean(t.truncation)},
               {"augment", t.augment}};
  j["loss_weights"] = {{"reg", c.loss.reg}, {"l2", c.loss.l2},   {"perceptual", c.loss.perceptual},
                       {"id", c.loss.id},   {"adv", c.loss.adv}, {"tmp", c.loss.tmp}};
  j["invert"] = {{"steps", c.invert.steps},
                 {"lr_w", clean(c.invert.lr_w)},
                 {"lr_f", clean(c.invert.lr_f)},
                 {"pixel_l2", c.invert.pixel_l2},
                 {"pixel_l2_weight", clean(c.invert.pixel_l2_weight)},
                 {"use_aligned", c.invert.use_aligned},
                 {"style_size", c.invert.style_size}};
  j["train"] = {{"steps", c.train_steps}, {"pairs", c.train_pairs}};
  j["seed"] = c.seed;
  j["noise"] = c.noise;
  j["threads"] = c.threads;
  j["pad_mode"] = c.pad_mode;
  j["output_dir"] = c.output_dir;
  return j.dump(2);
}

void write_resolved_config(const RunConfig& c, const std::string& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream os(std::filesystem::path(dir) / "config.resolved.json");
  if (!os) throw ArgumentError("cannot write resolved config in " + dir);
  os << dump_run_config(c) << '\n';
}

}  // namespace sgx
