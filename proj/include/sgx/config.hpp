#pragma once

#include <cstdint>
#include <string>

#include "sgx/inversion.hpp"
#include "sgx/training.hpp"

namespace sgx {

struct RunConfig {
  // Generator
  std::string generator_preset = "desk";  // "desk" or "stylegan2"
  int resolution = 256;
  std::string generator_weights;        // .sgxa; empty: random weights from the seed
  std::string generator_prime_weights;  // toonification / domain transfer
  // Encoder
  std::string encoder_preset = "desk";  // "desk" or "full"
  std::string encoder_checkpoint;
  // Task
  TaskSpec task = TaskSpec::defaults(TaskKind::Inversion);
  LossWeights loss = LossWeights::defaults(TaskKind::Inversion);
  InvertConfig invert;
  int train_steps = 50;
  int train_pairs = 64;
  // Run
  std::uint64_t seed = 0;
  std::string noise = "zero";  // zero | fixed | random
  int threads = 0;             // 0: OpenMP default
  std::string pad_mode = "pad";  // pad | reject, for sides not divisible by 32
  std::string output_dir = "out";

  GeneratorSpec generator_spec() const;
  EncoderSpec encoder_spec() const;
  NoiseField noise_field(std::uint64_t salt = 0) const;
  /// Re-derives task and loss defaults for `kind`, keeping other fields.
  void set_task(TaskKind kind);
};

/// Parses JSON; unknown keys anywhere raise ConfigError.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);
std::string dump_run_config(const RunConfig& c);
/// Writes `<dir>/config.resolved.json`.
void write_resolved_config(const RunConfig& c, const std::string& dir);

}  // namespace sgx
