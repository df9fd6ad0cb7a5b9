#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "sgx/encoder.hpp"
#include "sgx/imaging.hpp"
#include "sgx/losses.hpp"

namespace sgx {

/// Which forward rule and which loss terms a training run uses.
struct TaskSpec {
  TaskKind kind = TaskKind::Inversion;
  int skip_depth = 0;
  int style_split = 7;       // rows [0, split) structural, the rest texture
  int superres_factor = 8;   // degradation factor of the synthetic pairs
  int style_size = 128;      // side of the aligned crops fed to E_W
  int disc_crop = 64;
  int disc_width = 16;
  int batch = 4;
  float lr = 1e-4f;
  float disc_lr = 2e-4f;
  float r1_gamma = 1.0f;
  int r1_every = 4;
  float edit_scale_max = 2.0f;  // v multipliers ~ U[0, max]
  int mask_classes = 4;
  int translation_width = 16;
  float truncation = 0.7f;
  bool augment = false;

  /// Per-task defaults; `multi_factor` selects the 4-64 super-resolution depth.
  static TaskSpec defaults(TaskKind k, bool multi_factor = false);
  bool adversarial() const;
  bool temporal() const;
  bool uses_translation() const { return kind == TaskKind::Sketch2Face || kind == TaskKind::Mask2Face; }
  int translation_channels() const { return kind == TaskKind::Sketch2Face ? 1 : mask_classes; }
};

/// One training pair. `x` is the raw source (low-res image, sketch, mask or
/// frame); `x_style`/`y_style` are the aligned crops fed to E_W.
struct PairedSample {
  Tensor x, y;
  Tensor x_style, y_style;
  Tensor v;  // (L, D) editing vector actually applied, empty otherwise
  float v_scale = 0.0f;
  std::uint64_t noise_seed = 0;
};

/// Deterministic synthetic pairs for `spec.kind`. `g0_prime` is required for
/// toonification and `v` (L, D) for video editing.
std::vector<PairedSample> synthesize_pairs(const TaskSpec& spec, const Generator& g0, const Generator* g0_prime,
                                           const Tensor* v, int n, std::uint64_t seed);

/// Bilinear upsampling by an integer factor (1 is the identity).
Tensor upsample_input(const Tensor& x, int factor);

struct GeometricParams {
  double scale = 1.0, rotation_deg = 0.0, tx = 0.0, ty = 0.0;  // tx, ty as fractions of the side
};
struct GeometricRanges {
  double scale_lo = 0.8, scale_hi = 1.2, max_translate = 0.1, max_rotate_deg = 15.0;
};
GeometricParams sample_geometric(Rng& rng, const GeometricRanges& r = {});
/// Output -> input map for an h x w raster.
img::Affine geometric_transform(const GeometricParams& p, int h, int w);
Tensor apply_geometric(const Tensor& x, const GeometricParams& p);
/// Same random transform for source and target; sides stay multiples of 32.
std::pair<Tensor, Tensor> augment_geometric(const Tensor& x, const Tensor& y, std::uint64_t seed,
                                            const GeometricRanges& r = {});

/// Trainable and frozen networks for one task.
struct TaskModels {
  std::shared_ptr<Encoder> encoder;
  std::shared_ptr<TranslationNet> translator;
  std::shared_ptr<Discriminator> discriminator;
  std::shared_ptr<const GeneratorEX> generator;  // G, or G′ for toonification
  std::vector<Var> trainable() const;
};

TaskModels make_task_models(const TaskSpec& spec, std::shared_ptr<const GeneratorEX> generator, std::uint64_t seed,
                            const EncoderSpec& enc_spec = EncoderSpec::desk());

struct TrainLog {
  int step = 0;
  double total = 0, l2 = 0, perceptual = 0, id = 0, reg = 0, tmp = 0, adv_g = 0, adv_d = 0, r1 = 0;
};

/// Append-only CSV log: header once, one row per step.
std::string train_log_csv_header();
std::string train_log_csv_row(const TrainLog& l);

struct TrainResult {
  double eval_before = 0, eval_after = 0;
  std::vector<TrainLog> history;
  std::uint64_t generator_checksum_before = 0, generator_checksum_after = 0;
};

struct TaskOutput {
  Var y_hat;
  Var f;  // first-layer feature
  Var w;  // style code that entered the generator
  SkipSet skips;
};

/// The per-task forward rule on a batch of pairs.
TaskOutput task_forward(const TaskSpec& spec, const TaskModels& m, const std::vector<const PairedSample*>& batch,
                        const NoiseField& noise);

/// Mean over all pairs of the non-adversarial objective under fixed noise.
double evaluate_task(const TaskSpec& spec, const LossWeights& w, const TaskModels& m,
                     const std::vector<PairedSample>& data, const PerceptualMetric& metric,
                     const IdentityEmbedder* embedder, std::uint64_t noise_seed);

TrainResult train_task(const TaskSpec& spec, const LossWeights& w, TaskModels& m,
                       const std::vector<PairedSample>& data, int steps, std::uint64_t seed,
                       const PerceptualMetric& metric, const IdentityEmbedder* embedder,
                       const std::function<void(const TrainLog&)>& on_step = {});

}  // namespace sgx
