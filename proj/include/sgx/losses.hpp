#pragma once

#include <memory>
#include <string>
#include <vector>

#include "sgx/nn.hpp"

namespace sgx {

using ag::Var;

enum class TaskKind { Inversion, SuperRes, Sketch2Face, Mask2Face, VideoEdit, Toonify };

const char* task_name(TaskKind k);
TaskKind parse_task(const std::string& s);

/// λ1 reg, λ2 L2, λ3 perceptual, λ4 identity, λ5 adversarial, λ6 temporal.
struct LossWeights {
  double reg = 0.0, l2 = 1.0, perceptual = 0.8, id = 0.0, adv = 0.1, tmp = 30.0;
  static LossWeights defaults(TaskKind k);
  bool operator==(const LossWeights&) const = default;
};

/// Distance between image batches. Returns a scalar Var (mean over the batch).
class PerceptualMetric {
 public:
  virtual ~PerceptualMetric() = default;
  virtual Var distance(const Var& a, const Var& b) const = 0;
};

/// Multi-scale channel-normalised feature distance on a fixed-seed random
/// conv stack. Deterministic stand-in for a learned metric.
class RandomFeatureMetric : public PerceptualMetric {
 public:
  explicit RandomFeatureMetric(std::uint64_t seed = 7, std::vector<int> widths = {8, 16, 32});
  Var distance(const Var& a, const Var& b) const override;
  std::vector<Var> features(const Var& x) const;

 private:
  std::vector<Var> convs_;
};

double perceptual_distance(const PerceptualMetric& m, const Tensor& a, const Tensor& b);

/// Face identity embedding (N, E).
class IdentityEmbedder {
 public:
  virtual ~IdentityEmbedder() = default;
  virtual Var embed(const Var& img) const = 0;
};

/// Fixed-seed random conv net, global pooling and a linear projection.
class RandomIdentityEmbedder : public IdentityEmbedder {
 public:
  explicit RandomIdentityEmbedder(std::uint64_t seed = 11, int dim = 32);
  Var embed(const Var& img) const override;

 private:
  std::vector<Var> convs_;
  Var proj_;
};

/// Mean over the batch of 1 - cos(embed(a), embed(b)).
Var loss_id(const Var& a, const Var& b, const IdentityEmbedder& embedder);

struct RecTerms {
  Var total;
  double l2 = 0.0, perceptual = 0.0, id = 0.0;
};

/// λ2·L2 + λ3·L_perceptual + λ4·L_ID; terms with zero weight are skipped.
RecTerms loss_rec(const Var& y_hat, const Var& y, const LossWeights& w, const PerceptualMetric& metric,
                  const IdentityEmbedder* embedder);
/// ||w - w̄||² / (L·D), w (N, L, D), avg (D).
Var loss_reg(const Var& w, const Tensor& avg);
/// Mean absolute difference of two noise draws of the same input.
Var loss_tmp(const Var& a, const Var& b);

/// StyleGAN2-style residual discriminator on fixed-size square crops.
class Discriminator {
 public:
  Discriminator(int crop, int width, std::uint64_t seed);
  int crop() const { return crop_; }
  /// Logits (N, 1).
  Var operator()(const Var& x) const;
  nn::ParamStore& params() { return params_; }

  /// Accumulates ∇θ of (γ/2)·mean ||∇x D(x)||² into the parameter grads,
  /// using a central difference of ∇θ D along ∇x D.
  double accumulate_r1(const Tensor& real, float gamma, float eps = 1e-3f);

 private:
  int crop_;
  nn::ParamStore params_;
  nn::EqualConv stem_;
  struct Block {
    nn::EqualConv conv1, conv2, skip;
  };
  std::vector<Block> blocks_;
  nn::EqualConv final_conv_;
  nn::EqualLinear fc1_, fc2_;
};

/// mean softplus(-D(fake)).
Var gen_adv_loss(const Discriminator& d, const Var& fake);
/// mean softplus(D(fake)) + mean softplus(-D(real)).
Var disc_loss(const Discriminator& d, const Var& real, const Var& fake);
/// Same random crop window for every image in the batch.
Var random_crop(const Var& x, int size, Rng& rng);

/// ID-c: mean identity loss between each edited frame and its original.
double metric_id_consistency(const std::vector<Tensor>& edited, const std::vector<Tensor>& original,
                             const IdentityEmbedder& embedder);
/// ID-m: mean identity loss of frames 2..N against frame 1. Zero for a single frame.
double metric_id_maintenance(const std::vector<Tensor>& edited, const IdentityEmbedder& embedder);
/// 1 - cos of two single-image embeddings, in double precision.
double identity_distance(const Tensor& a, const Tensor& b, const IdentityEmbedder& embedder);

}  // namespace sgx
