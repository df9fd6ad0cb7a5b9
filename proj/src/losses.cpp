#include "sgx/losses.hpp"

#include <cmath>
#include <limits>

namespace sgx {

const char* task_name(TaskKind k) {
  switch (k) {
    case TaskKind::Inversion: return "inversion";
    case TaskKind::SuperRes: return "superres";
    case TaskKind::Sketch2Face: return "sketch2face";
    case TaskKind::Mask2Face: return "mask2face";
    case TaskKind::VideoEdit: return "video_edit";
    case TaskKind::Toonify: return "toonify";
  }
  return "?";
}

TaskKind parse_task(const std::string& s) {
  for (TaskKind k : {TaskKind::Inversion, TaskKind::SuperRes, TaskKind::Sketch2Face, TaskKind::Mask2Face,
                     TaskKind::VideoEdit, TaskKind::Toonify})
    if (s == task_name(k)) return k;
  throw ConfigError("unknown task '" + s + "'");
}

LossWeights LossWeights::defaults(TaskKind k) {
  LossWeights w;
  w.l2 = 1.0;
  w.perceptual = 0.8;
  w.id = k == TaskKind::Inversion ? 0.1 : 0.0;
  w.reg = k == TaskKind::Inversion ? 0.0001 : (k == TaskKind::Sketch2Face || k == TaskKind::Mask2Face) ? 0.005 : 0.0;
  w.adv = 0.1;
  w.tmp = 30.0;
  return w;
}

// ---------------------------------------------------------------------------

namespace {

Var he_conv(Rng& rng, int cin, int cout, int k) {
  return Var(rng.randn({cout, cin, k, k}, std::sqrt(2.0f / static_cast<float>(cin * k * k))));
}

}  // namespace

RandomFeatureMetric::RandomFeatureMetric(std::uint64_t seed, std::vector<int> widths) {
  Rng rng = Rng(seed).substream("perceptual");
  int cin = 3;
  for (int w : widths) {
    convs_.push_back(he_conv(rng, cin, w, 3));
    convs_.push_back(Var(rng.randn({w}, 0.1f)));
    cin = w;
  }
}

std::vector<Var> RandomFeatureMetric::features(const Var& x) const {
  std::vector<Var> out;
  Var h = x;
  for (std::size_t i = 0; i < convs_.size(); i += 2) {
    if (i > 0) h = op::avg_pool2(h);
    h = op::leaky_relu(op::add_channel_bias(op::conv2d(h, convs_[i], {1, 1, 1}), convs_[i + 1]), 0.2f);
    out.push_back(h);
  }
  return out;
}

Var RandomFeatureMetric::distance(const Var& a, const Var& b) const {
  if (a.shape() != b.shape())
    throw ShapeError("perceptual distance: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  auto fa = features(a);
  auto fb = features(b);
  Var total;
  for (std::size_t i = 0; i < fa.size(); ++i) {
    Var d = op::scale(op::mse(op::channel_normalize(fa[i]), op::channel_normalize(fb[i])),
                      static_cast<float>(fa[i].dim(1)));
    total = total.defined() ? op::add(total, d) : d;
  }
  return total;
}

double perceptual_distance(const PerceptualMetric& m, const Tensor& a, const Tensor& b) {
  ag::NoGradGuard ng;
  return m.distance(Var(a), Var(b)).value()[0];
}

RandomIdentityEmbedder::RandomIdentityEmbedder(std::uint64_t seed, int dim) {
  Rng rng = Rng(seed).substream("identity");
  const int widths[3] = {16, 32, 32};
  int cin = 3;
  for (int w : widths) {
    convs_.push_back(he_conv(rng, cin, w, 3));
    convs_.push_back(Var(rng.randn({w}, 0.1f)));
    cin = w;
  }
  proj_ = Var(rng.randn({dim, cin}, 1.0f / std::sqrt(static_cast<float>(cin))));
}

Var RandomIdentityEmbedder::embed(const Var& img) const {
  Var h = img;
  for (std::size_t i = 0; i < convs_.size(); i += 2)
    h = op::leaky_relu(op::add_channel_bias(op::conv2d(h, convs_[i], {2, 1, 1}), convs_[i + 1]), 0.2f);
  return op::linear(op::global_avg_pool(h), proj_, Var());
}

Var loss_id(const Var& a, const Var& b, const IdentityEmbedder& embedder) {
  if (a.shape() != b.shape()) throw ShapeError("loss_id: shape mismatch");
  Var c = op::cosine_rows(embedder.embed(a), embedder.embed(b));
  return op::add_scalar(op::scale(op::mean_all(c), -1.0f), 1.0f);
}

RecTerms loss_rec(const Var& y_hat, const Var& y, const LossWeights& w, const PerceptualMetric& metric,
                  const IdentityEmbedder* embedder) {
  if (y_hat.shape() != y.shape())
    throw ShapeError("loss_rec: " + shape_str(y_hat.shape()) + " vs " + shape_str(y.shape()));
  RecTerms t;
  auto accumulate = [&t](const Var& term, double weight) {
    Var s = op::scale(term, static_cast<float>(weight));
    t.total = t.total.defined() ? op::add(t.total, s) : s;
  };
  if (w.l2 > 0) {
    Var l2 = op::mse(y_hat, y);
    t.l2 = l2.value()[0];
    accumulate(l2, w.l2);
  }
  if (w.perceptual > 0) {
    Var p = metric.distance(y_hat, y);
    t.perceptual = p.value()[0];
    accumulate(p, w.perceptual);
  }
  if (w.id > 0) {
    if (!embedder) throw ConfigError("identity weight is nonzero but no embedder was supplied");
    Var id = loss_id(y_hat, y, *embedder);
    t.id = id.value()[0];
    accumulate(id, w.id);
  }
  if (!t.total.defined()) t.total = Var(Tensor({1}));
  return t;
}

Var loss_reg(const Var& w, const Tensor& avg) {
  const Tensor& v = w.value();
  if (v.ndim() != 3 || v.dim(2) != static_cast<int>(avg.numel()))
    throw ShapeError("loss_reg: code " + shape_str(v.shape()) + " vs average latent of size " + std::to_string(avg.numel()));
  Tensor target(v.shape());
  const std::size_t D = avg.numel();
  for (std::size_t i = 0; i < target.numel(); ++i) target[i] = avg[i % D];
  return op::mse(w, Var(std::move(target)));
}

Var loss_tmp(const Var& a, const Var& b) { return op::mean_abs_diff(a, b); }

// ---------------------------------------------------------------------------

Discriminator::Discriminator(int crop, int width, std::uint64_t seed) : crop_(crop) {
  if (crop < 8 || (crop & (crop - 1))) throw ConfigError("discriminator crop must be a power of two >= 8");
  Rng rng = Rng(seed).substream("discriminator");
  const std::string p = "discriminator/";
  stem_ = nn::EqualConv::create(params_, p + "from_rgb", 3, width, 1, rng, 1, true, true);
  int i = 0;
  for (int r = crop; r > 4; r /= 2, ++i) {
    const std::string n = p + "block" + std::to_string(i);
    blocks_.push_back({nn::EqualConv::create(params_, n + "/conv1", width, width, 3, rng, 1, true, true),
                       nn::EqualConv::create(params_, n + "/conv2", width, width, 3, rng, 1, true, true),
                       nn::EqualConv::create(params_, n + "/skip", width, width, 1, rng, 1, false, false)});
  }
  final_conv_ = nn::EqualConv::create(params_, p + "final_conv", width + 1, width, 3, rng, 1, true, true);
  fc1_ = nn::EqualLinear::create(params_, p + "fc1", width * 16, width, rng, 0.0f, 1.0f, true);
  fc2_ = nn::EqualLinear::create(params_, p + "fc2", width, 1, rng);
}

Var Discriminator::operator()(const Var& x) const {
  const Tensor& v = x.value();
  require_4d(v, "discriminator input");
  if (v.h() != crop_ || v.w() != crop_)
    throw ConfigError("discriminator expects " + std::to_string(crop_) + "x" + std::to_string(crop_) + " crops, got " +
                      shape_str(v.shape()));
  Var h = stem_(x);
  for (const auto& b : blocks_) {
    Var r = op::avg_pool2(b.conv2(b.conv1(h)));
    Var s = b.skip(op::avg_pool2(h));
    h = op::scale(op::add(r, s), 1.0f / std::sqrt(2.0f));
  }
  h = final_conv_(op::minibatch_stddev(h, 4));
  h = op::reshape(h, {h.dim(0), h.dim(1) * h.dim(2) * h.dim(3)});
  return fc2_(fc1_(h));
}

double Discriminator::accumulate_r1(const Tensor& real, float gamma, float eps) {
  auto params = params_.vars();
  std::vector<Tensor> saved;
  saved.reserve(params.size());
  for (auto& p : params) {
    saved.push_back(p.has_grad() ? p.node()->grad : Tensor());
    p.zero_grad();
  }
  auto param_grads_at = [&](const Tensor& x) {
    for (auto& p : params) p.zero_grad();
    Var xv = ag::param(x);
    ag::backward(op::sum_all((*this)(xv)));
    std::vector<Tensor> g;
    for (auto& p : params) g.push_back(p.grad());
    return std::make_pair(g, xv.grad());
  };
  Tensor gx = param_grads_at(real).second;
  const int N = real.n();
  double r1 = 0.0, gmax = 0.0;
  for (std::size_t i = 0; i < gx.numel(); ++i) {
    r1 += static_cast<double>(gx[i]) * gx[i];
    gmax = std::max(gmax, static_cast<double>(std::fabs(gx[i])));
  }
  r1 = 0.5 * gamma * r1 / N;
  if (gmax > 0.0) {
    const double h = eps / gmax;
    Tensor xp = real, xm = real;
    for (std::size_t i = 0; i < gx.numel(); ++i) {
      xp[i] += static_cast<float>(h * gx[i]);
      xm[i] -= static_cast<float>(h * gx[i]);
    }
    auto gp = param_grads_at(xp).first;
    auto gm = param_grads_at(xm).first;
    const double c = gamma / (2.0 * h * N);
    for (std::size_t k = 0; k < params.size(); ++k)
      for (std::size_t i = 0; i < gp[k].numel(); ++i) gp[k][i] = static_cast<float>((gp[k][i] - gm[k][i]) * c);
    for (std::size_t k = 0; k < params.size(); ++k) {
      params[k].zero_grad();
      if (!saved[k].empty()) params[k].node()->accumulate(saved[k]);
      params[k].node()->accumulate(gp[k]);
    }
  } else {
    for (std::size_t k = 0; k < params.size(); ++k) {
      params[k].zero_grad();
      if (!saved[k].empty()) params[k].node()->accumulate(saved[k]);
    }
  }
  return r1;
}

Var gen_adv_loss(const Discriminator& d, const Var& fake) {
  return op::mean_all(op::softplus(op::scale(d(fake), -1.0f)));
}

Var disc_loss(const Discriminator& d, const Var& real, const Var& fake) {
  return op::add(op::mean_all(op::softplus(d(fake))), op::mean_all(op::softplus(op::scale(d(real), -1.0f))));
}

Var random_crop(const Var& x, int size, Rng& rng) {
  const Tensor& v = x.value();
  require_4d(v, "random_crop");
  if (v.h() < size || v.w() < size)
    throw ConfigError("image " + shape_str(v.shape()) + " is smaller than the crop size " + std::to_string(size));
  const int y0 = rng.uniform_int(0, v.h() - size), x0 = rng.uniform_int(0, v.w() - size);
  return op::crop(x, y0, x0, size, size);
}

// ---------------------------------------------------------------------------

namespace {

std::vector<double> embed_one(const Tensor& img, const IdentityEmbedder& e) {
  ag::NoGradGuard ng;
  Tensor t = img.ndim() == 3 ? img.reshaped({1, img.dim(0), img.dim(1), img.dim(2)}) : img;
  if (t.ndim() != 4 || t.n() != 1) throw ShapeError("identity metrics expect single frames");
  Var v = e.embed(Var(t));
  return {v.value().values().begin(), v.value().values().end()};
}

double one_minus_cos(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) return 1.0;  // a zero embedding has no direction
  return 1.0 - ab / std::sqrt(aa * bb);
}

}  // namespace

double identity_distance(const Tensor& a, const Tensor& b, const IdentityEmbedder& embedder) {
  return one_minus_cos(embed_one(a, embedder), embed_one(b, embedder));
}

double metric_id_consistency(const std::vector<Tensor>& edited, const std::vector<Tensor>& original,
                             const IdentityEmbedder& embedder) {
  if (edited.size() != original.size()) throw ShapeError("ID-c: clips differ in length");
  if (edited.empty()) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < edited.size(); ++i)
    acc += one_minus_cos(embed_one(edited[i], embedder), embed_one(original[i], embedder));
  return acc / static_cast<double>(edited.size());
}

double metric_id_maintenance(const std::vector<Tensor>& edited, const IdentityEmbedder& embedder) {
  if (edited.size() < 2) return 0.0;
  const auto first = embed_one(edited[0], embedder);
  double acc = 0.0;
  for (std::size_t i = 1; i < edited.size(); ++i) acc += one_minus_cos(embed_one(edited[i], embedder), first);
  return acc / static_cast<double>(edited.size() - 1);
}

}  // namespace sgx
