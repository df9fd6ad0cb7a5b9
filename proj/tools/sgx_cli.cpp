#include <omp.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "sgx/alignment.hpp"
#include "sgx/archive.hpp"
#include "sgx/config.hpp"
#include "sgx/image_io.hpp"
#include "sgx/imaging.hpp"
#include "sgx/inversion.hpp"
#include "sgx/manifest.hpp"
#include "sgx/training.hpp"
#include "sgx/verify.hpp"

using namespace sgx;
namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "JSON run configuration");
  app->add_option("--seed", c.seed, "run seed")->each([&c](const std::string&) { c.seed_set = true; });
  app->add_option("--out", c.out, "output directory");
}

RunConfig resolve(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : load_run_config(c.config);
  if (c.seed_set) cfg.seed = c.seed;
  if (!c.out.empty()) cfg.output_dir = c.out;
  if (cfg.threads > 0) omp_set_num_threads(cfg.threads);
  fs::create_directories(cfg.output_dir);
  return cfg;
}

std::string out_path(const RunConfig& cfg, const std::string& name) { return (fs::path(cfg.output_dir) / name).string(); }

std::shared_ptr<Generator> make_generator(const RunConfig& cfg, const std::string& weights) {
  const GeneratorSpec spec = cfg.generator_spec();
  if (!weights.empty()) return std::make_shared<Generator>(load_generator(weights, spec));
  std::cerr << "note: no generator weights given, using random weights from the seed\n";
  return std::make_shared<Generator>(spec, Rng(cfg.seed).substream("weights").seed());
}

std::shared_ptr<Encoder> make_encoder(const RunConfig& cfg, const Generator& g) {
  auto enc = std::make_shared<Encoder>(cfg.encoder_spec(), g, Rng(cfg.seed).substream("encoder").seed());
  if (!cfg.encoder_checkpoint.empty()) load_params(enc->params(), read_archive(cfg.encoder_checkpoint));
  else std::cerr << "note: no encoder checkpoint given, the encoder is untrained\n";
  return enc;
}

struct Prepared {
  Tensor x;
  img::PadInfo pad;
  bool padded = false;
};

Prepared prepare(const RunConfig& cfg, Tensor x) {
  Prepared p;
  if (x.h() % 32 == 0 && x.w() % 32 == 0) {
    p.x = std::move(x);
    return p;
  }
  if (cfg.pad_mode == "reject")
    throw InputContractError("input " + std::to_string(x.h()) + "x" + std::to_string(x.w()) +
                             " is not divisible by 32 and pad_mode is reject");
  p.x = img::pad_to_grid(x, 32, &p.pad);
  p.padded = true;
  return p;
}

// Output pixels per input pixel is M/8; un-padding needs it to be whole.
Tensor finish(const RunConfig& cfg, const Prepared& p, const Tensor& y) {
  const int M = cfg.generator_spec().scale_factor();
  if (!p.padded || M % 8 != 0) return y;
  return img::unpad(y, p.pad, M / 8);
}

Tensor read_vector(const std::string& path) {
  const TensorList t = path.size() > 12 && path.substr(path.size() - 12) == ".safetensors" ? read_safetensors(path)
                                                                                          : read_archive(path);
  if (t.empty()) throw ImportError("no tensor in " + path);
  Tensor v = t.front().second;
  if (v.ndim() == 1) v = v.reshaped({1, v.dim(0)});
  if (v.ndim() == 3 && v.dim(0) == 1) v = v.reshaped({v.dim(1), v.dim(2)});
  return v;
}

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stod(item));
  if (out.empty()) throw ArgumentError("empty list: " + s);
  return out;
}

std::string scale_tag(double s) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%+.2f", s);
  return buf;
}

Tensor infer(const RunConfig& cfg, const TaskModels& m, PairedSample s) {
  ag::NoGradGuard ng;
  return task_forward(cfg.task, m, {&s}, cfg.noise_field()).y_hat.value();
}

int cmd_verify(const Common& c, int seeds) {
  RunConfig cfg = resolve(c);
  VerifyOptions o;
  o.seeds = seeds;
  o.base_seed = cfg.seed;
  const VerifyReport r = run_verify(o);
  std::cout << r.to_text();
  std::ofstream(out_path(cfg, "verify_report.json")) << r.to_json() << '\n';
  write_resolved_config(cfg, cfg.output_dir);
  return r.all_passed() ? 0 : 1;
}

int cmd_invert(const Common& c, const std::string& image, const std::string& aligned, int steps, bool no_opt,
               const std::string& crop) {
  RunConfig cfg = resolve(c);
  if (steps >= 0) cfg.invert.steps = steps;
  auto g = make_generator(cfg, cfg.generator_weights);
  GeneratorEX gex(g);
  auto enc = make_encoder(cfg, *g);
  Prepared p = prepare(cfg, read_png(image));
  Tensor style;
  if (!crop.empty()) {
    const auto r = parse_list(crop);
    if (r.size() != 4) throw ArgumentError("--crop expects x,y,w,h");
    style = manual_crop(p.x, {static_cast<int>(r[1]), static_cast<int>(r[0]), static_cast<int>(r[3]),
                              static_cast<int>(r[2])}, cfg.invert.style_size);
  } else if (!aligned.empty()) {
    style = img::resize_bilinear(read_png(aligned), cfg.invert.style_size, cfg.invert.style_size);
  }
  RandomFeatureMetric metric;
  const NoiseField noise = cfg.noise_field();
  InversionResult r = invert_step1(*enc, gex, p.x, style.empty() ? nullptr : &style, metric, noise, cfg.invert);
  if (!no_opt) r = invert_step2(gex, p.x, r, metric, cfg.invert, noise);
  const std::string arch = out_path(cfg, "inversion.sgxa");
  write_archive(arch, {{"f", r.f}, {"w", r.w}});
  nlohmann::ordered_json meta{{"step1_loss", r.step1_loss},
                              {"step2_loss", r.step2_loss},
                              {"iterations", r.iterations_used},
                              {"trace", r.trace},
                              {"config_hash", std::hash<std::string>{}(dump_run_config(cfg))}};
  write_sidecar(arch, meta.dump(2));
  Tensor y;
  {
    ag::NoGradGuard ng;
    y = synthesize(gex, Var(r.f), Var(r.w), noise).value();
  }
  write_png(out_path(cfg, "reconstruction.png"), finish(cfg, p, y));
  write_resolved_config(cfg, cfg.output_dir);
  std::printf("step1 %.6f step2 %.6f\n", r.step1_loss, r.step2_loss);
  return 0;
}

int cmd_edit(const Common& c, const std::string& inversion, const std::string& vector, const std::string& scales) {
  RunConfig cfg = resolve(c);
  auto g = make_generator(cfg, cfg.generator_weights);
  GeneratorEX gex(g);
  const TensorList inv = read_archive(inversion);
  const Tensor f = find_tensor(inv, "f"), w = find_tensor(inv, "w");
  const Tensor v = read_vector(vector);
  for (double s : parse_list(scales)) {
    ag::NoGradGuard ng;
    Tensor y = synthesize(gex, Var(f), Var(edit_latent(w, v, s)), cfg.noise_field()).value();
    write_png(out_path(cfg, "edit_" + scale_tag(s) + ".png"), y);
  }
  write_resolved_config(cfg, cfg.output_dir);
  return 0;
}

int cmd_superres(const Common& c, const std::string& image, int factor) {
  RunConfig cfg = resolve(c);
  if (cfg.task.kind != TaskKind::SuperRes) cfg.set_task(TaskKind::SuperRes);
  cfg.task.superres_factor = factor;
  auto g = make_generator(cfg, cfg.generator_weights);
  TaskModels m;
  m.generator = std::make_shared<GeneratorEX>(g);
  m.encoder = make_encoder(cfg, *g);
  const Tensor lo = read_png(image);
  Prepared p = prepare(cfg, upsample_input(lo, factor));
  PairedSample s;
  s.x = p.padded ? img::downsample_area(p.x, factor) : lo;
  s.x_style = img::resize_bilinear(p.x, cfg.task.style_size, cfg.task.style_size);
  write_png(out_path(cfg, "superres.png"), finish(cfg, p, infer(cfg, m, s)));
  write_resolved_config(cfg, cfg.output_dir);
  return 0;
}

int cmd_translate(const Common& c, const std::string& input, const std::string& style, const std::string& kind,
                  const std::string& translator) {
  RunConfig cfg = resolve(c);
  const TaskKind k = kind == "mask" ? TaskKind::Mask2Face : TaskKind::Sketch2Face;
  if (cfg.task.kind != k) cfg.set_task(k);
  auto g = make_generator(cfg, cfg.generator_weights);
  TaskModels m;
  m.generator = std::make_shared<GeneratorEX>(g);
  m.encoder = make_encoder(cfg, *g);
  m.translator = std::make_shared<TranslationNet>(cfg.task.translation_channels(), cfg.task.translation_width,
                                                  Rng(cfg.seed).substream("translation").seed());
  if (!translator.empty()) load_params(m.translator->params(), read_archive(translator));
  Tensor x;
  if (k == TaskKind::Sketch2Face) {
    x = read_png(input, 1);
  } else {
    // Label image: grey level k * 255 / (classes - 1) marks class k.
    Tensor lab = read_png(input, 1);
    const int K = cfg.task.mask_classes;
    x = Tensor({1, K, lab.h(), lab.w()});
    for (int y = 0; y < lab.h(); ++y)
      for (int xx = 0; xx < lab.w(); ++xx) {
        const int cls = std::clamp(static_cast<int>(std::lround((lab.at(0, 0, y, xx) + 1.0f) / 2.0f * (K - 1))), 0, K - 1);
        x.at(0, cls, y, xx) = 1.0f;
      }
  }
  Prepared p = prepare(cfg, x);
  PairedSample s;
  s.x = p.x;
  s.y_style = style.empty() ? Tensor({1, 3, cfg.task.style_size, cfg.task.style_size})
                            : img::resize_bilinear(read_png(style), cfg.task.style_size, cfg.task.style_size);
  write_png(out_path(cfg, "translated.png"), finish(cfg, p, infer(cfg, m, s)));
  write_resolved_config(cfg, cfg.output_dir);
  return 0;
}

int cmd_video(const Common& c, const std::string& frames, const std::string& vector, double scale, bool toonify,
              const std::string& prime) {
  RunConfig cfg = resolve(c);
  const TaskKind k = toonify ? TaskKind::Toonify : TaskKind::VideoEdit;
  if (cfg.task.kind != k) cfg.set_task(k);
  auto g = make_generator(cfg, cfg.generator_weights);
  TaskModels m;
  m.encoder = make_encoder(cfg, *g);
  if (toonify) {
    const std::string pw = prime.empty() ? cfg.generator_prime_weights : prime;
    if (pw.empty()) throw ConfigError("toonification needs fine-tuned generator weights (--prime)");
    m.generator = std::make_shared<GeneratorEX>(std::make_shared<Generator>(load_generator(pw, cfg.generator_spec())));
  } else {
    m.generator = std::make_shared<GeneratorEX>(g);
  }
  Tensor v;
  if (!toonify) {
    const Tensor raw = read_vector(vector);
    const int L = cfg.generator_spec().num_style_layers();
    v = edit_latent(Tensor({1, L, raw.dim(1)}), raw, scale).reshaped({L, raw.dim(1)});
  }
  VideoClip in = read_frame_dir(frames), out;
  out.fps = in.fps;
  out.frames.resize(in.frames.size());
  for (std::size_t i = 0; i < in.frames.size(); ++i) {
    Prepared p = prepare(cfg, in.frames[i]);
    PairedSample s;
    s.x = p.x;
    s.x_style = img::resize_bilinear(p.x, cfg.task.style_size, cfg.task.style_size);
    s.v = v;
    out.frames[i] = finish(cfg, p, infer(cfg, m, s));
  }
  write_frame_dir(out_path(cfg, "frames"), out);
  write_resolved_config(cfg, cfg.output_dir);
  return 0;
}

int cmd_train(const Common& c, const std::string& task, int steps, int pairs, const std::string& vector,
              const std::string& manifest) {
  RunConfig cfg = resolve(c);
  if (!task.empty()) cfg.set_task(parse_task(task));
  if (steps >= 0) cfg.train_steps = steps;
  if (pairs > 0) cfg.train_pairs = pairs;
  auto g = make_generator(cfg, cfg.generator_weights);
  std::shared_ptr<Generator> gp;
  if (cfg.task.kind == TaskKind::Toonify && manifest.empty()) {
    if (cfg.generator_prime_weights.empty()) throw ConfigError("toonify training needs generator.prime_weights");
    gp = std::make_shared<Generator>(load_generator(cfg.generator_prime_weights, cfg.generator_spec()));
  }
  Tensor v;
  if (cfg.task.kind == TaskKind::VideoEdit && manifest.empty()) {
    if (vector.empty()) throw ConfigError("video editing training needs --vector");
    v = read_vector(vector);
  }
  const Rng root(cfg.seed);
  auto data = manifest.empty() ? synthesize_pairs(cfg.task, *g, gp.get(), v.empty() ? nullptr : &v,
                                                  cfg.train_pairs, root.substream("data").seed())
                               : load_manifest_pairs(cfg.task, g->spec(), read_manifest(manifest));
  std::shared_ptr<const GeneratorEX> gen = std::make_shared<GeneratorEX>(gp ? gp : g);
  TaskModels m = make_task_models(cfg.task, gen, root.substream("models").seed(), cfg.encoder_spec());
  if (!cfg.encoder_checkpoint.empty()) load_params(m.encoder->params(), read_archive(cfg.encoder_checkpoint));
  RandomFeatureMetric metric;
  RandomIdentityEmbedder embedder;
  std::ofstream log(out_path(cfg, "train_log.csv"));
  log << train_log_csv_header();
  auto res = train_task(cfg.task, cfg.loss, m, data, cfg.train_steps, root.substream("train").seed(), metric,
                        &embedder, [&](const TrainLog& l) {
                          log << train_log_csv_row(l) << std::flush;
                          std::printf("step %4d total %.5f\n", l.step, l.total);
                        });
  write_archive(out_path(cfg, "encoder.sgxa"), params_to_list(m.encoder->params()));
  if (m.translator) write_archive(out_path(cfg, "translator.sgxa"), params_to_list(m.translator->params()));
  if (m.discriminator) write_archive(out_path(cfg, "discriminator.sgxa"), params_to_list(m.discriminator->params()));
  nlohmann::ordered_json summary{{"eval_before", res.eval_before}, {"eval_after", res.eval_after},
                                 {"generator_checksum", res.generator_checksum_after}};
  std::ofstream(out_path(cfg, "train_summary.json")) << summary.dump(2) << '\n';
  write_resolved_config(cfg, cfg.output_dir);
  std::printf("eval before %.5f after %.5f\n", res.eval_before, res.eval_after);
  return 0;
}

int cmd_import(const Common& c, const std::string& checkpoint, const std::string& mapping) {
  RunConfig cfg = resolve(c);
  const GeneratorSpec spec = cfg.generator_spec();
  const MappingTable table = mapping.empty() ? stylegan2_mapping_table(spec) : read_mapping_table(mapping);
  const Generator g = import_generator(read_safetensors(checkpoint), table, spec, cfg.seed);
  ag::NoGradGuard ng;
  Rng rng = Rng(cfg.seed).substream("probe");
  Tensor probe = synthesize_baseline(g, map_z_to_w(g, Var(rng.randn({1, spec.latent_dim}))), NoiseField::zero()).value();
  if (!all_finite(probe)) throw ImportError("imported generator produces non-finite images");
  const std::string arch = out_path(cfg, "generator.sgxa");
  save_generator(arch, g);
  write_sidecar(arch, nlohmann::ordered_json{{"resolution", spec.output_resolution},
                                             {"parameters", g.parameter_count()},
                                             {"source", checkpoint}}
                          .dump(2));
  write_resolved_config(cfg, cfg.output_dir);
  std::printf("imported %zu parameters\n", g.parameter_count());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Variable-resolution StyleGAN2 refactoring, encoder and editing tools"};
  app.require_subcommand(1);

  Common c;
  int seeds = 5, steps = -1, pairs = 0, factor = 8;
  bool no_opt = false;
  double scale = 1.0;
  std::string image, aligned, crop, inversion, vector, scales = "0,1", input, style, kind = "sketch", frames, prime,
                                                        task, checkpoint, mapping, translator, manifest;

  auto* verify = app.add_subcommand("verify", "check the refactoring invariants");
  add_common(verify, c);
  verify->add_option("--seeds", seeds, "seeds per resolution");

  auto* invert = app.add_subcommand("invert", "two-step inversion of an image");
  add_common(invert, c);
  invert->add_option("--image", image)->required();
  invert->add_option("--aligned", aligned, "aligned face crop for the style encoder");
  invert->add_option("--steps", steps, "Step II iterations");
  invert->add_flag("--no-optimize", no_opt, "Step I only");
  invert->add_option("--crop", crop, "manual crop x,y,w,h for the style encoder");

  auto* edit = app.add_subcommand("edit", "apply an editing vector at several scales");
  add_common(edit, c);
  edit->add_option("--inversion", inversion)->required();
  edit->add_option("--vector", vector)->required();
  edit->add_option("--scales", scales, "comma-separated list");

  auto* sr = app.add_subcommand("superres", "super-resolve a low-resolution face");
  add_common(sr, c);
  sr->add_option("--image", image)->required();
  sr->add_option("--factor", factor);

  auto* tr = app.add_subcommand("translate", "sketch or mask to face");
  add_common(tr, c);
  tr->add_option("--input", input)->required();
  tr->add_option("--style", style, "image supplying colour and texture");
  tr->add_option("--kind", kind)->check(CLI::IsMember({"sketch", "mask"}));
  tr->add_option("--translator", translator, "trained translation network");

  auto* ve = app.add_subcommand("video-edit", "edit every frame of a clip");
  add_common(ve, c);
  ve->add_option("--frames", frames)->required();
  ve->add_option("--vector", vector)->required();
  ve->add_option("--scale", scale);

  auto* toon = app.add_subcommand("toonify", "stylise every frame of a clip");
  add_common(toon, c);
  toon->add_option("--frames", frames)->required();
  toon->add_option("--prime", prime, "fine-tuned generator archive");

  auto* train = app.add_subcommand("train", "train a task encoder on synthetic pairs");
  add_common(train, c);
  train->add_option("--task", task);
  train->add_option("--steps", steps);
  train->add_option("--pairs", pairs);
  train->add_option("--vector", vector, "editing vector for video editing");
  train->add_option("--manifest", manifest, "dataset manifest; synthetic pairs when omitted");

  auto* imp = app.add_subcommand("import-weights", "convert an external StyleGAN2 checkpoint");
  add_common(imp, c);
  imp->add_option("--checkpoint", checkpoint)->required();
  imp->add_option("--mapping", mapping, "tab-separated key mapping table");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*verify) return cmd_verify(c, seeds);
    if (*invert) return cmd_invert(c, image, aligned, steps, no_opt, crop);
    if (*edit) return cmd_edit(c, inversion, vector, scales);
    if (*sr) return cmd_superres(c, image, factor);
    if (*tr) return cmd_translate(c, input, style, kind, translator);
    if (*ve) return cmd_video(c, frames, vector, scale, false, "");
    if (*toon) return cmd_video(c, frames, "", 1.0, true, prime);
    if (*train) return cmd_train(c, task, steps, pairs, vector, manifest);
    if (*imp) return cmd_import(c, checkpoint, mapping);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
