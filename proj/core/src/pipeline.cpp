#include "mvprompt/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mvprompt/errors.hpp"
#include "mvprompt/image_io.hpp"
#include "mvprompt/rng.hpp"

namespace mvp {

namespace fs = std::filesystem;

std::string_view mode_name(RunMode mode) {
  switch (mode) {
    case RunMode::mvgen: return "mvgen";
    case RunMode::gen3d: return "gen3d";
    case RunMode::eval: return "eval";
  }
  return "?";
}

RunMode parse_mode(std::string_view name) {
  if (name == "mvgen") return RunMode::mvgen;
  if (name == "gen3d") return RunMode::gen3d;
  if (name == "eval") return RunMode::eval;
  throw ConfigError("unknown mode '" + std::string(name) + "' (expected mvgen, gen3d or eval)");
}

namespace {

std::string_view guidance_name(SdsGuidance g) { return g == SdsGuidance::model ? "model" : "pull"; }

SdsGuidance parse_guidance(std::string_view name) {
  if (name == "model") return SdsGuidance::model;
  if (name == "pull") return SdsGuidance::pull;
  throw ConfigError("unknown sds guidance '" + std::string(name) + "' (expected model or pull)");
}

std::string path_string(const std::optional<fs::path>& p) { return p ? p->generic_string() : std::string(); }

std::optional<fs::path> optional_path(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  const std::string s = j[key].get<std::string>();
  if (s.empty()) return std::nullopt;
  return fs::path(s);
}

}  // namespace

std::string RunManifest::run_name() const {
  const std::string stem = image.stem().string();
  return stem.empty() ? "run" : stem;
}

void RunManifest::validate() const {
  const ControllerConfig cfg = controller();
  (void)cfg;
  if (out_dir.empty()) throw ConfigError("manifest: output directory is required");
  if (image.empty()) throw ConfigError("manifest: --image is required");
  if (mode == RunMode::eval && !images_dir) throw ConfigError("manifest: eval mode needs --images <dir>");
  if (text.empty()) throw ConfigError("manifest: text prompt must not be empty");
  if (timesteps < 2) throw ConfigError("manifest: need at least 2 timesteps");
  if (steps < 1 || steps > timesteps) throw ConfigError("manifest: steps must be in [1, timesteps]");
  if (iterations < 0) throw ConfigError("manifest: iterations must be nonnegative");
  if (render_samples < 1) throw ConfigError("manifest: render samples must be positive");
  if (turntable_views < 1) throw ConfigError("manifest: need at least one turntable view");
  const int ds = dims.encoder.downsample;
  if (image_size <= 0 || image_size % ds != 0) {
    throw ConfigError("manifest: image size must be a positive multiple of " + std::to_string(ds));
  }
  if (!(guidance > 0.0) || !(learning_rate > 0.0)) throw ConfigError("manifest: guidance and learning rate must be > 0");
}

std::string RunManifest::to_json() const {
  nlohmann::ordered_json j;
  j["mode"] = mode_name(mode);
  j["seed"] = seed;
  j["config"] = config;
  j["text"] = text;
  j["image"] = image.generic_string();
  j["out_dir"] = out_dir.generic_string();
  j["real_views"] = path_string(real_views);
  j["images_dir"] = path_string(images_dir);
  j["checkpoint"] = path_string(checkpoint);
  j["weights_seed"] = weights_seed;
  j["sampling"] = {{"timesteps", timesteps}, {"steps", steps}, {"guidance", guidance}};
  j["sds"] = {{"iterations", iterations},
              {"guidance", guidance_name(sds_guidance)},
              {"learning_rate", learning_rate},
              {"render_samples", render_samples},
              {"turntable_views", turntable_views},
              {"field_frequencies", field.frequencies},
              {"field_hidden", field.hidden}};
  const EncoderDims& e = dims.encoder;
  const UNetDims& u = dims.unet;
  j["dims"] = {{"image_size", image_size},
               {"eval_size", eval_size},
               {"encoder_input", e.image_size},
               {"patch", e.patch_size},
               {"d_enc", e.d_enc},
               {"d_ctx", e.d_ctx},
               {"local_tokens", e.local_tokens},
               {"latent_channels", e.latent_channels},
               {"downsample", e.downsample},
               {"text_tokens", e.text_tokens},
               {"unet_base", u.base_channels},
               {"unet_mid", u.mid_channels},
               {"unet_groups", u.groups},
               {"d_emb", u.d_emb}};
  return j.dump(2) + "\n";
}

RunManifest RunManifest::from_json(std::string_view text_json) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text_json);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("manifest: invalid JSON: ") + e.what());
  }
  try {
    RunManifest m;
    m.mode = parse_mode(j.at("mode").get<std::string>());
    m.seed = j.at("seed").get<std::uint64_t>();
    m.config = j.at("config").get<std::string>();
    m.text = j.at("text").get<std::string>();
    m.image = j.at("image").get<std::string>();
    m.out_dir = j.at("out_dir").get<std::string>();
    m.real_views = optional_path(j, "real_views");
    m.images_dir = optional_path(j, "images_dir");
    m.checkpoint = optional_path(j, "checkpoint");
    m.weights_seed = j.at("weights_seed").get<std::uint64_t>();
    const auto& s = j.at("sampling");
    m.timesteps = s.at("timesteps").get<int>();
    m.steps = s.at("steps").get<int>();
    m.guidance = s.at("guidance").get<double>();
    const auto& d = j.at("sds");
    m.iterations = d.at("iterations").get<int>();
    m.sds_guidance = parse_guidance(d.at("guidance").get<std::string>());
    m.learning_rate = d.at("learning_rate").get<double>();
    m.render_samples = d.at("render_samples").get<int>();
    m.turntable_views = d.at("turntable_views").get<int>();
    m.field.frequencies = d.at("field_frequencies").get<int>();
    m.field.hidden = d.at("field_hidden").get<int>();
    const auto& k = j.at("dims");
    m.image_size = k.at("image_size").get<int>();
    m.eval_size = k.at("eval_size").get<int>();
    m.dims.encoder.image_size = k.at("encoder_input").get<int>();
    m.dims.encoder.patch_size = k.at("patch").get<int>();
    m.dims.encoder.d_enc = k.at("d_enc").get<int>();
    m.dims.encoder.d_ctx = k.at("d_ctx").get<int>();
    m.dims.encoder.local_tokens = k.at("local_tokens").get<int>();
    m.dims.encoder.latent_channels = k.at("latent_channels").get<int>();
    m.dims.encoder.downsample = k.at("downsample").get<int>();
    m.dims.encoder.text_tokens = k.at("text_tokens").get<int>();
    m.dims.unet.latent_channels = m.dims.encoder.latent_channels;
    m.dims.unet.d_ctx = m.dims.encoder.d_ctx;
    m.dims.unet.base_channels = k.at("unet_base").get<int>();
    m.dims.unet.mid_channels = k.at("unet_mid").get<int>();
    m.dims.unet.groups = k.at("unet_groups").get<int>();
    m.dims.unet.d_emb = k.at("d_emb").get<int>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("manifest: ") + e.what());
  }
}

RunManifest RunManifest::load(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open manifest " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

namespace {

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError("run config: bad value for " + key + ": '" + value + "'");
  return out;
}

}  // namespace

void apply_run_config(RunManifest& m, const RunConfigFile& file) {
  for (const auto& [key, value] : file.entries) {
    if (key == "mode") m.mode = parse_mode(value);
    else if (key == "seed") m.seed = parse_number<std::uint64_t>(key, value);
    else if (key == "config") m.config = parse_controller_config(value).canonical();
    else if (key == "text") m.text = value;
    else if (key == "image") m.image = value;
    else if (key == "out_dir") m.out_dir = value;
    else if (key == "real_views") m.real_views = fs::path(value);
    else if (key == "images") m.images_dir = fs::path(value);
    else if (key == "checkpoint") m.checkpoint = fs::path(value);
    else if (key == "weights_seed") m.weights_seed = parse_number<std::uint64_t>(key, value);
    else if (key == "steps") m.steps = parse_number<int>(key, value);
    else if (key == "guidance") m.guidance = parse_number<double>(key, value);
    else if (key == "iterations") m.iterations = parse_number<int>(key, value);
    else if (key == "sds_guidance") m.sds_guidance = parse_guidance(value);
    else if (key == "learning_rate") m.learning_rate = parse_number<double>(key, value);
    else if (key == "render_samples") m.render_samples = parse_number<int>(key, value);
    else if (key == "turntable_views") m.turntable_views = parse_number<int>(key, value);
    else if (key == "image_size") m.image_size = parse_number<int>(key, value);
    else if (key == "latent_size") m.image_size = parse_number<int>(key, value) * m.dims.encoder.downsample;
    else if (key == "eval_size") m.eval_size = parse_number<int>(key, value);
    else throw ConfigError("run config: unknown key '" + key + "'");
  }
}

RunConfigFile load_run_config(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open run config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return RunConfigFile::parse(ss.str());
}

fs::path default_output_root() {
  if (const char* env = std::getenv("MVPROMPT_OUT_ROOT"); env != nullptr && *env != '\0') return fs::path(env);
  return fs::path("mvprompt_out");
}

MultiViewModel load_model(const RunManifest& manifest) {
  MultiViewModel model = MultiViewModel::toy(manifest.dims, manifest.weights_seed);
  if (manifest.checkpoint) model.load(Checkpoint::load(*manifest.checkpoint));
  return model;
}

std::vector<Image> decode_views(const MultiViewModel& model, const MultiViewLatent& views) {
  const FrameShape& s = views.shape();
  std::vector<Image> out;
  for (int v = 0; v < MultiViewLatent::kViews; ++v) {
    PixelLatent z(s.channels, s.height, s.width);
    const auto src = views.data().frame(0, v);
    std::copy(src.begin(), src.end(), z.values.begin());
    out.push_back(decode_pixel_latent(model.encoders, z));
  }
  return out;
}

PromptSet generate_prompt_set(const Image& front_image, const MultiViewModel& model, const NoiseSchedule& schedule,
                              std::uint64_t seed, int steps, std::string_view text, double guidance) {
  const ImagePrompt front(ViewLabel::front, front_image);
  const PromptSet single({front});
  const auto cams = model.rig_embeddings();
  const MultiViewLatent views = ddim_sample(model, schedule, steps, derive_seed(seed, "prompt_views"), cams,
                                            encode_text(model.encoders, text), single,
                                            ControllerConfig::single_image(), guidance);
  const std::vector<Image> decoded = decode_views(model, views);

  std::vector<ImagePrompt> prompts{front};
  for (ViewLabel label : kCanonicalViews) {
    if (label == ViewLabel::front) continue;
    Image img = quantize8(decoded[static_cast<std::size_t>(rig_slot(label))]);
    if (img.width != front_image.width) img = quantize8(resize_bilinear(img, front_image.width, front_image.height));
    prompts.emplace_back(label, std::move(img));
  }
  return PromptSet(std::move(prompts));
}

namespace {

std::vector<PngText> png_tags(const RunManifest& m) {
  return {{"mvprompt:seed", std::to_string(m.seed)},
          {"mvprompt:config", m.config},
          {"mvprompt:mode", std::string(mode_name(m.mode))}};
}

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

/// Creates the output directory and writes manifest.json.
fs::path begin_run(const RunManifest& m, RunOutputs& out) {
  m.validate();
  std::error_code ec;
  fs::create_directories(m.out_dir, ec);
  if (ec) throw IoError("cannot create output directory " + m.out_dir.string() + ": " + ec.message());
  const fs::path p = m.out_dir / "manifest.json";
  write_text_file(p, m.to_json());
  out.files.push_back(p);
  return p;
}

void emit_png(const RunManifest& m, RunOutputs& out, const std::string& name, const Image& img) {
  const fs::path p = m.out_dir / name;
  const auto tags = png_tags(m);
  write_png(p, img, tags);
  out.files.push_back(p);
}

void emit_report(const RunManifest& m, RunOutputs& out) {
  const fs::path p = m.out_dir / "report.json";
  write_text_file(p, report_to_json(out.report));
  out.files.push_back(p);
}

Image working_image(const Image& img, int size) {
  if (img.width == size && img.height == size) return img;
  return quantize8(resize_bilinear(img, size, size));
}

Image load_front(const RunManifest& m) { return working_image(read_png(m.image), m.image_size); }

/// Prompt set for the manifest's config: front only when nothing else is
/// needed, user-supplied views when given, generated views otherwise.
PromptSet build_prompt_set(const RunManifest& m, const Image& front, const MultiViewModel& model,
                           const NoiseSchedule& schedule) {
  const ControllerConfig cfg = m.controller();
  const ViewSet needed = cfg.required_views();
  if (needed == ViewSet{ViewLabel::front}) return PromptSet({ImagePrompt(ViewLabel::front, front)});
  if (m.real_views) {
    std::vector<ImagePrompt> prompts{ImagePrompt(ViewLabel::front, front)};
    for (ViewLabel label : kCanonicalViews) {
      if (label == ViewLabel::front) continue;
      const fs::path p = *m.real_views / (std::string(view_name(label)) + ".png");
      if (fs::exists(p)) prompts.emplace_back(label, working_image(read_png(p), m.image_size));
    }
    PromptSet set(std::move(prompts));
    cfg.validate_against(set);
    return set;
  }
  return generate_prompt_set(front, model, schedule, m.seed, m.steps, m.text, m.guidance);
}

EvalBackends evaluator(const RunManifest& m) {
  return EvalBackends::toy(derive_seed(m.weights_seed, "evaluator"), m.eval_size);
}

MetricReport score(const RunManifest& m, std::span<const Image> images, const Image& prompt_image,
                   const EvalBackends& eval) {
  const MetricSeries qis = quality_inception_score(images, *eval.classifier);
  const MetricSeries tx = clip_text_score(images, m.text, *eval.text_embedder, *eval.image_embedder);
  const MetricSeries im = clip_image_score(images, prompt_image, *eval.image_embedder);
  MetricReport r = build_report(m.config, qis, tx, im);
  r.seed = m.seed;
  return r;
}

/// Quantised views resized to the evaluator input.
std::vector<Image> eval_inputs(std::span<const Image> views, int size) {
  std::vector<Image> out;
  for (const Image& v : views) out.push_back(working_image(quantize8(v), size));
  return out;
}

void finish_mv_run(const RunManifest& m, RunOutputs& out, const std::vector<Image>& views, const Image& front) {
  for (std::size_t i = 0; i < views.size(); ++i) {
    emit_png(m, out, m.run_name() + "_" + std::string(view_name(kRigOrder[i])) + ".png", views[i]);
  }
  emit_png(m, out, "grid.png", tile_grid(views, 2));
  out.views = views;
  const std::vector<Image> scored = eval_inputs(views, m.eval_size);
  out.report = score(m, scored, working_image(front, m.eval_size), evaluator(m));
  emit_report(m, out);
}

RunManifest with_canonical_config(RunManifest m) {
  m.config = m.controller().canonical();
  return m;
}

}  // namespace

RunOutputs run_mv_generation(const RunManifest& manifest) {
  const MultiViewModel model = load_model(manifest);
  return run_mv_generation(manifest, model);
}

RunOutputs run_mv_generation(const RunManifest& manifest, const MultiViewModel& model) {
  const RunManifest m = with_canonical_config(manifest);
  if (m.mode != RunMode::mvgen) throw ConfigError("run_mv_generation: manifest mode is " + std::string(mode_name(m.mode)));
  RunOutputs out;
  begin_run(m, out);
  const NoiseSchedule schedule = NoiseSchedule::linear(m.timesteps);
  const Image front = load_front(m);
  const PromptSet prompts = build_prompt_set(m, front, model, schedule);
  const auto cams = model.rig_embeddings();
  const MultiViewLatent views = ddim_sample(model, schedule, m.steps, derive_seed(m.seed, "mvgen"), cams,
                                            encode_text(model.encoders, m.text), prompts, m.controller(), m.guidance);
  finish_mv_run(m, out, decode_views(model, views), front);
  return out;
}

RunOutputs run_baseline_generation(const RunManifest& manifest, const MultiViewModel& model) {
  const RunManifest m = with_canonical_config(manifest);
  RunOutputs out;
  begin_run(m, out);
  const NoiseSchedule schedule = NoiseSchedule::linear(m.timesteps);
  const Image front = load_front(m);
  const auto cams = model.rig_embeddings();
  const MultiViewLatent views =
      baseline_ddim_sample(model, schedule, m.steps, derive_seed(m.seed, "mvgen"), cams,
                           encode_text(model.encoders, m.text), ImagePrompt(ViewLabel::front, front), m.guidance);
  finish_mv_run(m, out, decode_views(model, views), front);
  return out;
}

RunOutputs run_3d_generation(const RunManifest& manifest) {
  const MultiViewModel model = load_model(manifest);
  return run_3d_generation(manifest, model);
}

RunOutputs run_3d_generation(const RunManifest& manifest, const MultiViewModel& model) {
  const RunManifest m = with_canonical_config(manifest);
  if (m.mode != RunMode::gen3d) throw ConfigError("run_3d_generation: manifest mode is " + std::string(mode_name(m.mode)));
  RunOutputs out;
  begin_run(m, out);
  const NoiseSchedule schedule = NoiseSchedule::linear(m.timesteps);
  const Image front = load_front(m);
  const LatentCodec& codec = model.encoders.codec();

  RenderSettings settings;
  settings.resolution = m.image_size;
  settings.samples = m.render_samples;

  std::unique_ptr<NoisePredictor> guide;
  if (m.sds_guidance == SdsGuidance::pull) {
    const PixelLatent z = codec.encode(front);
    FrameTensor target({1, MultiViewLatent::kViews, z.channels, z.height, z.width});
    for (int v = 0; v < MultiViewLatent::kViews; ++v) std::copy(z.values.begin(), z.values.end(), target.frame(0, v).begin());
    guide = std::make_unique<TargetPullPredictor>(std::move(target), schedule);
  } else {
    const PromptSet prompts = build_prompt_set(m, front, model, schedule);
    const auto cams = model.rig_embeddings();
    guide = std::make_unique<ConditionedDenoiser>(
        model, make_conditioning(model, cams, encode_text(model.encoders, m.text), prompts, m.controller()),
        m.guidance);
  }

  SDSConfig sds;
  sds.iterations = m.iterations;
  sds.learning_rate = m.learning_rate;
  sds.final_learning_rate = m.learning_rate;
  sds.t_max = std::min(sds.t_max, m.timesteps - 1);
  sds.t_min = std::min(sds.t_min, sds.t_max);

  const RadianceField initial(m.field, derive_seed(m.seed, "field"));
  const auto rig = orthogonal_camera_rig();
  out.front_mae_initial = mean_abs_error(quantize8(render(initial, rig[0], settings).image), front);

  OptimizationResult result = optimize_nerf(initial, *guide, schedule, sds, codec, settings, m.seed);
  out.log = result.log;

  {
    const fs::path p = m.out_dir / "optimization.csv";
    std::string csv = "iteration,residual_norm,update_norm\n";
    char line[128];
    for (const auto& e : result.log) {
      std::snprintf(line, sizeof line, "%d,%.17g,%.17g\n", e.iteration, e.residual_norm, e.update_norm);
      csv += line;
    }
    write_text_file(p, csv);
    out.files.push_back(p);
  }

  std::vector<Image> views;
  for (std::size_t i = 0; i < rig.size(); ++i) {
    views.push_back(quantize8(render(result.field, rig[i], settings).image));
    emit_png(m, out, m.run_name() + "_" + std::string(view_name(kRigOrder[i])) + ".png", views.back());
  }
  out.front_mae_final = mean_abs_error(views[0], front);
  for (int k = 0; k < m.turntable_views; ++k) {
    const int deg = static_cast<int>(std::lround(360.0 * k / m.turntable_views));
    const CameraPose pose = CameraPose::orbit(deg, kRigElevation, kRigRadius);
    char name[64];
    std::snprintf(name, sizeof name, "_az%03d.png", deg);
    emit_png(m, out, m.run_name() + name, render(result.field, pose, settings).image);
  }
  out.views = views;
  out.report = score(m, eval_inputs(views, m.eval_size), working_image(front, m.eval_size), evaluator(m));
  emit_report(m, out);
  return out;
}

RunOutputs run_eval(const RunManifest& manifest) {
  const RunManifest m = with_canonical_config(manifest);
  if (m.mode != RunMode::eval) throw ConfigError("run_eval: manifest mode is " + std::string(mode_name(m.mode)));
  m.validate();
  if (!fs::is_directory(*m.images_dir)) throw IoError("eval: not a directory: " + m.images_dir->string());
  std::vector<fs::path> paths;
  for (const auto& entry : fs::directory_iterator(*m.images_dir)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (ext == ".png") paths.push_back(entry.path());
  }
  if (paths.empty()) throw IoError("eval: no PNG images in " + m.images_dir->string());
  std::sort(paths.begin(), paths.end());

  RunOutputs out;
  begin_run(m, out);
  int resized = 0;
  std::vector<Image> images;
  for (const auto& p : paths) {
    const Image img = read_png(p);
    if (img.width != m.eval_size || img.height != m.eval_size) ++resized;
    images.push_back(working_image(img, m.eval_size));
  }
  const Image prompt = working_image(read_png(m.image), m.eval_size);
  out.report = score(m, images, prompt, evaluator(m));
  out.report.eval_size = m.eval_size;
  out.report.resized = resized;
  out.views = std::move(images);
  emit_report(m, out);
  return out;
}

RunOutputs run(const RunManifest& manifest) {
  switch (manifest.mode) {
    case RunMode::mvgen: return run_mv_generation(manifest);
    case RunMode::gen3d: return run_3d_generation(manifest);
    case RunMode::eval: return run_eval(manifest);
  }
  throw ConfigError("unknown mode");
}

}  // namespace mvp
