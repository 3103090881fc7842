#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "mvprompt/errors.hpp"
#include "mvprompt/metrics.hpp"
#include "mvprompt/pipeline.hpp"

namespace {

struct Options {
  std::string config = "pixel(f) + local(f)";
  std::string image;
  std::string out;
  std::string text = "an object";
  std::string real_views;
  std::string images;
  std::string checkpoint;
  std::string run_config;
  std::string sds_guidance = "model";
  std::uint64_t seed = 0;
  std::uint64_t weights_seed = 0;
  int steps = 20;
  int iters = 100;
  int samples = 32;
  int turntable = 8;
  double guidance = 1.0;
  double lr = 2e-2;
};

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config, "controller config, e.g. \"pixel(f) + local(fb)\"")->capture_default_str();
  cmd->add_option("--image", o.image, "front prompt image (PNG)");
  cmd->add_option("--run-config", o.run_config, "key = value run configuration; flags given on the command line win");
  cmd->add_option("--seed", o.seed, "root seed")->capture_default_str();
  cmd->add_option("--out", o.out, "output directory (default: $MVPROMPT_OUT_ROOT/<image>-<mode>-s<seed>)");
  cmd->add_option("--text", o.text, "text prompt")->capture_default_str();
  cmd->add_option("--checkpoint", o.checkpoint, "model weights; toy weights when omitted");
  cmd->add_option("--weights-seed", o.weights_seed, "seed of the toy weights")->capture_default_str();
}

void add_generation(CLI::App* cmd, Options& o) {
  cmd->add_option("--steps", o.steps, "DDIM steps")->capture_default_str()->check(CLI::PositiveNumber);
  cmd->add_option("--guidance", o.guidance, "classifier-free guidance scale")->capture_default_str();
  cmd->add_option("--real-views", o.real_views, "directory with back.png/left.png/right.png to use instead of generated views");
}

mvp::RunManifest to_manifest(mvp::RunMode mode, const Options& o, const CLI::App& cmd) {
  mvp::RunManifest m;
  m.mode = mode;
  if (!o.run_config.empty()) {
    mvp::apply_run_config(m, mvp::load_run_config(o.run_config));
    if (m.mode != mode) throw mvp::ConfigError("run config mode does not match the subcommand");
  }
  const auto given = [&](const char* flag) { return !o.run_config.empty() ? cmd.count(flag) > 0 : true; };
  if (given("--seed")) m.seed = o.seed;
  if (given("--config")) m.config = mvp::parse_controller_config(o.config).canonical();
  if (given("--text")) m.text = o.text;
  if (given("--image")) m.image = o.image;
  if (given("--weights-seed")) m.weights_seed = o.weights_seed;
  if (mode != mvp::RunMode::eval) {
    if (given("--steps")) m.steps = o.steps;
    if (given("--guidance")) m.guidance = o.guidance;
  }
  if (mode == mvp::RunMode::gen3d) {
    if (given("--iters")) m.iterations = o.iters;
    if (given("--lr")) m.learning_rate = o.lr;
    if (given("--samples")) m.render_samples = o.samples;
    if (given("--turntable")) m.turntable_views = o.turntable;
    if (given("--sds-guidance")) m.sds_guidance = o.sds_guidance == "pull" ? mvp::SdsGuidance::pull : mvp::SdsGuidance::model;
  }
  if (!o.real_views.empty()) m.real_views = o.real_views;
  if (!o.images.empty()) m.images_dir = o.images;
  if (!o.checkpoint.empty()) m.checkpoint = o.checkpoint;
  if (!o.out.empty()) {
    m.out_dir = o.out;
  } else if (m.out_dir.empty()) {
    m.out_dir = mvp::default_output_root() /
                (m.run_name() + "-" + std::string(mvp::mode_name(mode)) + "-s" + std::to_string(m.seed));
  }
  if (m.image.empty()) throw mvp::ConfigError("--image is required (directly or via --run-config)");
  return m;
}

int execute(const mvp::RunManifest& m) {
  const mvp::RunOutputs out = mvp::run(m);
  for (const auto& f : out.files) std::cout << "wrote " << f.generic_string() << "\n";
  if (m.mode == mvp::RunMode::gen3d) {
    std::printf("front-view MAE: %.6f -> %.6f over %d iterations\n", out.front_mae_initial, out.front_mae_final,
                m.iterations);
  }
  const mvp::MetricReport reports[] = {out.report};
  std::cout << "\n" << mvp::report_table(reports, std::string(mvp::mode_name(m.mode)) + " (seed " + std::to_string(m.seed) + ")");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-view prompting: multi-view generation, SDS 3D generation and evaluation"};
  app.require_subcommand(1);
  Options o;

  auto* mvgen = app.add_subcommand("mvgen", "generate four orthogonal views from a front image");
  add_common(mvgen, o);
  add_generation(mvgen, o);

  auto* gen3d = app.add_subcommand("gen3d", "optimise a radiance field with score distillation");
  add_common(gen3d, o);
  add_generation(gen3d, o);
  gen3d->add_option("--iters", o.iters, "optimisation iterations")->capture_default_str()->check(CLI::NonNegativeNumber);
  gen3d->add_option("--lr", o.lr, "Adam learning rate")->capture_default_str();
  gen3d->add_option("--samples", o.samples, "samples per ray")->capture_default_str();
  gen3d->add_option("--turntable", o.turntable, "number of turntable renders")->capture_default_str();
  gen3d->add_option("--sds-guidance", o.sds_guidance, "model: diffusion model; pull: convex pull toward the input image")
      ->check(CLI::IsMember({"model", "pull"}))
      ->capture_default_str();

  auto* eval = app.add_subcommand("eval", "score a directory of images against a prompt image and text");
  add_common(eval, o);
  eval->add_option("--images", o.images, "directory of PNG images to score; required unless set by --run-config");

  std::string manifest_path;
  auto* rerun = app.add_subcommand("rerun", "repeat a run from its manifest.json");
  rerun->add_option("manifest", manifest_path, "path to manifest.json")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*rerun) return execute(mvp::RunManifest::load(manifest_path));
    if (*gen3d) return execute(to_manifest(mvp::RunMode::gen3d, o, *gen3d));
    if (*eval) return execute(to_manifest(mvp::RunMode::eval, o, *eval));
    return execute(to_manifest(mvp::RunMode::mvgen, o, *mvgen));
  } catch (const mvp::ParseError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const mvp::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const mvp::DivergenceError& e) {
    std::cerr << "optimisation diverged at iteration " << e.iteration() << ": " << e.what() << "\n";
    return 3;
  } catch (const mvp::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
