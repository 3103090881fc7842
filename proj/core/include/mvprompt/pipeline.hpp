#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mvprompt/metrics.hpp"
#include "mvprompt/mv_unet.hpp"
#include "mvprompt/sds_nerf.hpp"

namespace mvp {

enum class RunMode { mvgen, gen3d, eval };

std::string_view mode_name(RunMode mode);
/// Throws ConfigError on anything other than mvgen, gen3d or eval.
RunMode parse_mode(std::string_view name);

/// Guidance used by the SDS loop in gen3d runs.
enum class SdsGuidance { model, pull };

/// Everything that determines a run. Written to manifest.json before any
/// other output, and sufficient to reproduce it.
struct RunManifest {
  RunMode mode = RunMode::mvgen;
  std::uint64_t seed = 0;
  std::string config = "pixel(f) + local(f)";  // canonical form
  std::string text = "an object";
  std::filesystem::path image;
  std::filesystem::path out_dir;
  std::optional<std::filesystem::path> real_views;  // back.png / left.png / right.png
  std::optional<std::filesystem::path> images_dir;  // eval input
  std::optional<std::filesystem::path> checkpoint;  // model weights; toy weights otherwise
  std::uint64_t weights_seed = 0;

  int steps = 20;
  double guidance = 1.0;

  int iterations = 100;
  SdsGuidance sds_guidance = SdsGuidance::model;
  double learning_rate = 2e-2;
  int render_samples = 32;
  int turntable_views = 8;
  FieldConfig field;

  int timesteps = 100;
  MultiViewModel::Dims dims;
  int image_size = 32;  // square working resolution; latent side is image_size / downsample
  int eval_size = 32;

  ControllerConfig controller() const { return parse_controller_config(config); }
  /// Stem used in per-view file names.
  std::string run_name() const;

  /// Mode-specific required fields, and a parsable config.
  void validate() const;

  std::string to_json() const;
  static RunManifest from_json(std::string_view json);
  static RunManifest load(const std::filesystem::path& path);
};

/// Overrides manifest fields from a key = value run configuration. Keys:
/// mode, seed, config, text, image, out_dir, real_views, images, checkpoint,
/// weights_seed, steps, guidance, iterations, sds_guidance, learning_rate,
/// render_samples, turntable_views, image_size, latent_size, eval_size.
/// latent_size sets image_size to latent_size * downsample.
/// Unknown keys and malformed values throw ConfigError.
void apply_run_config(RunManifest& manifest, const RunConfigFile& file);
RunConfigFile load_run_config(const std::filesystem::path& path);

/// $MVPROMPT_OUT_ROOT when set, "mvprompt_out" otherwise.
std::filesystem::path default_output_root();

/// Toy weights from manifest.weights_seed, overwritten by the checkpoint if given.
MultiViewModel load_model(const RunManifest& manifest);

/// Front prompt plus back/left/right views decoded from a single-image
/// sampling run. Decoded views are quantised to 8 bits so they match what a
/// round trip through PNG would give.
PromptSet generate_prompt_set(const Image& front_image, const MultiViewModel& model, const NoiseSchedule& schedule,
                              std::uint64_t seed, int steps, std::string_view text, double guidance = 1.0);

/// Decodes the four view latents in rig order.
std::vector<Image> decode_views(const MultiViewModel& model, const MultiViewLatent& views);

struct RunOutputs {
  std::vector<std::filesystem::path> files;  // in write order
  std::vector<Image> views;                  // generated or rendered rig views, rig order
  MetricReport report;
  std::vector<OptimizationLogEntry> log;     // gen3d only
  double front_mae_initial = 0.0;            // gen3d only
  double front_mae_final = 0.0;
};

RunOutputs run_mv_generation(const RunManifest& manifest);
RunOutputs run_mv_generation(const RunManifest& manifest, const MultiViewModel& model);
/// Same outputs through the single-image code path; the config is ignored.
RunOutputs run_baseline_generation(const RunManifest& manifest, const MultiViewModel& model);
RunOutputs run_3d_generation(const RunManifest& manifest);
RunOutputs run_3d_generation(const RunManifest& manifest, const MultiViewModel& model);
RunOutputs run_eval(const RunManifest& manifest);
/// Dispatches on manifest.mode.
RunOutputs run(const RunManifest& manifest);

}  // namespace mvp
