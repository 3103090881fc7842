#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "mvprompt/encoders.hpp"
#include "mvprompt/errors.hpp"
#include "mvprompt/prompting.hpp"
#include "mvprompt/sampler.hpp"
#include "mvprompt/tensor.hpp"

namespace mvp {

using Color = std::array<double, 3>;

struct FieldConfig {
  int frequencies = 2;  // positional-encoding octaves
  int hidden = 16;      // 0 = single affine layer
  Color background = {1.0, 1.0, 1.0};
};

/// Positional-encoding MLP mapping a point to density (softplus) and colour
/// (sigmoid). All parameters live in one flat vector:
/// [W1 (in x hidden), b1, W2 (hidden x 4), b2], or [W (in x 4), b] without a
/// hidden layer.
class RadianceField {
 public:
  RadianceField(const FieldConfig& config, std::uint64_t seed);

  int input_dim() const { return 3 + 6 * config_.frequencies; }
  int parameter_count() const { return static_cast<int>(params_.size()); }
  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }
  const Color& background() const { return config_.background; }
  const FieldConfig& config() const { return config_; }

  /// Positional encoding of each row of `points` (n x 3).
  Mat encode_positions(const Mat& points) const;

  /// Raw network outputs (n x 4) before activations.
  Mat raw(const Mat& points) const;
  /// Densities and colours for n points.
  void query(const Mat& points, Eigen::VectorXd& sigma, Mat& rgb) const;
  /// Accumulates d/dparams of sum(g_sigma . sigma + g_rgb : rgb) into grad.
  void query_backward(const Mat& points, const Eigen::VectorXd& g_sigma, const Mat& g_rgb,
                      std::span<double> grad) const;

 private:
  FieldConfig config_;
  std::vector<double> params_;
};

/// Samples of one ray, ordered near to far.
struct RaySamples {
  Mat positions;           // n x 3
  Eigen::VectorXd deltas;  // n, all > 0
  Eigen::VectorXd sigmas;  // n, all >= 0
  Mat colors;              // n x 3
};

struct CompositeResult {
  Color color{};
  double opacity = 0.0;                // sum of weights
  std::vector<double> weights;         // T_i (1 - exp(-sigma_i delta_i))
  std::vector<double> transmittance;   // T_i, i = 0..n-1
  double final_transmittance = 1.0;    // T_n
};

/// Alpha compositing: colour = sum_i w_i c_i + T_n * background.
CompositeResult composite(std::span<const double> sigmas, std::span<const double> deltas, const Mat& colors,
                          const Color& background);

struct RenderSettings {
  int resolution = 32;
  int samples = 64;
  double near = 1.0;
  double far = 4.0;
  double fov_deg = 40.0;
};

struct RenderResult {
  Image image;
  std::vector<double> opacity;  // per pixel, row-major
};

/// Deterministic midpoint-stratified samples along the ray through pixel (x, y).
RaySamples sample_ray(const RadianceField& field, const CameraPose& pose, const RenderSettings& settings, int x,
                      int y);

RenderResult render(const RadianceField& field, const CameraPose& pose, const RenderSettings& settings);

/// Accumulates d/dparams of <grad_image, render(field, pose).image> into grad.
void render_backward(const RadianceField& field, const CameraPose& pose, const RenderSettings& settings,
                     const Image& grad_image, std::span<double> grad);

/// Weighting over timesteps, as a function of alpha_bar_t.
using TimestepWeight = std::function<double(double alpha_bar)>;

struct SDSConfig {
  TimestepWeight weight = [](double abar) { return 1.0 - abar; };
  int t_min = 2;
  int t_max = 97;
  double guidance_scale = 1.0;
  int iterations = 100;
  double learning_rate = 2e-2;
  double final_learning_rate = 2e-2;  // exponential interpolation across iterations

  void validate(const NoiseSchedule& schedule) const;
};

struct SDSGradient {
  std::vector<double> grad;
  double residual_norm = 0.0;
  int t = 0;
  FrameTensor latents;  // x, the encoded rig renders
};

/// Renders the four rig views and encodes them into a (1, 4, c, h, w) latent.
FrameTensor render_latents(const RadianceField& field, const LatentCodec& codec, const RenderSettings& settings);

/// SDS gradient for a given timestep and noise; no gradient flows through
/// the noise prediction.
SDSGradient sds_gradient_at(const RadianceField& field, const NoisePredictor& model, const NoiseSchedule& schedule,
                            const SDSConfig& cfg, const LatentCodec& codec, const RenderSettings& settings, int t,
                            const FrameTensor& noise);

/// Draws t ~ U[t_min, t_max] and eps ~ N(0, I), then sds_gradient_at.
SDSGradient sds_gradient(const RadianceField& field, const NoisePredictor& model, const NoiseSchedule& schedule,
                         const SDSConfig& cfg, const LatentCodec& codec, const RenderSettings& settings, Rng& rng);

/// Noise predictor whose implied x0 is a fixed target latent:
/// eps_hat = (x_t - sqrt(abar) target) / sqrt(1 - abar).
class TargetPullPredictor final : public NoisePredictor {
 public:
  TargetPullPredictor(FrameTensor target, const NoiseSchedule& schedule)
      : target_(std::move(target)), schedule_(schedule) {}
  FrameTensor predict(const FrameTensor& x_t, int t) const override;

 private:
  FrameTensor target_;
  const NoiseSchedule& schedule_;
};

struct OptimizationLogEntry {
  int iteration = 0;
  int t = 0;
  double residual_norm = 0.0;
  double update_norm = 0.0;
};

struct OptimizationResult {
  RadianceField field;
  std::vector<OptimizationLogEntry> log;
};

/// Raised when parameters become non-finite.
class DivergenceError : public NumericError {
 public:
  DivergenceError(const std::string& message, int iteration) : NumericError(message), iteration_(iteration) {}
  int iteration() const noexcept { return iteration_; }

 private:
  int iteration_;
};

/// Adam on the SDS gradient; deterministic given `seed`.
OptimizationResult optimize_nerf(RadianceField field, const NoisePredictor& model, const NoiseSchedule& schedule,
                                 const SDSConfig& cfg, const LatentCodec& codec, const RenderSettings& settings,
                                 std::uint64_t seed);

}  // namespace mvp
