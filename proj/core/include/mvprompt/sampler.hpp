#pragma once

#include <cstdint>
#include <vector>

#include "mvprompt/tensor.hpp"

namespace mvp {

/// Discrete diffusion schedule with cumulative products alpha_bar[t],
/// t = 0 .. T-1, strictly decreasing from just below 1.
class NoiseSchedule {
 public:
  /// Linear betas; beta range scaled by 1000/T so short schedules still
  /// reach a nearly pure-noise end point.
  static NoiseSchedule linear(int timesteps = 100, double beta_start = 1e-4, double beta_end = 2e-2);
  explicit NoiseSchedule(std::vector<double> alpha_bar);

  int timesteps() const { return static_cast<int>(alpha_bar_.size()); }
  double alpha_bar(int t) const;
  const std::vector<double>& alpha_bars() const { return alpha_bar_; }

  /// Descending timesteps visited by a `steps`-step DDIM run: evenly spaced
  /// from T-1 down to 0 (just T-1 for a single step).
  std::vector<int> ddim_timesteps(int steps) const;

 private:
  std::vector<double> alpha_bar_;
};

/// Anything that predicts the noise contained in x_t.
class NoisePredictor {
 public:
  virtual ~NoisePredictor() = default;
  virtual FrameTensor predict(const FrameTensor& x_t, int t) const = 0;
};

/// x0_hat = (x_t - sqrt(1 - abar_t) eps) / sqrt(abar_t)
FrameTensor ddim_predict_x0(const FrameTensor& x_t, const FrameTensor& eps, double alpha_bar_t);

/// Deterministic (eta = 0) update to the previous timestep.
FrameTensor ddim_update(const FrameTensor& x_t, const FrameTensor& eps, double alpha_bar_t, double alpha_bar_prev);

/// x_t = sqrt(abar) x0 + sqrt(1 - abar) eps
FrameTensor diffuse(const FrameTensor& x0, const FrameTensor& eps, double alpha_bar_t);

/// Runs the DDIM chain from x_T; the last step targets alpha_bar = 1.
FrameTensor ddim_sample_from(const NoisePredictor& model, const NoiseSchedule& schedule, int steps, FrameTensor x_T);

/// Draws x_T ~ N(0, I) from `seed` and runs ddim_sample_from.
FrameTensor ddim_sample(const NoisePredictor& model, const NoiseSchedule& schedule, int steps, std::uint64_t seed,
                        const FrameShape& shape);

}  // namespace mvp
