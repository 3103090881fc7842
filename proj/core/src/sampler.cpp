#include "mvprompt/sampler.hpp"

#include <algorithm>
#include <cmath>

#include "mvprompt/errors.hpp"
#include "mvprompt/rng.hpp"

namespace mvp {

NoiseSchedule NoiseSchedule::linear(int timesteps, double beta_start, double beta_end) {
  if (timesteps < 1) throw ConfigError("noise schedule: need at least one timestep");
  const double scale = 1000.0 / timesteps;
  std::vector<double> abar(static_cast<std::size_t>(timesteps));
  double prod = 1.0;
  for (int t = 0; t < timesteps; ++t) {
    const double frac = timesteps == 1 ? 0.0 : static_cast<double>(t) / (timesteps - 1);
    const double beta = std::min(0.999, scale * (beta_start + frac * (beta_end - beta_start)));
    prod *= 1.0 - beta;
    abar[t] = prod;
  }
  return NoiseSchedule(std::move(abar));
}

NoiseSchedule::NoiseSchedule(std::vector<double> alpha_bar) : alpha_bar_(std::move(alpha_bar)) {
  if (alpha_bar_.empty()) throw ConfigError("noise schedule: empty");
  for (std::size_t i = 0; i < alpha_bar_.size(); ++i) {
    if (!(alpha_bar_[i] > 0.0 && alpha_bar_[i] <= 1.0)) throw ConfigError("noise schedule: alpha_bar outside (0, 1]");
    if (i > 0 && !(alpha_bar_[i] < alpha_bar_[i - 1])) {
      throw ConfigError("noise schedule: alpha_bar must be strictly decreasing");
    }
  }
}

double NoiseSchedule::alpha_bar(int t) const {
  if (t < 0 || t >= timesteps()) throw ConfigError("noise schedule: timestep " + std::to_string(t) + " out of range");
  return alpha_bar_[static_cast<std::size_t>(t)];
}

std::vector<int> NoiseSchedule::ddim_timesteps(int steps) const {
  if (steps < 1) throw ConfigError("ddim: steps must be >= 1");
  if (steps > timesteps()) {
    throw ConfigError("ddim: " + std::to_string(steps) + " steps exceed schedule length " +
                      std::to_string(timesteps()));
  }
  std::vector<int> ts;
  const int last = timesteps() - 1;
  if (steps == 1) return {last};
  for (int i = 0; i < steps; ++i) {
    ts.push_back(static_cast<int>(std::lround(last * static_cast<double>(steps - 1 - i) / (steps - 1))));
  }
  return ts;
}

namespace {

void check_same(const FrameTensor& a, const FrameTensor& b) {
  if (!(a.shape() == b.shape())) {
    throw DimensionError("ddim: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  }
}

}  // namespace

FrameTensor ddim_predict_x0(const FrameTensor& x_t, const FrameTensor& eps, double alpha_bar_t) {
  check_same(x_t, eps);
  const double a = std::sqrt(alpha_bar_t);
  const double s = std::sqrt(1.0 - alpha_bar_t);
  FrameTensor x0(x_t.shape());
  auto xs = x_t.data();
  auto es = eps.data();
  auto out = x0.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (xs[i] - s * es[i]) / a;
  return x0;
}

FrameTensor ddim_update(const FrameTensor& x_t, const FrameTensor& eps, double alpha_bar_t, double alpha_bar_prev) {
  const FrameTensor x0 = ddim_predict_x0(x_t, eps, alpha_bar_t);
  const double a = std::sqrt(alpha_bar_prev);
  const double s = std::sqrt(1.0 - alpha_bar_prev);
  FrameTensor prev(x_t.shape());
  auto x0s = x0.data();
  auto es = eps.data();
  auto out = prev.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x0s[i] + s * es[i];
  return prev;
}

FrameTensor diffuse(const FrameTensor& x0, const FrameTensor& eps, double alpha_bar_t) {
  check_same(x0, eps);
  const double a = std::sqrt(alpha_bar_t);
  const double s = std::sqrt(1.0 - alpha_bar_t);
  FrameTensor xt(x0.shape());
  auto x0s = x0.data();
  auto es = eps.data();
  auto out = xt.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x0s[i] + s * es[i];
  return xt;
}

FrameTensor ddim_sample_from(const NoisePredictor& model, const NoiseSchedule& schedule, int steps, FrameTensor x) {
  const auto ts = schedule.ddim_timesteps(steps);
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const int t = ts[i];
    const double abar_prev = i + 1 < ts.size() ? schedule.alpha_bar(ts[i + 1]) : 1.0;
    const FrameTensor eps = model.predict(x, t);
    if (!eps.all_finite()) throw NumericError("ddim: non-finite noise prediction at t=" + std::to_string(t));
    x = ddim_update(x, eps, schedule.alpha_bar(t), abar_prev);
  }
  return x;
}

FrameTensor ddim_sample(const NoisePredictor& model, const NoiseSchedule& schedule, int steps, std::uint64_t seed,
                        const FrameShape& shape) {
  // validate before drawing noise
  schedule.ddim_timesteps(steps);
  FrameTensor x(shape);
  Rng rng(seed);
  rng.fill_normal(x.data());
  return ddim_sample_from(model, schedule, steps, std::move(x));
}

}  // namespace mvp
