#include "mvprompt/sds_nerf.hpp"

#include <cmath>
#include <numbers>

#include "mvprompt/rng.hpp"

namespace mvp {
namespace {

using ConstMatMap = Eigen::Map<const Mat>;
using MatMap = Eigen::Map<Mat>;
using ConstRowMap = Eigen::Map<const RowVec>;
using RowMap = Eigen::Map<RowVec>;

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct Layout {
  int in, hidden;
  std::size_t w1, b1, w2, b2, total;
};

Layout layout_for(const FieldConfig& c) {
  Layout l{};
  l.in = 3 + 6 * c.frequencies;
  l.hidden = c.hidden;
  if (c.hidden > 0) {
    l.w1 = 0;
    l.b1 = l.w1 + static_cast<std::size_t>(l.in) * c.hidden;
    l.w2 = l.b1 + static_cast<std::size_t>(c.hidden);
    l.b2 = l.w2 + static_cast<std::size_t>(c.hidden) * 4;
    l.total = l.b2 + 4;
  } else {
    l.w2 = 0;
    l.b2 = static_cast<std::size_t>(l.in) * 4;
    l.total = l.b2 + 4;
  }
  return l;
}

}  // namespace

// ---------------------------------------------------------------------------
// RadianceField

RadianceField::RadianceField(const FieldConfig& config, std::uint64_t seed) : config_(config) {
  if (config.frequencies < 0 || config.hidden < 0) throw ConfigError("radiance field: negative size");
  const Layout l = layout_for(config);
  params_.assign(l.total, 0.0);
  Rng rng(derive_seed(seed, "radiance_field"));
  const int first_in = l.in;
  const int second_in = l.hidden > 0 ? l.hidden : l.in;
  if (l.hidden > 0) {
    for (std::size_t i = l.w1; i < l.b1; ++i) params_[i] = rng.normal() / std::sqrt(static_cast<double>(first_in));
    for (std::size_t i = l.b1; i < l.w2; ++i) params_[i] = 0.1 * rng.normal();
  }
  for (std::size_t i = l.w2; i < l.b2; ++i) params_[i] = rng.normal() / std::sqrt(static_cast<double>(second_in));
  for (std::size_t i = l.b2; i < l.total; ++i) params_[i] = 0.1 * rng.normal();
}

Mat RadianceField::encode_positions(const Mat& points) const {
  const int L = config_.frequencies;
  Mat enc(points.rows(), input_dim());
  enc.leftCols(3) = points;
  for (int k = 0; k < L; ++k) {
    const double freq = std::numbers::pi * std::pow(2.0, k);
    for (int d = 0; d < 3; ++d) {
      enc.col(3 + 6 * k + d) = (points.col(d) * freq).array().sin();
      enc.col(3 + 6 * k + 3 + d) = (points.col(d) * freq).array().cos();
    }
  }
  return enc;
}

Mat RadianceField::raw(const Mat& points) const {
  const Layout l = layout_for(config_);
  const Mat x = encode_positions(points);
  if (l.hidden > 0) {
    ConstMatMap w1(params_.data() + l.w1, l.in, l.hidden);
    ConstRowMap b1(params_.data() + l.b1, l.hidden);
    ConstMatMap w2(params_.data() + l.w2, l.hidden, 4);
    ConstRowMap b2(params_.data() + l.b2, 4);
    Mat h = x * w1;
    h.rowwise() += b1;
    h = h.array().tanh();
    Mat out = h * w2;
    out.rowwise() += b2;
    return out;
  }
  ConstMatMap w(params_.data() + l.w2, l.in, 4);
  ConstRowMap b(params_.data() + l.b2, 4);
  Mat out = x * w;
  out.rowwise() += b;
  return out;
}

void RadianceField::query(const Mat& points, Eigen::VectorXd& sigma, Mat& rgb) const {
  const Mat out = raw(points);
  sigma.resize(out.rows());
  rgb.resize(out.rows(), 3);
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    sigma[i] = softplus(out(i, 0));
    for (int c = 0; c < 3; ++c) rgb(i, c) = sigmoid(out(i, 1 + c));
  }
}

void RadianceField::query_backward(const Mat& points, const Eigen::VectorXd& g_sigma, const Mat& g_rgb,
                                   std::span<double> grad) const {
  if (grad.size() != params_.size()) throw DimensionError("radiance field: gradient size mismatch");
  const Layout l = layout_for(config_);
  const Mat x = encode_positions(points);
  const Eigen::Index n = points.rows();

  Mat h;
  if (l.hidden > 0) {
    ConstMatMap w1(params_.data() + l.w1, l.in, l.hidden);
    ConstRowMap b1(params_.data() + l.b1, l.hidden);
    h = x * w1;
    h.rowwise() += b1;
    h = h.array().tanh();
  }
  const Mat& feat = l.hidden > 0 ? h : x;
  const int feat_dim = l.hidden > 0 ? l.hidden : l.in;
  ConstMatMap w2(params_.data() + l.w2, feat_dim, 4);
  ConstRowMap b2(params_.data() + l.b2, 4);
  Mat out = feat * w2;
  out.rowwise() += b2;

  Mat g_out(n, 4);
  for (Eigen::Index i = 0; i < n; ++i) {
    g_out(i, 0) = g_sigma[i] * sigmoid(out(i, 0));
    for (int c = 0; c < 3; ++c) {
      const double s = sigmoid(out(i, 1 + c));
      g_out(i, 1 + c) = g_rgb(i, c) * s * (1.0 - s);
    }
  }

  MatMap gw2(grad.data() + l.w2, feat_dim, 4);
  RowMap gb2(grad.data() + l.b2, 4);
  gw2.noalias() += feat.transpose() * g_out;
  gb2 += g_out.colwise().sum();

  if (l.hidden > 0) {
    const Mat g_h = ((g_out * w2.transpose()).array() * (1.0 - h.array().square())).matrix();
    MatMap gw1(grad.data() + l.w1, l.in, l.hidden);
    RowMap gb1(grad.data() + l.b1, l.hidden);
    gw1.noalias() += x.transpose() * g_h;
    gb1 += g_h.colwise().sum();
  }
}

// ---------------------------------------------------------------------------
// Rendering

CompositeResult composite(std::span<const double> sigmas, std::span<const double> deltas, const Mat& colors,
                          const Color& background) {
  const std::size_t n = sigmas.size();
  if (deltas.size() != n || static_cast<std::size_t>(colors.rows()) != n || colors.cols() != 3) {
    throw DimensionError("composite: sample arrays disagree in length");
  }
  CompositeResult r;
  r.weights.resize(n);
  r.transmittance.resize(n);
  double optical_depth = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double T = std::exp(-optical_depth);
    const double alpha = -std::expm1(-sigmas[i] * deltas[i]);
    r.transmittance[i] = T;
    r.weights[i] = T * alpha;
    r.opacity += r.weights[i];
    for (int c = 0; c < 3; ++c) r.color[c] += r.weights[i] * colors(static_cast<Eigen::Index>(i), c);
    optical_depth += sigmas[i] * deltas[i];
  }
  r.final_transmittance = std::exp(-optical_depth);
  for (int c = 0; c < 3; ++c) r.color[c] += r.final_transmittance * background[c];
  return r;
}

namespace {

Eigen::Vector3d ray_direction(const CameraPose& pose, const RenderSettings& s, int x, int y) {
  const double tan_half = std::tan(0.5 * s.fov_deg * std::numbers::pi / 180.0);
  const double u = ((x + 0.5) / s.resolution * 2.0 - 1.0) * tan_half;
  const double v = (1.0 - (y + 0.5) / s.resolution * 2.0) * tan_half;
  const Eigen::Vector3d d_cam(u, v, -1.0);
  return (pose.rotation * d_cam).normalized();
}

}  // namespace

RaySamples sample_ray(const RadianceField& field, const CameraPose& pose, const RenderSettings& s, int x, int y) {
  if (s.samples < 1 || !(s.far > s.near)) throw ConfigError("render: invalid sampling settings");
  const Eigen::Vector3d origin = pose.translation;
  const Eigen::Vector3d dir = ray_direction(pose, s, x, y);
  const double delta = (s.far - s.near) / s.samples;
  RaySamples rs;
  rs.positions.resize(s.samples, 3);
  rs.deltas = Eigen::VectorXd::Constant(s.samples, delta);
  for (int i = 0; i < s.samples; ++i) {
    const double t = s.near + (i + 0.5) * delta;
    rs.positions.row(i) = (origin + t * dir).transpose();
  }
  field.query(rs.positions, rs.sigmas, rs.colors);
  return rs;
}

RenderResult render(const RadianceField& field, const CameraPose& pose, const RenderSettings& s) {
  RenderResult out;
  out.image = Image(s.resolution, s.resolution);
  out.opacity.assign(static_cast<std::size_t>(s.resolution) * s.resolution, 0.0);
  for (int y = 0; y < s.resolution; ++y) {
    for (int x = 0; x < s.resolution; ++x) {
      const RaySamples rs = sample_ray(field, pose, s, x, y);
      const auto c = composite(std::span<const double>(rs.sigmas.data(), rs.sigmas.size()),
                               std::span<const double>(rs.deltas.data(), rs.deltas.size()), rs.colors,
                               field.background());
      for (int ch = 0; ch < 3; ++ch) out.image.at(y, x, ch) = c.color[ch];
      out.opacity[static_cast<std::size_t>(y) * s.resolution + x] = c.opacity;
    }
  }
  return out;
}

void render_backward(const RadianceField& field, const CameraPose& pose, const RenderSettings& s,
                     const Image& grad_image, std::span<double> grad) {
  if (grad_image.width != s.resolution || grad_image.height != s.resolution) {
    throw DimensionError("render_backward: gradient image size mismatch");
  }
  const Color& bg = field.background();
  const int n = s.samples;
  Eigen::VectorXd g_sigma(n);
  Mat g_rgb(n, 3);
  for (int y = 0; y < s.resolution; ++y) {
    for (int x = 0; x < s.resolution; ++x) {
      const Color g = {grad_image.at(y, x, 0), grad_image.at(y, x, 1), grad_image.at(y, x, 2)};
      if (g[0] == 0.0 && g[1] == 0.0 && g[2] == 0.0) continue;
      const RaySamples rs = sample_ray(field, pose, s, x, y);
      const auto c = composite(std::span<const double>(rs.sigmas.data(), n),
                               std::span<const double>(rs.deltas.data(), n), rs.colors, bg);
      // suffix[c] = sum_{i>k} w_i c_i + T_n bg, swept from the far end
      Color suffix = {c.final_transmittance * bg[0], c.final_transmittance * bg[1], c.final_transmittance * bg[2]};
      for (int k = n - 1; k >= 0; --k) {
        const double t_next = c.transmittance[k] - c.weights[k];  // T_{k+1}
        double gs = 0.0;
        for (int ch = 0; ch < 3; ++ch) {
          gs += g[ch] * rs.deltas[k] * (t_next * rs.colors(k, ch) - suffix[ch]);
          g_rgb(k, ch) = g[ch] * c.weights[k];
        }
        g_sigma[k] = gs;
        for (int ch = 0; ch < 3; ++ch) suffix[ch] += c.weights[k] * rs.colors(k, ch);
      }
      field.query_backward(rs.positions, g_sigma, g_rgb, grad);
    }
  }
}

// ---------------------------------------------------------------------------
// SDS

void SDSConfig::validate(const NoiseSchedule& schedule) const {
  if (t_min < 0 || t_max >= schedule.timesteps() || t_min > t_max) {
    throw ConfigError("sds: timestep range [" + std::to_string(t_min) + ", " + std::to_string(t_max) +
                      "] outside schedule");
  }
  if (!weight) throw ConfigError("sds: missing timestep weighting");
  if (iterations < 0) throw ConfigError("sds: negative iteration count");
}

FrameTensor render_latents(const RadianceField& field, const LatentCodec& codec, const RenderSettings& settings) {
  const auto rig = orthogonal_camera_rig();
  FrameTensor x;
  for (int v = 0; v < 4; ++v) {
    const PixelLatent z = codec.encode(render(field, rig[v], settings).image);
    if (v == 0) x = FrameTensor({1, 4, z.channels, z.height, z.width});
    std::copy(z.values.begin(), z.values.end(), x.frame(0, v).begin());
  }
  return x;
}

SDSGradient sds_gradient_at(const RadianceField& field, const NoisePredictor& model, const NoiseSchedule& schedule,
                            const SDSConfig& cfg, const LatentCodec& codec, const RenderSettings& settings, int t,
                            const FrameTensor& noise) {
  SDSGradient out;
  out.t = t;
  out.latents = render_latents(field, codec, settings);
  const double abar = schedule.alpha_bar(t);
  const double w = cfg.weight(abar);
  if (!std::isfinite(w) || w < 0.0) throw NumericError("sds: timestep weight must be finite and nonnegative");

  const FrameTensor x_t = diffuse(out.latents, noise, abar);
  const FrameTensor eps_hat = model.predict(x_t, t);
  if (!(eps_hat.shape() == noise.shape())) throw DimensionError("sds: noise prediction shape mismatch");

  FrameTensor residual(noise.shape());
  auto r = residual.data();
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = w * (eps_hat.data()[i] - noise.data()[i]);
  if (!residual.all_finite()) throw NumericError("sds: non-finite residual at t=" + std::to_string(t));
  out.residual_norm = l2_norm(residual.data());

  out.grad.assign(static_cast<std::size_t>(field.parameter_count()), 0.0);
  if (out.residual_norm == 0.0) return out;

  const auto rig = orthogonal_camera_rig();
  const FrameShape& s = residual.shape();
  for (int v = 0; v < 4; ++v) {
    PixelLatent g(s.channels, s.height, s.width);
    auto src = residual.frame(0, v);
    std::copy(src.begin(), src.end(), g.values.begin());
    render_backward(field, rig[v], settings, codec.encode_vjp(g), out.grad);
  }
  return out;
}

SDSGradient sds_gradient(const RadianceField& field, const NoisePredictor& model, const NoiseSchedule& schedule,
                         const SDSConfig& cfg, const LatentCodec& codec, const RenderSettings& settings, Rng& rng) {
  cfg.validate(schedule);
  const int t = rng.uniform_int(cfg.t_min, cfg.t_max);
  const int side = settings.resolution / codec.downsample();
  FrameTensor noise({1, 4, codec.channels(), side, side});
  rng.fill_normal(noise.data());
  return sds_gradient_at(field, model, schedule, cfg, codec, settings, t, noise);
}

FrameTensor TargetPullPredictor::predict(const FrameTensor& x_t, int t) const {
  if (!(x_t.shape() == target_.shape())) throw DimensionError("target pull: shape mismatch");
  const double abar = schedule_.alpha_bar(t);
  const double a = std::sqrt(abar);
  const double s = std::sqrt(1.0 - abar);
  FrameTensor eps(x_t.shape());
  for (std::size_t i = 0; i < eps.numel(); ++i) eps.data()[i] = (x_t.data()[i] - a * target_.data()[i]) / s;
  return eps;
}

OptimizationResult optimize_nerf(RadianceField field, const NoisePredictor& model, const NoiseSchedule& schedule,
                                 const SDSConfig& cfg, const LatentCodec& codec, const RenderSettings& settings,
                                 std::uint64_t seed) {
  cfg.validate(schedule);
  Rng rng(derive_seed(seed, "sds"));
  const std::size_t n = static_cast<std::size_t>(field.parameter_count());
  std::vector<double> m(n, 0.0), v(n, 0.0);
  constexpr double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;

  OptimizationResult result{field, {}};
  RadianceField& f = result.field;
  for (int it = 0; it < cfg.iterations; ++it) {
    const double frac = cfg.iterations > 1 ? static_cast<double>(it) / (cfg.iterations - 1) : 0.0;
    const double lr = cfg.learning_rate > 0.0 && cfg.final_learning_rate > 0.0
                          ? cfg.learning_rate * std::pow(cfg.final_learning_rate / cfg.learning_rate, frac)
                          : cfg.learning_rate;
    SDSGradient g = sds_gradient(f, model, schedule, cfg, codec, settings, rng);
    const double bc1 = 1.0 - std::pow(beta1, it + 1);
    const double bc2 = 1.0 - std::pow(beta2, it + 1);
    double update_sq = 0.0;
    auto p = f.params();
    for (std::size_t i = 0; i < n; ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * g.grad[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * g.grad[i] * g.grad[i];
      const double step = lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + adam_eps);
      p[i] -= step;
      update_sq += step * step;
    }
    for (double x : p) {
      if (!std::isfinite(x)) {
        throw DivergenceError("sds: parameters diverged at iteration " + std::to_string(it), it);
      }
    }
    result.log.push_back({it, g.t, g.residual_norm, std::sqrt(update_sq)});
  }
  return result;
}

}  // namespace mvp
