#include <gtest/gtest.h>

#include <cmath>

#include "mvprompt/errors.hpp"
#include "mvprompt/sds_nerf.hpp"
#include "test_support.hpp"

using namespace mvp;

namespace {

class FixedEps final : public NoisePredictor {
 public:
  explicit FixedEps(FrameTensor eps) : eps_(std::move(eps)) {}
  FrameTensor predict(const FrameTensor&, int) const override { return eps_; }

 private:
  FrameTensor eps_;
};

/// Returns exactly the noise that was mixed in, whatever x_t is.
class EchoNoise final : public NoisePredictor {
 public:
  explicit EchoNoise(const FrameTensor& eps) : eps_(eps) {}
  FrameTensor predict(const FrameTensor&, int) const override { return eps_; }

 private:
  const FrameTensor& eps_;
};

const ToyPatchAutoencoder& codec() {
  static const ToyPatchAutoencoder ae(EncoderDims{}, 5);
  return ae;
}

RenderSettings small_settings() {
  RenderSettings s;
  s.resolution = 8;
  s.samples = 12;
  return s;
}

FrameTensor gaussian(const FrameShape& s, std::uint64_t seed) {
  FrameTensor t(s);
  Rng rng(seed);
  rng.fill_normal(t.data());
  return t;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

TEST(Composite, TwoSampleFixture) {
  // sigma_i delta_i = 0.5 for both samples, red then green, white background
  const std::vector<double> sig = {1.0, 1.0}, del = {0.5, 0.5};
  Mat col(2, 3);
  col << 1, 0, 0, 0, 1, 0;
  const CompositeResult r = composite(sig, del, col, {1.0, 1.0, 1.0});
  EXPECT_NEAR(r.weights[0], 0.39346934028736658, 1e-12);
  EXPECT_NEAR(r.weights[1], 0.23865121854119109, 1e-12);
  EXPECT_NEAR(r.final_transmittance, 0.36787944117144233, 1e-12);
  EXPECT_NEAR(r.color[0], 0.76134878145880891, 1e-6);
  EXPECT_NEAR(r.color[1], 0.60653065971263342, 1e-6);
  EXPECT_NEAR(r.color[2], 0.36787944117144233, 1e-6);
}

TEST(Composite, EmptyAndOpaque) {
  Mat col(3, 3);
  col << 0.2, 0.3, 0.4, 0.9, 0.9, 0.9, 0.1, 0.1, 0.1;
  const CompositeResult empty = composite(std::vector<double>{0, 0, 0}, std::vector<double>{0.1, 0.1, 0.1}, col,
                                          {0.5, 0.6, 0.7});
  EXPECT_EQ(empty.opacity, 0.0);
  EXPECT_EQ(empty.color, (Color{0.5, 0.6, 0.7}));

  const CompositeResult opaque = composite(std::vector<double>{200, 1, 1}, std::vector<double>{0.1, 0.1, 0.1}, col,
                                           {1, 1, 1});
  for (int c = 0; c < 3; ++c) EXPECT_NEAR(opaque.color[c], col(0, c), 1e-6);
}

TEST(Composite, ConservationOnRandomRays) {
  Rng rng(1);
  for (int ray = 0; ray < 200; ++ray) {
    const int n = 1 + rng.uniform_int(0, 40);
    std::vector<double> sig(n), del(n);
    Mat col(n, 3);
    for (int i = 0; i < n; ++i) {
      sig[i] = rng.uniform() < 0.3 ? 0.0 : 10.0 * rng.uniform();
      del[i] = 0.01 + rng.uniform();
      for (int c = 0; c < 3; ++c) col(i, c) = rng.uniform();
    }
    const CompositeResult r = composite(sig, del, col, {1, 1, 1});
    EXPECT_NEAR(r.opacity + r.final_transmittance, 1.0, 1e-12);
    for (int i = 1; i < n; ++i) EXPECT_LE(r.transmittance[i], r.transmittance[i - 1]);
  }
}

TEST(Render, EmptyFieldIsBackground) {
  FieldConfig cfg;
  cfg.background = {0.2, 0.4, 0.6};
  RadianceField field(cfg, 1);
  for (double& p : field.params()) p = 0.0;
  // softplus(b) with b = -inf is 0; use a strongly negative density bias instead
  const int n = field.parameter_count();
  field.params()[static_cast<std::size_t>(n - 4)] = -800.0;
  const RenderResult r = render(field, rig_pose(ViewLabel::front), small_settings());
  for (double o : r.opacity) EXPECT_LT(o, 1e-12);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) EXPECT_NEAR(r.image.at(y, x, 2), 0.6, 1e-12);
}

TEST(Render, DefaultFieldSizeAndDeterminism) {
  const RadianceField field(FieldConfig{}, 2);
  EXPECT_EQ(field.input_dim(), 15);
  EXPECT_EQ(field.parameter_count(), 15 * 16 + 16 + 16 * 4 + 4);
  const RenderResult a = render(field, rig_pose(ViewLabel::left), small_settings());
  const RenderResult b = render(field, rig_pose(ViewLabel::left), small_settings());
  EXPECT_EQ(a.image, b.image);
}

TEST(Render, BackwardMatchesFiniteDifference) {
  FieldConfig cfg;
  cfg.hidden = 4;
  cfg.frequencies = 1;
  RadianceField field(cfg, 3);
  const RenderSettings s = small_settings();
  const CameraPose pose = rig_pose(ViewLabel::right);
  const Image g = test::random_image(8, 4);
  std::vector<double> grad(static_cast<std::size_t>(field.parameter_count()), 0.0);
  render_backward(field, pose, s, g, grad);
  auto f = [&](const RadianceField& fl) { return dot(render(fl, pose, s).image.rgb, g.rgb); };
  const double h = 1e-5;
  for (std::size_t i = 0; i < grad.size(); ++i) {
    RadianceField a = field, b = field;
    a.params()[i] += h;
    b.params()[i] -= h;
    const double fd = (f(a) - f(b)) / (2 * h);
    EXPECT_NEAR(grad[i], fd, 1e-6 * std::max(1.0, std::abs(fd))) << "param " << i;
  }
}

TEST(Sds, ZeroResidualGivesExactZeroGradient) {
  const RadianceField field(FieldConfig{}, 4);
  const NoiseSchedule schedule = NoiseSchedule::linear();
  const FrameTensor noise = gaussian({1, 4, 4, 2, 2}, 5);
  const SDSGradient g = sds_gradient_at(field, EchoNoise(noise), schedule, SDSConfig{}, codec(), small_settings(), 40,
                                        noise);
  EXPECT_EQ(g.residual_norm, 0.0);
  for (double v : g.grad) EXPECT_EQ(v, 0.0);
}

TEST(Sds, ZeroWeightGivesZeroGradient) {
  const RadianceField field(FieldConfig{}, 4);
  const NoiseSchedule schedule = NoiseSchedule::linear();
  SDSConfig cfg;
  cfg.weight = [](double) { return 0.0; };
  const FrameTensor noise = gaussian({1, 4, 4, 2, 2}, 6);
  const SDSGradient g = sds_gradient_at(field, FixedEps(gaussian(noise.shape(), 7)), schedule, cfg, codec(),
                                        small_settings(), 40, noise);
  for (double v : g.grad) EXPECT_EQ(v, 0.0);
}

TEST(Sds, GradientMatchesFiniteDifferenceContraction) {
  FieldConfig fc;
  fc.hidden = 0;
  fc.frequencies = 0;  // single affine layer: 3 x 4 weights + 4 biases
  const RadianceField field(fc, 8);
  ASSERT_EQ(field.parameter_count(), 16);
  const NoiseSchedule schedule = NoiseSchedule::linear();
  const RenderSettings s = small_settings();
  const FrameTensor noise = gaussian({1, 4, 4, 2, 2}, 9);
  const FrameTensor eps_hat = gaussian(noise.shape(), 10);
  const int t = 60;
  const SDSConfig cfg;
  const SDSGradient g = sds_gradient_at(field, FixedEps(eps_hat), schedule, cfg, codec(), s, t, noise);

  const double w = cfg.weight(schedule.alpha_bar(t));
  std::vector<double> r(noise.numel());
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = w * (eps_hat.data()[i] - noise.data()[i]);
  auto f = [&](const RadianceField& fl) { return dot(render_latents(fl, codec(), s).data(), r); };

  const double h = 1e-5;
  std::vector<double> fd(g.grad.size());
  for (std::size_t i = 0; i < fd.size(); ++i) {
    RadianceField a = field, b = field;
    a.params()[i] += h;
    b.params()[i] -= h;
    fd[i] = (f(a) - f(b)) / (2 * h);
  }
  std::vector<double> diff(fd.size());
  for (std::size_t i = 0; i < fd.size(); ++i) diff[i] = g.grad[i] - fd[i];
  EXPECT_LT(l2_norm(diff) / l2_norm(fd), 1e-4);
}

TEST(Optimize, ZeroLearningRateLeavesParamsUnchanged) {
  const RadianceField field(FieldConfig{}, 11);
  const NoiseSchedule schedule = NoiseSchedule::linear();
  SDSConfig cfg;
  cfg.iterations = 3;
  cfg.learning_rate = 0.0;
  cfg.final_learning_rate = 0.0;
  const FrameTensor eps = gaussian({1, 4, 4, 2, 2}, 12);
  const OptimizationResult res = optimize_nerf(field, FixedEps(eps), schedule, cfg, codec(), small_settings(), 1);
  EXPECT_TRUE(std::equal(res.field.params().begin(), res.field.params().end(), field.params().begin()));
  EXPECT_EQ(res.log.size(), 3u);
}

TEST(Optimize, SameSeedSameResult) {
  const RadianceField field(FieldConfig{}, 13);
  const NoiseSchedule schedule = NoiseSchedule::linear();
  SDSConfig cfg;
  cfg.iterations = 4;
  const FrameTensor eps = gaussian({1, 4, 4, 2, 2}, 14);
  const auto a = optimize_nerf(field, FixedEps(eps), schedule, cfg, codec(), small_settings(), 7);
  const auto b = optimize_nerf(field, FixedEps(eps), schedule, cfg, codec(), small_settings(), 7);
  EXPECT_TRUE(std::equal(a.field.params().begin(), a.field.params().end(), b.field.params().begin()));
}

TEST(Optimize, PullTowardTargetReducesFrontError) {
  const RenderSettings s = small_settings();
  const NoiseSchedule schedule = NoiseSchedule::linear();
  const Image target = test::blob_image(8, 3);
  const PixelLatent z = codec().encode(target);
  FrameTensor tgt({1, 4, z.channels, z.height, z.width});
  for (int v = 0; v < 4; ++v) std::copy(z.values.begin(), z.values.end(), tgt.frame(0, v).begin());
  const TargetPullPredictor pull(tgt, schedule);
  const RadianceField field(FieldConfig{}, 15);
  SDSConfig cfg;
  cfg.iterations = 40;
  cfg.learning_rate = 5e-2;
  cfg.final_learning_rate = 5e-2;
  const auto res = optimize_nerf(field, pull, schedule, cfg, codec(), s, 3);
  const Image decoded = codec().decode(z);
  const double before = mean_abs_error(render(field, rig_pose(ViewLabel::front), s).image, decoded);
  const double after = mean_abs_error(render(res.field, rig_pose(ViewLabel::front), s).image, decoded);
  EXPECT_LT(after, before);
}

TEST(Optimize, DivergenceReportsIteration) {
  const RadianceField field(FieldConfig{}, 16);
  const NoiseSchedule schedule = NoiseSchedule::linear();
  SDSConfig cfg;
  cfg.iterations = 5;
  cfg.learning_rate = std::numeric_limits<double>::infinity();
  cfg.final_learning_rate = std::numeric_limits<double>::infinity();
  const FrameTensor eps = gaussian({1, 4, 4, 2, 2}, 17);
  try {
    optimize_nerf(field, FixedEps(eps), schedule, cfg, codec(), small_settings(), 1);
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    EXPECT_EQ(e.iteration(), 0);
  }
}
