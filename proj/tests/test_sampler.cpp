#include <gtest/gtest.h>

#include <cmath>

#include "mvprompt/errors.hpp"
#include "mvprompt/sampler.hpp"
#include "test_support.hpp"

using namespace mvp;

namespace {

class ConstantEps final : public NoisePredictor {
 public:
  explicit ConstantEps(double v) : v_(v) {}
  FrameTensor predict(const FrameTensor& x_t, int) const override { return FrameTensor(x_t.shape(), v_); }

 private:
  double v_;
};

class FixedEps final : public NoisePredictor {
 public:
  explicit FixedEps(FrameTensor eps) : eps_(std::move(eps)) {}
  FrameTensor predict(const FrameTensor&, int) const override { return eps_; }

 private:
  FrameTensor eps_;
};

class NanEps final : public NoisePredictor {
 public:
  FrameTensor predict(const FrameTensor& x_t, int) const override { return FrameTensor(x_t.shape(), NAN); }
};

FrameTensor gaussian(const FrameShape& s, std::uint64_t seed) {
  FrameTensor t(s);
  Rng rng(seed);
  rng.fill_normal(t.data());
  return t;
}

}  // namespace

TEST(NoiseSchedule, LinearIsStrictlyDecreasingInUnitInterval) {
  const NoiseSchedule s = NoiseSchedule::linear(100);
  ASSERT_EQ(s.timesteps(), 100);
  for (int t = 0; t < 100; ++t) {
    EXPECT_GT(s.alpha_bar(t), 0.0);
    EXPECT_LE(s.alpha_bar(t), 1.0);
    if (t > 0) EXPECT_LT(s.alpha_bar(t), s.alpha_bar(t - 1));
  }
  EXPECT_LT(s.alpha_bar(99), 0.01);
  EXPECT_THROW(NoiseSchedule({0.5, 0.6}), ConfigError);
  EXPECT_THROW(NoiseSchedule({1.2, 0.6}), ConfigError);
  EXPECT_THROW(s.alpha_bar(100), ConfigError);
}

TEST(NoiseSchedule, DdimTimesteps) {
  const NoiseSchedule s = NoiseSchedule::linear(100);
  EXPECT_EQ(s.ddim_timesteps(1), std::vector<int>{99});
  const auto ts = s.ddim_timesteps(5);
  ASSERT_EQ(ts.size(), 5u);
  EXPECT_EQ(ts.front(), 99);
  EXPECT_EQ(ts.back(), 0);
  for (std::size_t i = 1; i < ts.size(); ++i) EXPECT_LT(ts[i], ts[i - 1]);
  EXPECT_EQ(s.ddim_timesteps(100).size(), 100u);
  EXPECT_THROW(s.ddim_timesteps(0), ConfigError);
  EXPECT_THROW(s.ddim_timesteps(101), ConfigError);
}

TEST(Ddim, SameSeedBitIdentical) {
  const NoiseSchedule s = NoiseSchedule::linear(50);
  const ConstantEps model(0.1);
  const FrameShape shape{1, 4, 4, 8, 8};
  EXPECT_TRUE(ddim_sample(model, s, 10, 3, shape) == ddim_sample(model, s, 10, 3, shape));
  EXPECT_FALSE(ddim_sample(model, s, 10, 3, shape) == ddim_sample(model, s, 10, 4, shape));
}

TEST(Ddim, OracleNoiseRecoversX0InOneStep) {
  const NoiseSchedule s = NoiseSchedule::linear(100);
  const FrameShape shape{1, 4, 4, 8, 8};
  const FrameTensor x0 = gaussian(shape, 1);
  const FrameTensor eps = gaussian(shape, 2);
  for (int t : {0, 37, 99}) {
    const FrameTensor xt = diffuse(x0, eps, s.alpha_bar(t));
    const FrameTensor rec = ddim_predict_x0(xt, eps, s.alpha_bar(t));
    EXPECT_LT(max_abs_diff(rec.data(), x0.data()), 1e-12) << "t=" << t;
  }
  // the whole one-step sampler lands on x0 when the model returns the true noise
  const FrameTensor xT = diffuse(x0, eps, s.alpha_bar(99));
  const FrameTensor out = ddim_sample_from(FixedEps(eps), s, 1, xT);
  EXPECT_LT(max_abs_diff(out.data(), x0.data()), 1e-12);
}

TEST(Ddim, ScalarTwoStepRecursion) {
  // alpha_bar = (0.9, 0.5), x_T = 1, eps_hat = 0.5 at both steps
  // hand recursion: x_0hat(t=1) = (1 - sqrt(.5) .5) / sqrt(.5)
  //                 x_{t=0} = sqrt(.9) x_0hat + sqrt(.1) .5 = 1.0254130204830358
  //                 final   = (x_{t=0} - sqrt(.1) .5) / sqrt(.9) = 0.91421356237309503
  const NoiseSchedule s({0.9, 0.5});
  const ConstantEps model(0.5);
  FrameTensor xT({1, 1, 1, 1, 1}, 1.0);
  const FrameTensor one = ddim_update(xT, FrameTensor(xT.shape(), 0.5), 0.5, 0.9);
  EXPECT_NEAR(one.data()[0], 1.0254130204830358, 1e-9);
  const FrameTensor out = ddim_sample_from(model, s, 2, xT);
  EXPECT_NEAR(out.data()[0], 0.91421356237309503, 1e-9);
}

TEST(Ddim, NonFinitePredictionIsNumericError) {
  const NoiseSchedule s = NoiseSchedule::linear(10);
  EXPECT_THROW(ddim_sample(NanEps(), s, 3, 0, {1, 4, 1, 2, 2}), NumericError);
}

TEST(Ddim, ShapeMismatchIsDimensionError) {
  const FrameTensor a({1, 4, 1, 2, 2}), b({1, 4, 1, 2, 3});
  EXPECT_THROW(ddim_update(a, b, 0.5, 0.9), DimensionError);
}
