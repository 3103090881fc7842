#include <gtest/gtest.h>

#include <cmath>

#include "mvprompt/errors.hpp"
#include "mvprompt/metrics.hpp"
#include "test_support.hpp"

using namespace mvp;

namespace {

RowVec vec(std::initializer_list<double> v) {
  RowVec r(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) r[i++] = x;
  return r;
}

}  // namespace

TEST(Qis, UniformAndOneHot) {
  for (int c : {2, 3, 7, 10, 49, 1000}) {
    ClassProbabilities uniform{std::vector<double>(static_cast<std::size_t>(c), 1.0 / c)};
    EXPECT_EQ(quality_score(uniform), 1.0) << c;
    ClassProbabilities onehot{std::vector<double>(static_cast<std::size_t>(c), 0.0)};
    onehot.p[static_cast<std::size_t>(c) / 2] = 1.0;
    EXPECT_EQ(quality_score(onehot), static_cast<double>(c)) << c;
  }
}

TEST(Qis, ThreeClassFixture) {
  // exp(0.7 ln 0.7 + 0.2 ln 0.2 + 0.1 ln 0.1 + ln 3)
  ClassProbabilities p{{0.7, 0.2, 0.1}};
  EXPECT_NEAR(quality_score(p), 1.3455377349958368, 1e-9);
}

TEST(Qis, BoundsAndValidation) {
  Rng rng(1);
  for (int i = 0; i < 50; ++i) {
    ClassProbabilities p;
    double s = 0.0;
    for (int c = 0; c < 7; ++c) s += p.p.emplace_back(rng.uniform() * rng.uniform());
    for (double& v : p.p) v /= s;
    const double q = quality_score(p);
    EXPECT_GE(q, 1.0 - 1e-12);
    EXPECT_LE(q, 7.0 + 1e-12);
  }
  EXPECT_THROW(quality_score(ClassProbabilities{{0.5, 0.6}}), NumericError);
  EXPECT_THROW(quality_score(ClassProbabilities{{1.1, -0.1}}), NumericError);
  EXPECT_THROW(quality_inception_score(std::span<const ClassProbabilities>{}), NumericError);
}

TEST(Clip, CosineFixtures) {
  EXPECT_NEAR(100.0 * cosine_similarity(vec({1, 0}), vec({0.6, 0.8})), 60.0, 1e-12);
  EXPECT_NEAR(100.0 * cosine_similarity(vec({1, 2}), vec({1, 2})), 100.0, 1e-12);
  EXPECT_NEAR(100.0 * cosine_similarity(vec({1, 2}), vec({-1, -2})), -100.0, 1e-12);
  EXPECT_NEAR(100.0 * cosine_similarity(vec({1, 0}), vec({0, 3})), 0.0, 1e-12);
  EXPECT_THROW(cosine_similarity(vec({0, 0}), vec({1, 0})), NumericError);
}

TEST(Clip, MeanAndPopulationStd) {
  // cosines 0.30 and 0.34 against (1, 0)
  const double a = 0.30, b = 0.34;
  const std::vector<RowVec> e = {vec({a, std::sqrt(1 - a * a)}), vec({b, std::sqrt(1 - b * b)})};
  const MeanStd m = cosine_scores(e, vec({1, 0})).summary();
  EXPECT_NEAR(m.mean, 32.0, 1e-9);
  EXPECT_NEAR(m.std, 2.0, 1e-9);
}

TEST(Clip, ScaleInvariance) {
  Rng rng(2);
  const RowVec a = rng.normal_matrix(1, 16), b = rng.normal_matrix(1, 16);
  const double ref = cosine_similarity(a, b);
  for (double lambda : {0.1, 1.0, 10.0}) EXPECT_NEAR(cosine_similarity(lambda * a, b), ref, 1e-12);
}

TEST(Clip, ImageAgainstItselfScores100) {
  const EvalBackends eval = EvalBackends::toy(1);
  const Image img = test::random_image(32, 3);
  const std::vector<Image> imgs = {img};
  EXPECT_NEAR(clip_image_score(imgs, img, *eval.image_embedder).summary().mean, 100.0, 1e-9);
}

TEST(Metrics, OrderInvariance) {
  const EvalBackends eval = EvalBackends::toy(2);
  std::vector<Image> imgs;
  for (int i = 0; i < 5; ++i) imgs.push_back(test::random_image(32, 10 + i));
  std::vector<Image> rev(imgs.rbegin(), imgs.rend());
  const MeanStd a = quality_inception_score(imgs, *eval.classifier).summary();
  const MeanStd b = quality_inception_score(rev, *eval.classifier).summary();
  EXPECT_NEAR(a.mean, b.mean, 1e-12);
  EXPECT_NEAR(a.std, b.std, 1e-12);
  const MeanStd c = clip_text_score(imgs, "a chair", *eval.text_embedder, *eval.image_embedder).summary();
  const MeanStd d = clip_text_score(rev, "a chair", *eval.text_embedder, *eval.image_embedder).summary();
  EXPECT_NEAR(c.mean, d.mean, 1e-12);
  EXPECT_GE(c.mean, -100.0);
  EXPECT_LE(c.mean, 100.0);
}

TEST(Metrics, BackendsRequireTheirInputSize) {
  const EvalBackends eval = EvalBackends::toy(3);
  EXPECT_THROW(eval.classifier->classify(test::random_image(16, 1)), DimensionError);
  const ClassProbabilities p = eval.classifier->classify(test::random_image(32, 1));
  EXPECT_NO_THROW(p.validate());
  EXPECT_EQ(static_cast<int>(p.p.size()), eval.classifier->classes());
}

TEST(Report, FormatMeanStd) {
  EXPECT_EQ(format_mean_std({27.10, 12.8}), "27.10±12.8");
  EXPECT_EQ(format_mean_std({5.0, 0.0}), "5.00±0.00");
  EXPECT_EQ(format_mean_std({1.234, 0.0456}), "1.23±0.0456");
  EXPECT_EQ(format_mean_std({1.0, 9.996}), "1.00±10.0");
  EXPECT_EQ(format_mean_std({100.0, 123.4}), "100.00±123");
}

TEST(Report, SingleImageHasZeroStd) {
  const MetricSeries one{{42.0}};
  const MetricReport r = build_report("pixel(f) + local(f)", one, one, one);
  EXPECT_EQ(r.n_images, 1);
  EXPECT_EQ(format_mean_std(r.qis), "42.00±0.00");
}

TEST(Report, MismatchedCountsRejected) {
  EXPECT_THROW(build_report("x", MetricSeries{{1, 2}}, MetricSeries{{1}}, MetricSeries{{1, 2}}), ConfigError);
}

TEST(Report, JsonRoundTripIsExact) {
  MetricReport r = build_report("pixel(f) + local(fb)", MetricSeries{{1.0 / 3.0, 2.718281828459045, 1e-300}},
                                MetricSeries{{-12.345678901234567, 0.1, 0.2}},
                                MetricSeries{{99.99999999999999, 100.0, 3.0e-17}});
  r.seed = 18446744073709551615ULL;
  const std::string json = report_to_json(r);
  EXPECT_EQ(report_from_json(json), r);
  EXPECT_NE(json.find("\"qis\""), std::string::npos);
  EXPECT_NE(json.find("\"n_images\": 3"), std::string::npos);
  EXPECT_THROW(report_from_json("{not json"), IoError);
}

TEST(Report, TableHasOneRowPerReport) {
  const MetricSeries s{{1.0, 2.0}};
  const std::vector<MetricReport> rows = {build_report("pixel(f) + local(f)", s, s, s),
                                          build_report("pixel(f) + local(fb)", s, s, s)};
  const std::string table = report_table(rows, "Table");
  EXPECT_NE(table.find("pixel(f) + local(fb)"), std::string::npos);
  EXPECT_NE(table.find("1.50±0.500"), std::string::npos);
  EXPECT_EQ(std::count(table.begin(), table.end(), '\n'), 4);
}
