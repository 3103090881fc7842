#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mvprompt/tensor.hpp"

namespace mvp {

struct ClassProbabilities {
  std::vector<double> p;

  /// Entries >= 0 and summing to 1 within `tol`; throws NumericError otherwise.
  void validate(double tol = 1e-6) const;
};

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
};

/// Per-image metric values plus their summary.
struct MetricSeries {
  std::vector<double> values;
  MeanStd summary() const;
};

/// Mean and population std, reduced left to right.
MeanStd mean_std(std::span<const double> values);

/// exp(KL(p || uniform)) = C * exp(-H(p)) for one image.
double quality_score(const ClassProbabilities& probs);
/// Quality-only Inception Score: per-image confidence term, no marginal.
MetricSeries quality_inception_score(std::span<const ClassProbabilities> probs);

/// Cosine similarity; throws NumericError on a zero-norm vector.
double cosine_similarity(const RowVec& a, const RowVec& b);
/// 100 * cosine(image_i, reference) for every image embedding.
MetricSeries cosine_scores(std::span<const RowVec> embeddings, const RowVec& reference);

class ImageClassifier {
 public:
  virtual ~ImageClassifier() = default;
  virtual int input_size() const = 0;
  virtual int classes() const = 0;
  virtual ClassProbabilities classify(const Image& image) const = 0;
};

class ImageEmbedder {
 public:
  virtual ~ImageEmbedder() = default;
  virtual int input_size() const = 0;
  virtual RowVec embed(const Image& image) const = 0;
};

class TextEmbedder {
 public:
  virtual ~TextEmbedder() = default;
  virtual RowVec embed(std::string_view text) const = 0;
};

/// Box-pooled 8x8 colour features followed by a seeded linear classifier.
class ToyClassifier final : public ImageClassifier {
 public:
  ToyClassifier(int classes, int input_size, std::uint64_t seed);
  int input_size() const override { return input_size_; }
  int classes() const override { return static_cast<int>(weight_.cols()); }
  ClassProbabilities classify(const Image& image) const override;

 private:
  int input_size_;
  Mat weight_;
  RowVec bias_;
};

/// Box-pooled colour features through a seeded two-layer tanh network.
class ToyImageEmbedder final : public ImageEmbedder {
 public:
  ToyImageEmbedder(int dim, int input_size, std::uint64_t seed);
  int input_size() const override { return input_size_; }
  RowVec embed(const Image& image) const override;

 private:
  int input_size_;
  Mat w1_, w2_;
};

class HashTextEmbedder final : public TextEmbedder {
 public:
  HashTextEmbedder(int dim, std::uint64_t seed) : dim_(dim), seed_(seed) {}
  RowVec embed(std::string_view text) const override;

 private:
  int dim_;
  std::uint64_t seed_;
};

/// Classifier and embedders used for scoring.
struct EvalBackends {
  std::shared_ptr<const ImageClassifier> classifier;
  std::shared_ptr<const ImageEmbedder> image_embedder;
  std::shared_ptr<const TextEmbedder> text_embedder;

  static EvalBackends toy(std::uint64_t seed, int input_size = 32);
  int input_size() const { return image_embedder->input_size(); }
};

MetricSeries quality_inception_score(std::span<const Image> images, const ImageClassifier& classifier);
MetricSeries clip_image_score(std::span<const Image> images, const Image& prompt_image,
                              const ImageEmbedder& embedder);
MetricSeries clip_text_score(std::span<const Image> images, std::string_view text, const TextEmbedder& text_embedder,
                             const ImageEmbedder& image_embedder);

struct MetricReport {
  std::string config;
  int n_images = 0;
  MeanStd qis;
  MeanStd clip_tx;
  MeanStd clip_im;
  std::optional<std::uint64_t> seed;
  /// Evaluator input side and how many images had to be resized to it.
  std::optional<int> eval_size;
  std::optional<int> resized;

  bool operator==(const MetricReport&) const;
};

/// Assembles a report; throws ConfigError if the series differ in length.
MetricReport build_report(const std::string& config, const MetricSeries& qis, const MetricSeries& clip_tx,
                          const MetricSeries& clip_im);

/// "27.10±12.8": mean with two decimals, std with three significant digits
/// (two decimals when zero).
std::string format_mean_std(const MeanStd& v);

std::string report_to_json(const MetricReport& report);
MetricReport report_from_json(std::string_view json);
/// Plain-text table, one row per report.
std::string report_table(std::span<const MetricReport> reports, std::string_view title = "");

}  // namespace mvp
