#include "mvprompt/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <iomanip>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mvprompt/errors.hpp"
#include "mvprompt/rng.hpp"

namespace mvp {

void ClassProbabilities::validate(double tol) const {
  if (p.empty()) throw NumericError("class probabilities: empty vector");
  double sum = 0.0;
  for (double v : p) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw NumericError("class probabilities: negative or non-finite entry");
    sum += v;
  }
  if (std::abs(sum - 1.0) > tol) {
    throw NumericError("class probabilities: entries sum to " + std::to_string(sum) + ", not 1");
  }
}

MeanStd mean_std(std::span<const double> values) {
  if (values.empty()) throw NumericError("mean_std: no values");
  double sum = 0.0;
  for (double v : values) sum += v;
  const double mean = sum / static_cast<double>(values.size());
  double sq = 0.0;
  for (double v : values) sq += (v - mean) * (v - mean);
  return {mean, std::sqrt(sq / static_cast<double>(values.size()))};
}

MeanStd MetricSeries::summary() const { return mean_std(values); }

double quality_score(const ClassProbabilities& probs) {
  probs.validate();
  // exp(KL(p || u)) = prod_i (C p_i)^p_i, with 0^0 = 1; exact for uniform and one-hot p
  const double c = static_cast<double>(probs.p.size());
  double prod = 1.0;
  for (double v : probs.p) {
    if (v > 0.0) prod *= std::pow(c * v, v);
  }
  if (prod > 0.0 && std::isfinite(prod)) return prod;
  double kl = 0.0;
  for (double v : probs.p) {
    if (v > 0.0) kl += v * std::log(c * v);
  }
  return std::exp(kl);
}

MetricSeries quality_inception_score(std::span<const ClassProbabilities> probs) {
  if (probs.empty()) throw NumericError("qis: no images");
  MetricSeries s;
  for (const auto& p : probs) s.values.push_back(quality_score(p));
  return s;
}

double cosine_similarity(const RowVec& a, const RowVec& b) {
  if (a.size() != b.size()) throw DimensionError("cosine: dimension mismatch");
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) throw NumericError("cosine: zero-norm embedding");
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

MetricSeries cosine_scores(std::span<const RowVec> embeddings, const RowVec& reference) {
  if (embeddings.empty()) throw NumericError("clip score: no images");
  MetricSeries s;
  for (const auto& e : embeddings) s.values.push_back(100.0 * cosine_similarity(e, reference));
  return s;
}

// ---------------------------------------------------------------------------
// Toy backends

namespace {

constexpr int kPoolGrid = 8;

RowVec pooled_features(const Image& image, int input_size) {
  if (image.width != input_size || image.height != input_size) {
    throw DimensionError("evaluator: expected " + std::to_string(input_size) + "x" + std::to_string(input_size) +
                         " image, got " + std::to_string(image.width) + "x" + std::to_string(image.height));
  }
  const int cell = input_size / kPoolGrid;
  RowVec f = RowVec::Zero(kPoolGrid * kPoolGrid * 3);
  for (int gy = 0; gy < kPoolGrid; ++gy) {
    for (int gx = 0; gx < kPoolGrid; ++gx) {
      for (int c = 0; c < 3; ++c) {
        double s = 0.0;
        for (int y = 0; y < cell; ++y) {
          for (int x = 0; x < cell; ++x) s += image.at(gy * cell + y, gx * cell + x, c);
        }
        f[(gy * kPoolGrid + gx) * 3 + c] = 2.0 * s / (cell * cell) - 1.0;
      }
    }
  }
  return f;
}

void check_input_size(int input_size) {
  if (input_size < kPoolGrid || input_size % kPoolGrid != 0) {
    throw ConfigError("evaluator: input size must be a positive multiple of 8");
  }
}

}  // namespace

ToyClassifier::ToyClassifier(int classes, int input_size, std::uint64_t seed) : input_size_(input_size) {
  check_input_size(input_size);
  if (classes < 2) throw ConfigError("classifier: need at least two classes");
  Rng rng(derive_seed(seed, "toy_classifier"));
  const int in = kPoolGrid * kPoolGrid * 3;
  weight_ = rng.normal_matrix(in, classes, 3.0 / std::sqrt(static_cast<double>(in)));
  bias_ = rng.normal_matrix(1, classes, 0.5);
}

ClassProbabilities ToyClassifier::classify(const Image& image) const {
  const RowVec logits = pooled_features(image, input_size_) * weight_ + bias_;
  const double m = logits.maxCoeff();
  ClassProbabilities out;
  double sum = 0.0;
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    out.p.push_back(std::exp(logits[i] - m));
    sum += out.p.back();
  }
  for (double& v : out.p) v /= sum;
  return out;
}

ToyImageEmbedder::ToyImageEmbedder(int dim, int input_size, std::uint64_t seed) : input_size_(input_size) {
  check_input_size(input_size);
  Rng rng(derive_seed(seed, "toy_image_embedder"));
  const int in = kPoolGrid * kPoolGrid * 3;
  w1_ = rng.normal_matrix(in, 2 * dim, 1.0 / std::sqrt(static_cast<double>(in)));
  w2_ = rng.normal_matrix(2 * dim, dim, 1.0 / std::sqrt(2.0 * dim));
}

RowVec ToyImageEmbedder::embed(const Image& image) const {
  const RowVec h = (pooled_features(image, input_size_) * w1_).array().tanh();
  return h * w2_;
}

RowVec HashTextEmbedder::embed(std::string_view text) const {
  if (text.empty()) throw ConfigError("text embedder: empty text");
  Rng rng(derive_seed(seed_, text));
  return rng.normal_matrix(1, dim_, 1.0);
}

EvalBackends EvalBackends::toy(std::uint64_t seed, int input_size) {
  constexpr int kEmbedDim = 32;
  return {std::make_shared<ToyClassifier>(10, input_size, seed),
          std::make_shared<ToyImageEmbedder>(kEmbedDim, input_size, seed),
          std::make_shared<HashTextEmbedder>(kEmbedDim, derive_seed(seed, "text_embedder"))};
}

MetricSeries quality_inception_score(std::span<const Image> images, const ImageClassifier& classifier) {
  std::vector<ClassProbabilities> probs;
  for (const auto& img : images) probs.push_back(classifier.classify(img));
  return quality_inception_score(probs);
}

MetricSeries clip_image_score(std::span<const Image> images, const Image& prompt_image,
                              const ImageEmbedder& embedder) {
  std::vector<RowVec> e;
  for (const auto& img : images) e.push_back(embedder.embed(img));
  return cosine_scores(e, embedder.embed(prompt_image));
}

MetricSeries clip_text_score(std::span<const Image> images, std::string_view text, const TextEmbedder& text_embedder,
                             const ImageEmbedder& image_embedder) {
  std::vector<RowVec> e;
  for (const auto& img : images) e.push_back(image_embedder.embed(img));
  return cosine_scores(e, text_embedder.embed(text));
}

// ---------------------------------------------------------------------------
// Reports

bool MetricReport::operator==(const MetricReport& o) const {
  auto same = [](const MeanStd& a, const MeanStd& b) { return a.mean == b.mean && a.std == b.std; };
  return config == o.config && n_images == o.n_images && same(qis, o.qis) && same(clip_tx, o.clip_tx) &&
         same(clip_im, o.clip_im) && seed == o.seed && eval_size == o.eval_size && resized == o.resized;
}

MetricReport build_report(const std::string& config, const MetricSeries& qis, const MetricSeries& clip_tx,
                          const MetricSeries& clip_im) {
  if (qis.values.size() != clip_tx.values.size() || qis.values.size() != clip_im.values.size()) {
    throw ConfigError("report: metrics were computed on different image counts (" +
                      std::to_string(qis.values.size()) + ", " + std::to_string(clip_tx.values.size()) + ", " +
                      std::to_string(clip_im.values.size()) + ")");
  }
  MetricReport r;
  r.config = config;
  r.n_images = static_cast<int>(qis.values.size());
  r.qis = qis.summary();
  r.clip_tx = clip_tx.summary();
  r.clip_im = clip_im.summary();
  return r;
}

std::string format_mean_std(const MeanStd& v) {
  char mean[64];
  std::snprintf(mean, sizeof mean, "%.2f", v.mean);
  int decimals = 2;
  if (v.std > 0.0) {
    const int magnitude = static_cast<int>(std::floor(std::log10(v.std)));
    decimals = std::max(0, 2 - magnitude);
    // rounding can carry into the next decade (9.996 -> 10.0)
    const double rounded = std::round(v.std * std::pow(10.0, decimals)) / std::pow(10.0, decimals);
    if (rounded >= std::pow(10.0, magnitude + 1) && decimals > 0) --decimals;
  }
  char sd[64];
  std::snprintf(sd, sizeof sd, "%.*f", decimals, v.std);
  return std::string(mean) + "±" + sd;
}

namespace {

nlohmann::json mean_std_json(const MeanStd& v) { return {{"mean", v.mean}, {"std", v.std}}; }

MeanStd mean_std_from(const nlohmann::json& j) { return {j.at("mean").get<double>(), j.at("std").get<double>()}; }

}  // namespace

std::string report_to_json(const MetricReport& r) {
  nlohmann::ordered_json j;
  j["config"] = r.config;
  if (r.seed) j["seed"] = *r.seed;
  j["n_images"] = r.n_images;
  j["qis"] = mean_std_json(r.qis);
  j["clip_tx"] = mean_std_json(r.clip_tx);
  j["clip_im"] = mean_std_json(r.clip_im);
  if (r.eval_size || r.resized) {
    j["preprocessing"] = {{"eval_size", r.eval_size.value_or(0)}, {"resized", r.resized.value_or(0)}};
  }
  return j.dump(2) + "\n";
}

MetricReport report_from_json(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError(std::string("report: invalid JSON: ") + e.what());
  }
  MetricReport r;
  r.config = j.at("config").get<std::string>();
  if (j.contains("seed")) r.seed = j.at("seed").get<std::uint64_t>();
  r.n_images = j.at("n_images").get<int>();
  r.qis = mean_std_from(j.at("qis"));
  r.clip_tx = mean_std_from(j.at("clip_tx"));
  r.clip_im = mean_std_from(j.at("clip_im"));
  if (j.contains("preprocessing")) {
    r.eval_size = j["preprocessing"].at("eval_size").get<int>();
    r.resized = j["preprocessing"].at("resized").get<int>();
  }
  return r;
}

std::string report_table(std::span<const MetricReport> reports, std::string_view title) {
  std::ostringstream os;
  if (!title.empty()) os << title << "\n";
  os << std::left << std::setw(28) << "Model" << std::setw(18) << "QIS" << std::setw(18) << "CLIP(TX)"
     << "CLIP(IM)\n";
  for (const auto& r : reports) {
    // setw counts bytes and the plus-minus sign is two bytes in UTF-8
    os << std::left << std::setw(28) << r.config << std::setw(19) << format_mean_std(r.qis) << std::setw(19)
       << format_mean_std(r.clip_tx) << format_mean_std(r.clip_im) << "\n";
  }
  return os.str();
}

}  // namespace mvp
