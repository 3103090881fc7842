#include "mvprompt/nn.hpp"

#include <cmath>

#include "mvprompt/errors.hpp"

namespace mvp::nn {

Linear::Linear(int in, int out, Rng& rng, double gain)
    : weight(rng.normal_matrix(in, out, gain / std::sqrt(static_cast<double>(in)))),
      bias(RowVec::Zero(out)) {
  for (int j = 0; j < out; ++j) bias[j] = 0.02 * rng.normal();
}

Linear Linear::identity(int dim) { return Linear(Mat::Identity(dim, dim), RowVec::Zero(dim)); }

Mat Linear::forward(const Mat& x) const {
  if (x.cols() != weight.rows()) {
    throw DimensionError("Linear: expected " + std::to_string(weight.rows()) + " input features, got " +
                         std::to_string(x.cols()));
  }
  Mat y = x * weight;
  y.rowwise() += bias;
  return y;
}

RowVec Linear::forward(const RowVec& x) const {
  if (x.size() != weight.rows()) throw DimensionError("Linear: input feature mismatch");
  return x * weight + bias;
}

void Linear::save(Checkpoint& ck, const std::string& prefix) const {
  ck.put(prefix + ".weight", weight);
  ck.put(prefix + ".bias", bias);
}

void Linear::load(const Checkpoint& ck, const std::string& prefix) {
  weight = ck.matrix(prefix + ".weight", in_features(), out_features());
  bias = ck.vector(prefix + ".bias", out_features());
}

Mat LayerNorm::forward(const Mat& x) const {
  Mat y(x.rows(), x.cols());
  const double n = static_cast<double>(x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mean = x.row(r).sum() / n;
    const double var = (x.row(r).array() - mean).square().sum() / n;
    const double inv = 1.0 / std::sqrt(var + eps);
    y.row(r) = ((x.row(r).array() - mean) * inv).matrix().cwiseProduct(gamma) + beta;
  }
  return y;
}

void LayerNorm::save(Checkpoint& ck, const std::string& prefix) const {
  ck.put(prefix + ".gamma", gamma);
  ck.put(prefix + ".beta", beta);
}

void LayerNorm::load(const Checkpoint& ck, const std::string& prefix) {
  gamma = ck.vector(prefix + ".gamma", static_cast<int>(gamma.size()));
  beta = ck.vector(prefix + ".beta", static_cast<int>(beta.size()));
}

GroupNorm::GroupNorm(int g, int channels)
    : groups(g), gamma(RowVec::Ones(channels)), beta(RowVec::Zero(channels)) {
  if (g <= 0 || channels % g != 0) {
    throw DimensionError("GroupNorm: channels must be divisible by groups");
  }
}

Mat GroupNorm::forward(const Mat& x) const {
  const Eigen::Index channels = x.cols();
  if (channels != gamma.size()) throw DimensionError("GroupNorm: channel mismatch");
  const Eigen::Index per_group = channels / groups;
  Mat y(x.rows(), channels);
  for (int g = 0; g < groups; ++g) {
    auto block = x.middleCols(g * per_group, per_group);
    const double n = static_cast<double>(block.size());
    const double mean = block.sum() / n;
    const double var = (block.array() - mean).square().sum() / n;
    const double inv = 1.0 / std::sqrt(var + eps);
    for (Eigen::Index c = 0; c < per_group; ++c) {
      const Eigen::Index ch = g * per_group + c;
      y.col(ch) = ((x.col(ch).array() - mean) * inv * gamma[ch] + beta[ch]).matrix();
    }
  }
  return y;
}

void GroupNorm::save(Checkpoint& ck, const std::string& prefix) const {
  ck.put(prefix + ".gamma", gamma);
  ck.put(prefix + ".beta", beta);
}

void GroupNorm::load(const Checkpoint& ck, const std::string& prefix) {
  gamma = ck.vector(prefix + ".gamma", static_cast<int>(gamma.size()));
  beta = ck.vector(prefix + ".beta", static_cast<int>(beta.size()));
}

Conv2d::Conv2d(int in, int out, int s, Rng& rng, double gain)
    : in_channels(in),
      out_channels(out),
      stride(s),
      weight(rng.normal_matrix(in * 9, out, gain / std::sqrt(static_cast<double>(in * 9)))),
      bias(RowVec::Zero(out)) {}

Mat Conv2d::forward(const Mat& x, int height, int width) const {
  if (x.cols() != in_channels || x.rows() != static_cast<Eigen::Index>(height) * width) {
    throw DimensionError("Conv2d: input shape mismatch");
  }
  const int oh = output_size(height, stride);
  const int ow = output_size(width, stride);
  Mat cols = Mat::Zero(static_cast<Eigen::Index>(oh) * ow, static_cast<Eigen::Index>(in_channels) * 9);
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      const Eigen::Index row = static_cast<Eigen::Index>(oy) * ow + ox;
      for (int ky = 0; ky < 3; ++ky) {
        const int iy = oy * stride + ky - 1;
        if (iy < 0 || iy >= height) continue;
        for (int kx = 0; kx < 3; ++kx) {
          const int ix = ox * stride + kx - 1;
          if (ix < 0 || ix >= width) continue;
          const Eigen::Index src = static_cast<Eigen::Index>(iy) * width + ix;
          for (int c = 0; c < in_channels; ++c) cols(row, c * 9 + ky * 3 + kx) = x(src, c);
        }
      }
    }
  }
  Mat y = cols * weight;
  y.rowwise() += bias;
  return y;
}

void Conv2d::save(Checkpoint& ck, const std::string& prefix) const {
  ck.put(prefix + ".weight", weight);
  ck.put(prefix + ".bias", bias);
}

void Conv2d::load(const Checkpoint& ck, const std::string& prefix) {
  weight = ck.matrix(prefix + ".weight", in_channels * 9, out_channels);
  bias = ck.vector(prefix + ".bias", out_channels);
}

Mat upsample2x(const Mat& x, int height, int width) {
  Mat y(static_cast<Eigen::Index>(height) * width * 4, x.cols());
  const int ow = width * 2;
  for (int oy = 0; oy < height * 2; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      y.row(static_cast<Eigen::Index>(oy) * ow + ox) = x.row(static_cast<Eigen::Index>(oy / 2) * width + ox / 2);
    }
  }
  return y;
}

Mat silu(const Mat& x) { return x.array() / (1.0 + (-x.array()).exp()); }

RowVec silu(const RowVec& x) { return x.array() / (1.0 + (-x.array()).exp()); }

Mat gelu(const Mat& x) {
  constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
  return (0.5 * x.array() * (1.0 + (k * (x.array() + 0.044715 * x.array().cube())).tanh())).matrix();
}

Mat softmax_rows(const Mat& scores) {
  Mat p(scores.rows(), scores.cols());
  for (Eigen::Index r = 0; r < scores.rows(); ++r) {
    const double m = scores.row(r).maxCoeff();
    p.row(r) = (scores.row(r).array() - m).exp();
    p.row(r) /= p.row(r).sum();
  }
  return p;
}

Mat attention(const Mat& q, const Mat& k, const Mat& v) {
  if (q.cols() != k.cols() || k.rows() != v.rows()) throw DimensionError("attention: shape mismatch");
  if (k.rows() == 0) throw DimensionError("attention: empty key set");
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  Mat scores = (q * k.transpose()) * scale;
  return softmax_rows(scores) * v;
}

RowVec timestep_features(double t, int dim) {
  if (dim % 2 != 0) throw DimensionError("timestep_features: dim must be even");
  const int half = dim / 2;
  RowVec f(dim);
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * i / half);
    f[i] = std::cos(t * freq);
    f[half + i] = std::sin(t * freq);
  }
  return f;
}

}  // namespace mvp::nn
