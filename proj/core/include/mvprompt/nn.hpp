#pragma once

#include <string>

#include "mvprompt/checkpoint.hpp"
#include "mvprompt/rng.hpp"
#include "mvprompt/tensor.hpp"

// Minimal inference-only layers over row-major token matrices
// (rows = tokens / spatial positions, cols = features / channels).
namespace mvp::nn {

struct Linear {
  Mat weight;   // in x out
  RowVec bias;  // out

  Linear() = default;
  Linear(int in, int out, Rng& rng, double gain = 1.0);
  Linear(Mat w, RowVec b) : weight(std::move(w)), bias(std::move(b)) {}
  static Linear identity(int dim);

  int in_features() const { return static_cast<int>(weight.rows()); }
  int out_features() const { return static_cast<int>(weight.cols()); }

  Mat forward(const Mat& x) const;
  RowVec forward(const RowVec& x) const;

  void save(Checkpoint& ck, const std::string& prefix) const;
  void load(const Checkpoint& ck, const std::string& prefix);
};

/// Normalises each row over its features.
struct LayerNorm {
  RowVec gamma;
  RowVec beta;
  double eps = 1e-5;

  LayerNorm() = default;
  explicit LayerNorm(int dim) : gamma(RowVec::Ones(dim)), beta(RowVec::Zero(dim)) {}

  Mat forward(const Mat& x) const;
  void save(Checkpoint& ck, const std::string& prefix) const;
  void load(const Checkpoint& ck, const std::string& prefix);
};

/// GroupNorm over one frame: statistics per channel group across all
/// spatial rows. Frames never share statistics.
struct GroupNorm {
  int groups = 1;
  RowVec gamma;
  RowVec beta;
  double eps = 1e-5;

  GroupNorm() = default;
  GroupNorm(int groups, int channels);

  Mat forward(const Mat& x) const;
  void save(Checkpoint& ck, const std::string& prefix) const;
  void load(const Checkpoint& ck, const std::string& prefix);
};

/// 3x3 convolution, padding 1, on a (h*w) x in_channels frame.
struct Conv2d {
  int in_channels = 0;
  int out_channels = 0;
  int stride = 1;
  Mat weight;  // (in*9) x out, rows ordered (in, ky, kx)
  RowVec bias;

  Conv2d() = default;
  Conv2d(int in, int out, int stride, Rng& rng, double gain = 1.0);

  static int output_size(int size, int stride) { return (size - 1) / stride + 1; }
  Mat forward(const Mat& x, int height, int width) const;

  void save(Checkpoint& ck, const std::string& prefix) const;
  void load(const Checkpoint& ck, const std::string& prefix);
};

/// Nearest-neighbour 2x upsampling of a (h*w) x c frame.
Mat upsample2x(const Mat& x, int height, int width);

Mat silu(const Mat& x);
RowVec silu(const RowVec& x);
Mat gelu(const Mat& x);

/// Numerically stable row-wise softmax.
Mat softmax_rows(const Mat& scores);

/// softmax(q k^T / sqrt(d)) v with d = q.cols().
Mat attention(const Mat& q, const Mat& k, const Mat& v);

/// Sinusoidal timestep features of even dimension `dim`.
RowVec timestep_features(double t, int dim);

}  // namespace mvp::nn
