#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace mvp {

/// Token matrices are row-major: one row per token.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVec = Eigen::Matrix<double, 1, Eigen::Dynamic>;

struct FrameShape {
  int batch = 0;
  int frames = 0;
  int channels = 0;
  int height = 0;
  int width = 0;

  std::size_t frame_size() const {
    return static_cast<std::size_t>(channels) * height * width;
  }
  std::size_t numel() const {
    return static_cast<std::size_t>(batch) * frames * frame_size();
  }
  bool operator==(const FrameShape&) const = default;
  std::string str() const;
};

/// Dense (batch, frames, channels, height, width) tensor, row-major.
class FrameTensor {
 public:
  FrameTensor() = default;
  explicit FrameTensor(FrameShape shape, double fill = 0.0);

  const FrameShape& shape() const { return shape_; }
  std::size_t numel() const { return data_.size(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  /// One (c, h, w) frame.
  std::span<double> frame(int b, int f);
  std::span<const double> frame(int b, int f) const;

  double& at(int b, int f, int c, int y, int x);
  double at(int b, int f, int c, int y, int x) const;

  bool all_finite() const;

  /// Bitwise equality of shape and contents.
  bool operator==(const FrameTensor& other) const;

 private:
  std::size_t offset(int b, int f) const;

  FrameShape shape_;
  std::vector<double> data_;
};

double max_abs_diff(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> a);

/// RGB image, height x width x 3 interleaved, nominal range [0, 1].
struct Image {
  int width = 0;
  int height = 0;
  std::vector<double> rgb;

  Image() = default;
  Image(int w, int h, double fill = 0.0)
      : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, fill) {}

  double& at(int y, int x, int c) {
    return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  double at(int y, int x, int c) const {
    return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  bool square() const { return width == height; }
  bool operator==(const Image&) const = default;
};

/// FNV-1a over the raw bytes of the image (shape included).
std::uint64_t content_hash(const Image& image);

double mean_abs_error(const Image& a, const Image& b);

}  // namespace mvp
