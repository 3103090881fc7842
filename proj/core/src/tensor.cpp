#include "mvprompt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "mvprompt/errors.hpp"

namespace mvp {

std::string FrameShape::str() const {
  std::ostringstream os;
  os << "(" << batch << "," << frames << "," << channels << "," << height << ","
     << width << ")";
  return os.str();
}

FrameTensor::FrameTensor(FrameShape shape, double fill)
    : shape_(shape), data_(shape.numel(), fill) {
  if (shape.batch < 0 || shape.frames < 0 || shape.channels < 0 || shape.height < 0 ||
      shape.width < 0) {
    throw DimensionError("negative tensor dimension " + shape.str());
  }
}

std::size_t FrameTensor::offset(int b, int f) const {
  return (static_cast<std::size_t>(b) * shape_.frames + f) * shape_.frame_size();
}

std::span<double> FrameTensor::frame(int b, int f) {
  return std::span<double>(data_).subspan(offset(b, f), shape_.frame_size());
}

std::span<const double> FrameTensor::frame(int b, int f) const {
  return std::span<const double>(data_).subspan(offset(b, f), shape_.frame_size());
}

double& FrameTensor::at(int b, int f, int c, int y, int x) {
  return data_[offset(b, f) + (static_cast<std::size_t>(c) * shape_.height + y) * shape_.width + x];
}

double FrameTensor::at(int b, int f, int c, int y, int x) const {
  return data_[offset(b, f) + (static_cast<std::size_t>(c) * shape_.height + y) * shape_.width + x];
}

bool FrameTensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

bool FrameTensor::operator==(const FrameTensor& other) const {
  if (!(shape_ == other.shape_)) return false;
  return data_.empty() ||
         std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(double)) == 0;
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("max_abs_diff: size mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double l2_norm(std::span<const double> a) {
  double s = 0.0;
  for (double v : a) s += v * v;
  return std::sqrt(s);
}

std::uint64_t content_hash(const Image& image) {
  std::uint64_t h = 14695981039346656037ull;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ull;
    }
  };
  mix(&image.width, sizeof image.width);
  mix(&image.height, sizeof image.height);
  mix(image.rgb.data(), image.rgb.size() * sizeof(double));
  return h;
}

double mean_abs_error(const Image& a, const Image& b) {
  if (a.width != b.width || a.height != b.height) {
    throw DimensionError("mean_abs_error: image size mismatch");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.rgb.size(); ++i) s += std::abs(a.rgb[i] - b.rgb[i]);
  return a.rgb.empty() ? 0.0 : s / static_cast<double>(a.rgb.size());
}

}  // namespace mvp
