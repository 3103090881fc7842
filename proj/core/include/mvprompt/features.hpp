#pragma once

#include <vector>

#include "mvprompt/tensor.hpp"

namespace mvp {

/// Encoder hidden state before pooling: 1 class token + one token per patch.
struct HiddenTokens {
  Mat tokens;  // n_tokens x d_enc
  int count() const { return static_cast<int>(tokens.rows()); }
};

/// Resampled (and adapted) per-image tokens fed to cross-attention.
struct LocalTokens {
  Mat tokens;  // 16 x d_ctx
  int count() const { return static_cast<int>(tokens.rows()); }
};

/// Latent of one image, (channels, height, width) row-major.
struct PixelLatent {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> values;

  PixelLatent() = default;
  PixelLatent(int c, int h, int w, double fill = 0.0)
      : channels(c), height(h), width(w), values(static_cast<std::size_t>(c) * h * w, fill) {}

  double& at(int c, int y, int x) {
    return values[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  double at(int c, int y, int x) const {
    return values[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  bool same_shape(const PixelLatent& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }
  bool operator==(const PixelLatent&) const = default;
};

struct TextContext {
  Mat tokens;  // T x d_ctx
};

}  // namespace mvp
