#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mvprompt/tensor.hpp"

namespace mvp {

/// Reads an 8-bit PNG (gray, gray+alpha, RGB or RGBA; alpha is dropped).
Image read_png(const std::filesystem::path& path);
struct PngText {
  std::string key;
  std::string value;
};

/// Writes an 8-bit RGB PNG; values are clamped to [0, 1] and rounded.
/// `text` entries are stored as uncompressed tEXt chunks.
void write_png(const std::filesystem::path& path, const Image& image, std::span<const PngText> text = {});
/// tEXt chunks of a PNG file.
std::vector<PngText> read_png_text(const std::filesystem::path& path);

/// Quantises to the 8-bit grid exactly as write_png does.
Image quantize8(const Image& image);

/// Bilinear resampling with half-pixel centres and clamped borders.
Image resize_bilinear(const Image& image, int width, int height);

/// Tiles equally sized images row-major into a cols-wide grid.
Image tile_grid(std::span<const Image> images, int cols);

}  // namespace mvp
