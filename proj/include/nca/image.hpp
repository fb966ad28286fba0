// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace nca {

/// Interleaved RGB raster with values in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<float> rgb;

  Image() = default;
  Image(int h, int w) : height(h), width(w), rgb(static_cast<std::size_t>(h) * w * 3, 0.0f) {}

  float& at(int row, int col, int channel) {
    return rgb[(static_cast<std::size_t>(row) * width + col) * 3 + channel];
  }
  float at(int row, int col, int channel) const {
    return rgb[(static_cast<std::size_t>(row) * width + col) * 3 + channel];
  }

  friend bool operator==(const Image&, const Image&) = default;
};

inline constexpr int kDomainSize = 64;

/// Decodes a PNG, JPEG or TIFF file into RGB in [0, 1]. Grayscale sources
/// are replicated to three channels and alpha is dropped.
Image decode_image(const std::filesystem::path& path);

/// Bilinear resampling with half-pixel centres (source coordinate
/// (dst + 0.5) · in/out − 0.5, clamped to the border).
Image resize_bilinear(const Image& image, int height, int width);

/// decode_image followed by resampling to the 64×64 domain.
Image load_image_64(const std::filesystem::path& path);

void write_png_rgb(const std::filesystem::path& path, const Image& image);
void write_png_gray(const std::filesystem::path& path, int height, int width,
                    const std::vector<std::uint8_t>& pixels);

}  // namespace nca
