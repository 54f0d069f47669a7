#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <vector>

#include "ipose/scene_model.hpp"

namespace ipose {

/// Planar [C,H,W] raster with values in [0,1].
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 1;
  std::vector<double> pixels;

  static Image blank(std::size_t width, std::size_t height, std::size_t channels, double value = 0.0);

  ImageSize size() const { return {width, height}; }
  double& at(std::size_t c, std::size_t y, std::size_t x) {
    return pixels[(c * height + y) * width + x];
  }
  double at(std::size_t c, std::size_t y, std::size_t x) const {
    return pixels[(c * height + y) * width + x];
  }

  bool operator==(const Image&) const = default;
};

/// Reads binary PGM (P5, grayscale) or PPM (P6, RGB) with maxval <= 65535.
Image read_image(const std::filesystem::path& path);
/// Writes 8-bit P5 for one channel, P6 for three. Values are clamped to
/// [0,1] and rounded to the nearest of 256 levels.
void write_image(const Image& image, const std::filesystem::path& path);

/// Rounds every value to the nearest 8-bit level (what write/read yields).
void quantize_8bit(Image& image);

Image flip_horizontal(const Image& image);
Image flip_vertical(const Image& image);

/// Bilinear resampling with pixel centres aligned (centre x maps to
/// (x + 0.5) * new_w / w - 0.5).
Image resize_bilinear(const Image& image, ImageSize size);
/// Maps a coordinate under the same convention as resize_bilinear.
Point scale_point(Point p, ImageSize from, ImageSize to);

/// Gray <-> RGB conversion (luma average for RGB -> gray).
Image convert_channels(const Image& image, std::size_t channels);

using Rgb = std::array<double, 3>;

/// Filled disc of `radius` pixels on an RGB image.
void draw_disc(Image& image, Point centre, double radius, const Rgb& colour);
/// One-pixel line between two points on an RGB image.
void draw_line(Image& image, Point a, Point b, const Rgb& colour);

}  // namespace ipose
