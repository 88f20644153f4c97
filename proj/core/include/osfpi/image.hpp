// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <torch/types.h>

namespace osfpi {

/// Continuous pixel coordinate. Pixel (col, row) has its center at (x, y) = (col, row).
struct PixelPoint {
  double x = 0.0;
  double y = 0.0;
};

/// 8-bit interleaved image, height x width x channels.
class Image {
 public:
  Image() = default;
  Image(int height, int width, int channels = 3);

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  int channels() const noexcept { return channels_; }
  bool empty() const noexcept { return pixels_.empty(); }

  std::uint8_t& at(int row, int col, int channel) {
    return pixels_[index(row, col, channel)];
  }
  std::uint8_t at(int row, int col, int channel) const {
    return pixels_[index(row, col, channel)];
  }

  std::span<std::uint8_t> pixels() noexcept { return pixels_; }
  std::span<const std::uint8_t> pixels() const noexcept { return pixels_; }

  /// Bilinear sample of one channel at a continuous pixel coordinate, clamped at the border.
  double sample(double x, double y, int channel) const;

  /// Rotates by quarter_turns * 90 degrees clockwise. Square images keep their shape.
  Image rotated(int quarter_turns) const;

  bool operator==(const Image& other) const = default;

 private:
  std::size_t index(int row, int col, int channel) const noexcept {
    return (static_cast<std::size_t>(row) * width_ + col) * channels_ + channel;
  }

  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  std::vector<std::uint8_t> pixels_;
};

/// Pixel values are mapped from [0, 255] to [-1, 1]. Returns [3, H, W] float32.
torch::Tensor image_to_tensor(const Image& image);

/// Stacks images of identical size into [B, 3, H, W].
torch::Tensor images_to_batch(std::span<const Image* const> images);

void write_png(const std::filesystem::path& path, const Image& image);
Image read_png(const std::filesystem::path& path);

/// Filled circle outline of the given radius; used for markers on report overlays.
void draw_ring(Image& image, PixelPoint center, double radius, double thickness,
               std::uint8_t r, std::uint8_t g, std::uint8_t b);
void draw_line(Image& image, PixelPoint from, PixelPoint to, std::uint8_t r, std::uint8_t g,
               std::uint8_t b);

/// Blends a heatmap (any range) over an RGB image using a red-yellow ramp.
Image overlay_heatmap(const Image& base, const torch::Tensor& heatmap, double alpha = 0.5);

}  // namespace osfpi
