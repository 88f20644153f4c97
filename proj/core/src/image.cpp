// SPDX-License-Identifier: Apache-2.0
#include "osfpi/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include <png.h>
#include <torch/torch.h>

#include "osfpi/errors.hpp"

namespace osfpi {

Image::Image(int height, int width, int channels)
    : height_(height), width_(width), channels_(channels) {
  if (height <= 0 || width <= 0 || channels <= 0) {
    throw std::invalid_argument("Image: dimensions must be positive");
  }
  pixels_.assign(static_cast<std::size_t>(height) * width * channels, 0);
}

double Image::sample(double x, double y, int channel) const {
  x = std::clamp(x, 0.0, static_cast<double>(width_ - 1));
  y = std::clamp(y, 0.0, static_cast<double>(height_ - 1));
  const int x0 = static_cast<int>(std::floor(x));
  const int y0 = static_cast<int>(std::floor(y));
  const int x1 = std::min(x0 + 1, width_ - 1);
  const int y1 = std::min(y0 + 1, height_ - 1);
  const double fx = x - x0;
  const double fy = y - y0;
  const double top = (1.0 - fx) * at(y0, x0, channel) + fx * at(y0, x1, channel);
  const double bottom = (1.0 - fx) * at(y1, x0, channel) + fx * at(y1, x1, channel);
  return (1.0 - fy) * top + fy * bottom;
}

Image Image::rotated(int quarter_turns) const {
  const int turns = ((quarter_turns % 4) + 4) % 4;
  if (turns == 0) {
    return *this;
  }
  const bool swap = turns % 2 == 1;
  Image out(swap ? width_ : height_, swap ? height_ : width_, channels_);
  for (int r = 0; r < height_; ++r) {
    for (int c = 0; c < width_; ++c) {
      int dr = r;
      int dc = c;
      switch (turns) {
        case 1: dr = c; dc = height_ - 1 - r; break;
        case 2: dr = height_ - 1 - r; dc = width_ - 1 - c; break;
        case 3: dr = width_ - 1 - c; dc = r; break;
        default: break;
      }
      for (int ch = 0; ch < channels_; ++ch) {
        out.at(dr, dc, ch) = at(r, c, ch);
      }
    }
  }
  return out;
}

torch::Tensor image_to_tensor(const Image& image) {
  auto bytes = torch::from_blob(const_cast<std::uint8_t*>(image.pixels().data()),
                                {image.height(), image.width(), image.channels()},
                                torch::kUInt8);
  return bytes.permute({2, 0, 1}).to(torch::kFloat32).div(127.5).sub(1.0).contiguous();
}

torch::Tensor images_to_batch(std::span<const Image* const> images) {
  std::vector<torch::Tensor> tensors;
  tensors.reserve(images.size());
  for (const Image* image : images) {
    tensors.push_back(image_to_tensor(*image));
  }
  return torch::stack(tensors);
}

void write_png(const std::filesystem::path& path, const Image& image) {
  if (image.channels() != 3 && image.channels() != 1) {
    throw IoError("write_png: only 1 or 3 channel images are supported");
  }
  png_image info;
  std::memset(&info, 0, sizeof(info));
  info.version = PNG_IMAGE_VERSION;
  info.width = static_cast<png_uint_32>(image.width());
  info.height = static_cast<png_uint_32>(image.height());
  info.format = image.channels() == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  const std::string name = path.string();
  if (png_image_write_to_file(&info, name.c_str(), 0, image.pixels().data(), 0, nullptr) == 0) {
    throw IoError("write_png: " + name + ": " + info.message);
  }
}

Image read_png(const std::filesystem::path& path) {
  png_image info;
  std::memset(&info, 0, sizeof(info));
  info.version = PNG_IMAGE_VERSION;
  const std::string name = path.string();
  if (png_image_begin_read_from_file(&info, name.c_str()) == 0) {
    throw IoError("read_png: " + name + ": " + info.message);
  }
  info.format = PNG_FORMAT_RGB;
  Image image(static_cast<int>(info.height), static_cast<int>(info.width), 3);
  if (png_image_finish_read(&info, nullptr, image.pixels().data(), 0, nullptr) == 0) {
    png_image_free(&info);
    throw IoError("read_png: " + name + ": " + info.message);
  }
  return image;
}

namespace {

void put(Image& image, int row, int col, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  if (row < 0 || col < 0 || row >= image.height() || col >= image.width()) {
    return;
  }
  image.at(row, col, 0) = r;
  image.at(row, col, 1) = g;
  image.at(row, col, 2) = b;
}

}  // namespace

void draw_ring(Image& image, PixelPoint center, double radius, double thickness,
               std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  const int reach = static_cast<int>(std::ceil(radius + thickness));
  const int cx = static_cast<int>(std::lround(center.x));
  const int cy = static_cast<int>(std::lround(center.y));
  for (int dy = -reach; dy <= reach; ++dy) {
    for (int dx = -reach; dx <= reach; ++dx) {
      const double d = std::hypot(cx + dx - center.x, cy + dy - center.y);
      if (std::abs(d - radius) <= thickness * 0.5) {
        put(image, cy + dy, cx + dx, r, g, b);
      }
    }
  }
}

void draw_line(Image& image, PixelPoint from, PixelPoint to, std::uint8_t r, std::uint8_t g,
               std::uint8_t b) {
  const double length = std::hypot(to.x - from.x, to.y - from.y);
  const int steps = std::max(1, static_cast<int>(std::ceil(length * 2.0)));
  for (int i = 0; i <= steps; ++i) {
    const double t = static_cast<double>(i) / steps;
    put(image, static_cast<int>(std::lround(from.y + t * (to.y - from.y))),
        static_cast<int>(std::lround(from.x + t * (to.x - from.x))), r, g, b);
  }
}

Image overlay_heatmap(const Image& base, const torch::Tensor& heatmap, double alpha) {
  auto map = heatmap.detach().to(torch::kFloat64).squeeze().contiguous();
  if (map.dim() != 2 || map.size(0) != base.height() || map.size(1) != base.width()) {
    throw DimensionMismatch("overlay_heatmap: heatmap must match the image size");
  }
  const double lo = map.min().item<double>();
  const double hi = map.max().item<double>();
  const double span = hi > lo ? hi - lo : 1.0;
  auto acc = map.accessor<double, 2>();
  Image out = base;
  for (int row = 0; row < base.height(); ++row) {
    for (int col = 0; col < base.width(); ++col) {
      const double v = (acc[row][col] - lo) / span;
      const double heat[3] = {255.0, 255.0 * v, 0.0};
      for (int ch = 0; ch < 3; ++ch) {
        const double mixed = (1.0 - alpha * v) * base.at(row, col, ch) + alpha * v * heat[ch];
        out.at(row, col, ch) = static_cast<std::uint8_t>(std::clamp(std::lround(mixed), 0L, 255L));
      }
    }
  }
  return out;
}

}  // namespace osfpi
