// SPDX-License-Identifier: Apache-2.0
#include "osfpi/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>

#include <fmt/format.h>

#include "osfpi/csv.hpp"
#include "osfpi/errors.hpp"

namespace osfpi {

namespace {

using Rgb = std::array<double, 3>;

double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

/// One octave of value noise on a lattice of the given period (in pixels).
class ValueNoiseOctave {
 public:
  ValueNoiseOctave(std::uint64_t seed, int octave, int period, int size)
      : period_(period), cells_(size / period + 2) {
    lattice_.resize(static_cast<std::size_t>(cells_) * cells_);
    for (int iy = 0; iy < cells_; ++iy) {
      for (int ix = 0; ix < cells_; ++ix) {
        const std::uint64_t h =
            mix64(seed ^ mix64((static_cast<std::uint64_t>(octave) << 48) ^
                               (static_cast<std::uint64_t>(iy) << 24) ^
                               static_cast<std::uint64_t>(ix)));
        lattice_[static_cast<std::size_t>(iy) * cells_ + ix] =
            static_cast<double>(h >> 11) * 0x1.0p-53;
      }
    }
  }

  double at(int x, int y) const {
    const int ix = x / period_;
    const int iy = y / period_;
    const double fx = smoothstep(static_cast<double>(x % period_) / period_);
    const double fy = smoothstep(static_cast<double>(y % period_) / period_);
    const double* row0 = &lattice_[static_cast<std::size_t>(iy) * cells_];
    const double* row1 = row0 + cells_;
    const double top = row0[ix] + fx * (row0[ix + 1] - row0[ix]);
    const double bottom = row1[ix] + fx * (row1[ix + 1] - row1[ix]);
    return top + fy * (bottom - top);
  }

 private:
  int period_;
  int cells_;
  std::vector<double> lattice_;
};

class FractalNoise {
 public:
  FractalNoise(std::uint64_t seed, int size, std::initializer_list<int> periods) {
    double amplitude = 1.0;
    int octave = 0;
    for (int period : periods) {
      octaves_.emplace_back(seed, octave++, period, size);
      amplitudes_.push_back(amplitude);
      total_ += amplitude;
      amplitude *= 0.55;
    }
  }

  /// In [0, 1].
  double at(int x, int y) const {
    double sum = 0.0;
    for (std::size_t i = 0; i < octaves_.size(); ++i) {
      sum += amplitudes_[i] * octaves_[i].at(x, y);
    }
    return sum / total_;
  }

 private:
  std::vector<ValueNoiseOctave> octaves_;
  std::vector<double> amplitudes_;
  double total_ = 0.0;
};

Rgb lerp(const Rgb& a, const Rgb& b, double t) {
  return {a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]), a[2] + t * (b[2] - a[2])};
}

Rgb terrain_color(double elevation, double moisture) {
  static constexpr std::array<Rgb, 5> kDry{{{70, 90, 120},
                                            {150, 140, 100},
                                            {170, 160, 110},
                                            {140, 120, 90},
                                            {190, 180, 170}}};
  static constexpr std::array<Rgb, 5> kWet{{{40, 70, 110},
                                            {60, 110, 60},
                                            {90, 140, 70},
                                            {50, 90, 50},
                                            {120, 130, 110}}};
  const double pos = std::clamp(elevation, 0.0, 1.0) * (kDry.size() - 1);
  const auto i = std::min(static_cast<std::size_t>(pos), kDry.size() - 2);
  const double t = pos - static_cast<double>(i);
  return lerp(lerp(kDry[i], kDry[i + 1], t), lerp(kWet[i], kWet[i + 1], t), moisture);
}

void set_pixel(Image& img, int row, int col, const Rgb& c) {
  if (row < 0 || col < 0 || row >= img.height() || col >= img.width()) {
    return;
  }
  for (int ch = 0; ch < 3; ++ch) {
    img.at(row, col, ch) = static_cast<std::uint8_t>(std::clamp(std::lround(c[ch]), 0L, 255L));
  }
}

void draw_road(Image& img, Rng& rng) {
  const int size = img.width();
  const double x0 = rng.uniform(0.0, size);
  const double y0 = rng.uniform(0.0, size);
  const double angle = rng.uniform(0.0, std::numbers::pi);
  const double length = rng.uniform(size / 8.0, size / 2.0);
  const double half_width = rng.uniform(1.5, 3.5);
  const Rgb color{rng.uniform(80, 110), rng.uniform(80, 110), rng.uniform(85, 115)};
  const double dx = std::cos(angle);
  const double dy = std::sin(angle);
  const int reach = static_cast<int>(std::ceil(half_width));
  for (double s = 0.0; s <= length; s += 0.5) {
    const double cx = x0 + s * dx;
    const double cy = y0 + s * dy;
    for (int oy = -reach; oy <= reach; ++oy) {
      for (int ox = -reach; ox <= reach; ++ox) {
        if (ox * ox + oy * oy <= half_width * half_width) {
          set_pixel(img, static_cast<int>(cy) + oy, static_cast<int>(cx) + ox, color);
        }
      }
    }
  }
}

void draw_building(Image& img, Rng& rng) {
  static constexpr std::array<Rgb, 6> kRoofs{{{170, 70, 60},
                                              {200, 200, 200},
                                              {120, 120, 130},
                                              {80, 110, 160},
                                              {220, 210, 180},
                                              {150, 100, 70}}};
  const int size = img.width();
  const int cx = static_cast<int>(rng.below(static_cast<std::uint64_t>(size)));
  const int cy = static_cast<int>(rng.below(static_cast<std::uint64_t>(size)));
  const int w = 8 + static_cast<int>(rng.below(29));
  const int h = 8 + static_cast<int>(rng.below(29));
  const Rgb roof = kRoofs[rng.below(kRoofs.size())];
  const double shade = rng.uniform(0.85, 1.15);
  const int x0 = cx - w / 2;
  const int y0 = cy - h / 2;
  constexpr int kShadow = 3;
  for (int r = y0 + kShadow; r < y0 + h + kShadow; ++r) {
    for (int c = x0 + kShadow; c < x0 + w + kShadow; ++c) {
      if (r >= 0 && c >= 0 && r < img.height() && c < img.width()) {
        set_pixel(img, r, c,
                  {img.at(r, c, 0) * 0.45, img.at(r, c, 1) * 0.45, img.at(r, c, 2) * 0.45});
      }
    }
  }
  for (int r = y0; r < y0 + h; ++r) {
    for (int c = x0; c < x0 + w; ++c) {
      const bool edge = r == y0 || c == x0 || r == y0 + h - 1 || c == x0 + w - 1;
      // Ridge line along the longer side.
      const bool ridge = w >= h ? r == y0 + h / 2 : c == x0 + w / 2;
      const double k = edge ? 0.6 : (ridge ? 0.8 : 1.0);
      set_pixel(img, r, c, {roof[0] * shade * k, roof[1] * shade * k, roof[2] * shade * k});
    }
  }
}

Image render_square(const WorldMap& world, double origin_x_m, double origin_y_m, double extent_m,
                    int size_px) {
  Image out(size_px, size_px, 3);
  const double step_m = extent_m / size_px;
  const int ss = std::clamp(static_cast<int>(std::ceil(step_m / world.meters_per_pixel - 1e-9)), 1, 8);
  const double inv = 1.0 / (ss * ss);
  for (int r = 0; r < size_px; ++r) {
    for (int c = 0; c < size_px; ++c) {
      double acc[3] = {0.0, 0.0, 0.0};
      for (int a = 0; a < ss; ++a) {
        for (int b = 0; b < ss; ++b) {
          const PixelPoint p = world.to_pixel({origin_x_m + (c + (b + 0.5) / ss) * step_m,
                                               origin_y_m + (r + (a + 0.5) / ss) * step_m});
          for (int ch = 0; ch < 3; ++ch) {
            acc[ch] += world.image.sample(p.x, p.y, ch);
          }
        }
      }
      for (int ch = 0; ch < 3; ++ch) {
        out.at(r, c, ch) = static_cast<std::uint8_t>(std::clamp(std::lround(acc[ch] * inv), 0L, 255L));
      }
    }
  }
  return out;
}

void apply_photometric(Image& img, double gain, double shift) {
  for (auto& v : img.pixels()) {
    const double out = (v - 127.5) * gain + 127.5 + shift;
    v = static_cast<std::uint8_t>(std::clamp(std::lround(out), 0L, 255L));
  }
}

}  // namespace

PixelPoint WorldMap::to_pixel(WorldPoint p) const {
  return {p.x_m / meters_per_pixel - 0.5, p.y_m / meters_per_pixel - 0.5};
}

WorldPoint WorldMap::to_world(PixelPoint p) const {
  return {(p.x + 0.5) * meters_per_pixel, (p.y + 0.5) * meters_per_pixel};
}

WorldMap generate_world(std::uint64_t seed, int size, double meters_per_pixel) {
  if (size < kMinWorldSize) {
    throw std::invalid_argument(
        fmt::format("world size {} is below the minimum {}", size, kMinWorldSize));
  }
  if (!(meters_per_pixel > 0.0)) {
    throw std::invalid_argument("meters_per_pixel must be positive");
  }
  WorldMap world{Image(size, size, 3), meters_per_pixel, seed};
  const FractalNoise elevation(seed, size, {512, 256, 128, 64, 32, 16, 8});
  const FractalNoise moisture(mix64(seed + 1), size, {256, 64, 16});
  const FractalNoise detail(mix64(seed + 2), size, {4, 2});
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      // Stretch the fractal sum, which concentrates around 0.5.
      const double e = std::clamp((elevation.at(x, y) - 0.5) * 2.2 + 0.5, 0.0, 1.0);
      const double m = std::clamp((moisture.at(x, y) - 0.5) * 2.0 + 0.5, 0.0, 1.0);
      Rgb c = terrain_color(e, m);
      const double grain = (detail.at(x, y) - 0.5) * 36.0;
      set_pixel(world.image, y, x, {c[0] + grain, c[1] + grain, c[2] + grain});
    }
  }
  Rng rng(mix64(seed + 3));
  const int roads = size / 64;
  for (int i = 0; i < roads; ++i) {
    draw_road(world.image, rng);
  }
  const auto buildings = static_cast<int>(static_cast<long long>(size) * size / 12000);
  for (int i = 0; i < buildings; ++i) {
    draw_building(world.image, rng);
  }
  return world;
}

PixelPoint TileGeometry::to_pixel(WorldPoint p) const {
  const double mpp = meters_per_pixel();
  return {(p.x_m - origin_x_m) / mpp - 0.5, (p.y_m - origin_y_m) / mpp - 0.5};
}

WorldPoint TileGeometry::to_world(PixelPoint p) const {
  const double mpp = meters_per_pixel();
  return {origin_x_m + (p.x + 0.5) * mpp, origin_y_m + (p.y + 0.5) * mpp};
}

TileGeometry TileGeometry::centered(WorldPoint center, double coverage_m, int size_px) {
  return {center.x_m - coverage_m / 2.0, center.y_m - coverage_m / 2.0, coverage_m, size_px};
}

Image render_tile(const WorldMap& world, const TileGeometry& tile) {
  return render_square(world, tile.origin_x_m, tile.origin_y_m, tile.coverage_m, tile.size_px);
}

bool inside_world(const WorldMap& world, const TileGeometry& tile) {
  const double size = world.size_m();
  return tile.origin_x_m >= 0.0 && tile.origin_y_m >= 0.0 &&
         tile.origin_x_m + tile.coverage_m <= size && tile.origin_y_m + tile.coverage_m <= size;
}

Image render_uav_view(const WorldMap& world, WorldPoint center, const SampleOptions& opts) {
  const double half = opts.uav_footprint_m / 2.0;
  return render_square(world, center.x_m - half, center.y_m - half, opts.uav_footprint_m,
                       opts.uav_px);
}

GeoSample sample_pair(const WorldMap& world, Rng& rng, double coverage_m,
                      const SampleOptions& opts) {
  if (!(coverage_m > 0.0) || coverage_m > world.size_m()) {
    throw OutOfBounds(fmt::format("coverage {} m does not fit in a {} m world", coverage_m,
                                  world.size_m()));
  }
  if (!(opts.uav_footprint_m > 0.0) || opts.uav_footprint_m >= coverage_m) {
    throw std::invalid_argument("UAV footprint must be positive and smaller than the coverage");
  }
  GeoSample s;
  s.coverage_m = coverage_m;
  s.tile = {rng.uniform(0.0, world.size_m() - coverage_m),
            rng.uniform(0.0, world.size_m() - coverage_m), coverage_m, opts.sat_px};
  const double margin = (1.0 - opts.central_fraction) / 2.0;
  s.world_x_m = s.tile.origin_x_m + coverage_m * (margin + opts.central_fraction * rng.uniform());
  s.world_y_m = s.tile.origin_y_m + coverage_m * (margin + opts.central_fraction * rng.uniform());
  // Always drawn so the stream position does not depend on the option flags.
  const double gain = 1.0 + opts.contrast * rng.uniform(-1.0, 1.0);
  const double shift = 255.0 * opts.brightness * rng.uniform(-1.0, 1.0);
  const int turns = static_cast<int>(rng.below(4));

  const PixelPoint gt = s.tile.to_pixel({s.world_x_m, s.world_y_m});
  s.gt_x = gt.x;
  s.gt_y = gt.y;
  s.sat = render_tile(world, s.tile);
  s.uav = render_uav_view(world, {s.world_x_m, s.world_y_m}, opts);
  if (opts.jitter) {
    apply_photometric(s.uav, gain, shift);
  }
  if (opts.rotate) {
    s.uav = s.uav.rotated(turns);
  }
  return s;
}

void TestProtocol::validate() const {
  if (num_scales < 1) {
    throw ConfigError("protocol.num_scales", "must be at least 1");
  }
  if (!(min_coverage_m > 0.0)) {
    throw ConfigError("protocol.min_coverage_m", "must be positive");
  }
  if (!(max_coverage_m >= min_coverage_m) || (num_scales > 1 && max_coverage_m == min_coverage_m)) {
    throw ConfigError("protocol.max_coverage_m",
                      fmt::format("{} must exceed min_coverage_m {}", max_coverage_m,
                                  min_coverage_m));
  }
  if (samples_per_coverage < 1) {
    throw ConfigError("protocol.samples_per_coverage", "must be at least 1");
  }
}

std::vector<double> TestProtocol::coverages_m() const {
  validate();
  std::vector<double> out;
  for (int i = 0; i < num_scales; ++i) {
    out.push_back(num_scales == 1 ? min_coverage_m
                                  : min_coverage_m + (max_coverage_m - min_coverage_m) * i /
                                                         (num_scales - 1));
  }
  return out;
}

std::vector<GeoSample> build_test_set(const WorldMap& world, const TestProtocol& protocol,
                                      std::uint64_t seed, const SampleOptions& opts,
                                      const std::string& split) {
  const auto coverages = protocol.coverages_m();
  std::vector<GeoSample> samples;
  for (std::size_t j = 0; j < coverages.size(); ++j) {
    for (int i = 0; i < protocol.samples_per_coverage; ++i) {
      const auto index = j * static_cast<std::size_t>(protocol.samples_per_coverage) + i;
      Rng rng = Rng::stream(seed, index);
      auto s = sample_pair(world, rng, coverages[j], opts);
      s.id = fmt::format("{}_{:02}_{:04}", split, j, i);
      samples.push_back(std::move(s));
    }
  }
  return samples;
}

std::vector<GeoSample> build_train_set(const WorldMap& world, std::size_t count,
                                       double min_coverage_m, double max_coverage_m,
                                       std::uint64_t seed, const SampleOptions& opts,
                                       const std::string& split) {
  std::vector<GeoSample> samples;
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng = Rng::stream(seed, i);
    const double coverage = rng.uniform(min_coverage_m, max_coverage_m);
    auto s = sample_pair(world, rng, coverage, opts);
    s.id = fmt::format("{}_{:05}", split, i);
    samples.push_back(std::move(s));
  }
  return samples;
}

void write_dataset(const std::filesystem::path& root, const std::string& split,
                   const std::vector<GeoSample>& samples) {
  const auto dir = root / split;
  std::filesystem::create_directories(dir / "sat");
  std::filesystem::create_directories(dir / "uav");
  std::ofstream labels(dir / "labels.csv");
  if (!labels) {
    throw IoError(fmt::format("cannot write {}", (dir / "labels.csv").string()));
  }
  labels << "sample_id,sat_path,uav_path,gt_x_px,gt_y_px,coverage_m,world_x_m,world_y_m\n";
  for (const auto& s : samples) {
    const std::string sat_rel = fmt::format("sat/{}.png", s.id);
    const std::string uav_rel = fmt::format("uav/{}.png", s.id);
    write_png(dir / sat_rel, s.sat);
    write_png(dir / uav_rel, s.uav);
    labels << fmt::format("{},{},{},{},{},{},{},{}\n", s.id, sat_rel, uav_rel, s.gt_x, s.gt_y,
                          s.coverage_m, s.world_x_m, s.world_y_m);
  }
}

std::vector<GeoSample> load_dataset(const std::filesystem::path& root, const std::string& split) {
  const auto dir = root / split;
  const auto table = CsvTable::read(dir / "labels.csv");
  const auto id = table.column("sample_id");
  const auto sat = table.column("sat_path");
  const auto uav = table.column("uav_path");
  const auto gx = table.column("gt_x_px");
  const auto gy = table.column("gt_y_px");
  const auto cov = table.column("coverage_m");
  const auto wx = table.column("world_x_m");
  const auto wy = table.column("world_y_m");
  std::vector<GeoSample> samples;
  for (std::size_t r = 0; r < table.rows(); ++r) {
    GeoSample s;
    s.id = table.text(r, id);
    s.sat = read_png(dir / table.text(r, sat));
    s.uav = read_png(dir / table.text(r, uav));
    s.gt_x = table.number(r, gx);
    s.gt_y = table.number(r, gy);
    s.coverage_m = table.number(r, cov);
    s.world_x_m = table.number(r, wx);
    s.world_y_m = table.number(r, wy);
    const double mpp = s.coverage_m / s.sat.width();
    s.tile = {s.world_x_m - (s.gt_x + 0.5) * mpp, s.world_y_m - (s.gt_y + 0.5) * mpp, s.coverage_m,
              s.sat.width()};
    samples.push_back(std::move(s));
  }
  return samples;
}

}  // namespace osfpi
