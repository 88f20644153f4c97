// SPDX-License-Identifier: Apache-2.0
//
// Procedural stand-in for paired UAV/satellite imagery: a seeded world
// texture, satellite tiles of a given ground coverage, and UAV views centered
// on a known ground-truth point.
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "osfpi/image.hpp"
#include "osfpi/rng.hpp"

namespace osfpi {

struct WorldPoint {
  double x_m = 0.0;
  double y_m = 0.0;
};

struct WorldMap {
  Image image;
  double meters_per_pixel = 0.5;
  std::uint64_t seed = 0;

  double size_m() const { return image.width() * meters_per_pixel; }
  /// World meters to continuous world-image pixel coordinates (pixel centers at integers).
  PixelPoint to_pixel(WorldPoint p) const;
  WorldPoint to_world(PixelPoint p) const;
};

inline constexpr int kMinWorldSize = 1024;

/// Multi-octave value noise with seeded roads and buildings. Identical bytes
/// for identical arguments. Throws std::invalid_argument for size < 1024.
WorldMap generate_world(std::uint64_t seed, int size = 4096, double meters_per_pixel = 0.5);

/// Square ground footprint rendered to size_px x size_px.
struct TileGeometry {
  double origin_x_m = 0.0;  // top-left corner
  double origin_y_m = 0.0;
  double coverage_m = 0.0;
  int size_px = 384;

  double meters_per_pixel() const { return coverage_m / size_px; }
  PixelPoint to_pixel(WorldPoint p) const;
  WorldPoint to_world(PixelPoint p) const;

  static TileGeometry centered(WorldPoint center, double coverage_m, int size_px);
};

/// Box-filtered rendering of a tile; area outside the world repeats the border.
Image render_tile(const WorldMap& world, const TileGeometry& tile);

/// True when the footprint lies entirely inside the world.
bool inside_world(const WorldMap& world, const TileGeometry& tile);

struct SampleOptions {
  int sat_px = 384;
  int uav_px = 96;
  double uav_footprint_m = 40.0;
  bool jitter = true;
  double brightness = 0.1;  // max additive shift, fraction of full scale
  double contrast = 0.1;    // max relative gain change
  bool rotate = false;      // random quarter turns of the UAV view
  double central_fraction = 0.8;
};

/// UAV view of uav_footprint_m centered at a world point, no photometric change.
Image render_uav_view(const WorldMap& world, WorldPoint center, const SampleOptions& opts);

struct GeoSample {
  std::string id;
  Image sat;
  Image uav;
  double gt_x = 0.0;  // satellite pixels
  double gt_y = 0.0;
  double coverage_m = 0.0;
  double world_x_m = 0.0;
  double world_y_m = 0.0;
  TileGeometry tile;
};

/// Random tile of coverage_m inside the world, ground truth uniform in the
/// central fraction of the tile, UAV view centered on it. Throws OutOfBounds
/// when the coverage does not fit in the world.
GeoSample sample_pair(const WorldMap& world, Rng& rng, double coverage_m,
                      const SampleOptions& opts);

struct TestProtocol {
  double min_coverage_m = 180.0;
  double max_coverage_m = 463.0;
  int num_scales = 12;
  int samples_per_coverage = 10;

  void validate() const;
  /// Linearly spaced coverages from min to max.
  std::vector<double> coverages_m() const;
};

/// samples_per_coverage pairs at each coverage; sample i of scale j is drawn
/// from Rng::stream(seed, j * samples_per_coverage + i).
std::vector<GeoSample> build_test_set(const WorldMap& world, const TestProtocol& protocol,
                                      std::uint64_t seed, const SampleOptions& opts,
                                      const std::string& split = "test");

/// count pairs with coverage uniform in [min_coverage_m, max_coverage_m].
std::vector<GeoSample> build_train_set(const WorldMap& world, std::size_t count,
                                       double min_coverage_m, double max_coverage_m,
                                       std::uint64_t seed, const SampleOptions& opts,
                                       const std::string& split = "train");

/// Writes root/split/{sat,uav}/{id}.png and root/split/labels.csv.
void write_dataset(const std::filesystem::path& root, const std::string& split,
                   const std::vector<GeoSample>& samples);

/// Reads what write_dataset wrote. Tile geometry is reconstructed from the
/// labels (origin from world coordinates and the ground-truth pixel).
std::vector<GeoSample> load_dataset(const std::filesystem::path& root, const std::string& split);

}  // namespace osfpi
