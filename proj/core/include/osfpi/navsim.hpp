// SPDX-License-Identifier: Apache-2.0
//
// Closed-loop crop, predict, recrop navigation over a synthetic world.
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "osfpi/model.hpp"
#include "osfpi/synth.hpp"

namespace osfpi {

struct Trajectory {
  std::vector<WorldPoint> waypoints;
  double step_m = 20.0;  // nominal spacing

  /// >= 2 waypoints, consecutive spacing <= max_spacing_m. Throws std::invalid_argument.
  void validate(double max_spacing_m) const;

  /// CSV with columns x_m,y_m.
  static Trajectory load_csv(const std::filesystem::path& path, double step_m = 20.0);
  void save_csv(const std::filesystem::path& path) const;
};

/// Seeded random walk of `count` points `step_m` apart whose heading turns
/// by at most 30 degrees per step and bounces off a margin from the border.
Trajectory random_trajectory(const WorldMap& world, std::size_t count, double step_m,
                             double margin_m, std::uint64_t seed);

struct NavConfig {
  double search_coverage_m = 384.0;
  int search_px = 384;
  int uav_px = 96;
  double uav_footprint_m = 40.0;
  /// Frame-0 search center; the first waypoint when unset.
  std::optional<WorldPoint> initial_estimate;
};

struct LocalizerQuery {
  const Image& uav;
  const Image& sat;
  const TileGeometry& tile;
  PixelPoint true_px;  // for oracle and test localizers only
  std::size_t frame = 0;
};

/// Predicted UAV position in satellite-tile pixels.
using Localizer = std::function<PixelPoint(const LocalizerQuery&)>;

Localizer oracle_localizer();
/// Oracle plus a constant pixel bias.
Localizer biased_localizer(double dx_px, double dy_px);
/// Runs the network; input sizes must match the model config.
Localizer model_localizer(OsFpi model);

struct NavFrame {
  std::size_t frame = 0;
  WorldPoint truth;
  WorldPoint search_center;
  WorldPoint predicted;
  double error_m = 0.0;
  bool diverged = false;  // error beyond half the search coverage
};

struct NavState {
  double search_coverage_m = 0.0;
  std::vector<NavFrame> frames;

  double mean_error_m() const;
  bool diverged() const;
  /// Position believed after the last processed frame.
  WorldPoint believed() const;
};

/// Throws OutOfBounds naming the frame whose search region leaves the world.
NavState navigate(const WorldMap& world, const Trajectory& trajectory, const Localizer& localizer,
                  const NavConfig& cfg);

/// Red true track and blue predicted track on a crop of the world around both.
Image render_track_overlay(const WorldMap& world, const NavState& state);

/// Writes out_dir/navigation.csv (frame,true_x_m,true_y_m,pred_x_m,pred_y_m,error_m)
/// and out_dir/track.png.
void render_report(const WorldMap& world, const NavState& state,
                   const std::filesystem::path& out_dir);

}  // namespace osfpi
