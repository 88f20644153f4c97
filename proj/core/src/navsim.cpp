// SPDX-License-Identifier: Apache-2.0
#include "osfpi/navsim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include <fmt/format.h>
#include <torch/torch.h>

#include "osfpi/csv.hpp"
#include "osfpi/errors.hpp"

namespace osfpi {

void Trajectory::validate(double max_spacing_m) const {
  if (waypoints.size() < 2) {
    throw std::invalid_argument("trajectory needs at least 2 waypoints");
  }
  for (std::size_t i = 1; i < waypoints.size(); ++i) {
    const double d = std::hypot(waypoints[i].x_m - waypoints[i - 1].x_m,
                                waypoints[i].y_m - waypoints[i - 1].y_m);
    if (d > max_spacing_m) {
      throw std::invalid_argument(fmt::format(
          "trajectory: waypoints {} and {} are {} m apart, limit {} m", i - 1, i, d, max_spacing_m));
    }
  }
}

Trajectory Trajectory::load_csv(const std::filesystem::path& path, double step_m) {
  const auto t = CsvTable::read(path);
  const auto xc = t.column("x_m");
  const auto yc = t.column("y_m");
  Trajectory traj;
  traj.step_m = step_m;
  for (std::size_t r = 0; r < t.rows(); ++r) {
    traj.waypoints.push_back({t.number(r, xc), t.number(r, yc)});
  }
  return traj;
}

void Trajectory::save_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) {
    throw IoError(fmt::format("cannot write {}", path.string()));
  }
  out << "x_m,y_m\n";
  for (const auto& p : waypoints) {
    out << fmt::format("{},{}\n", p.x_m, p.y_m);
  }
}

Trajectory random_trajectory(const WorldMap& world, std::size_t count, double step_m,
                             double margin_m, std::uint64_t seed) {
  const double lo = margin_m;
  const double hi = world.size_m() - margin_m;
  if (!(hi > lo)) {
    throw std::invalid_argument("random_trajectory: margin leaves no room");
  }
  Rng rng(seed);
  Trajectory traj;
  traj.step_m = step_m;
  WorldPoint p{rng.uniform(lo, hi), rng.uniform(lo, hi)};
  double heading = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double max_turn = std::numbers::pi / 6.0;
  for (std::size_t i = 0; i < count; ++i) {
    traj.waypoints.push_back(p);
    heading += rng.uniform(-max_turn, max_turn);
    WorldPoint next{p.x_m + step_m * std::cos(heading), p.y_m + step_m * std::sin(heading)};
    if (next.x_m < lo || next.x_m > hi) {
      heading = std::numbers::pi - heading;
    }
    if (next.y_m < lo || next.y_m > hi) {
      heading = -heading;
    }
    next = {std::clamp(p.x_m + step_m * std::cos(heading), lo, hi),
            std::clamp(p.y_m + step_m * std::sin(heading), lo, hi)};
    p = next;
  }
  return traj;
}

Localizer oracle_localizer() {
  return [](const LocalizerQuery& q) { return q.true_px; };
}

Localizer biased_localizer(double dx_px, double dy_px) {
  return [dx_px, dy_px](const LocalizerQuery& q) {
    return PixelPoint{q.true_px.x + dx_px, q.true_px.y + dy_px};
  };
}

Localizer model_localizer(OsFpi model) {
  return [model](const LocalizerQuery& q) mutable {
    const auto dtype = model->parameters().front().scalar_type();
    auto uav = image_to_tensor(q.uav).unsqueeze(0).to(dtype);
    auto sat = image_to_tensor(q.sat).unsqueeze(0).to(dtype);
    return predict(model, uav, sat).front().point;
  };
}

double NavState::mean_error_m() const {
  if (frames.empty()) {
    return 0.0;
  }
  double sum = 0.0;
  for (const auto& f : frames) sum += f.error_m;
  return sum / static_cast<double>(frames.size());
}

bool NavState::diverged() const {
  return std::any_of(frames.begin(), frames.end(), [](const NavFrame& f) { return f.diverged; });
}

WorldPoint NavState::believed() const {
  return frames.empty() ? WorldPoint{} : frames.back().predicted;
}

NavState navigate(const WorldMap& world, const Trajectory& trajectory, const Localizer& localizer,
                  const NavConfig& cfg) {
  trajectory.validate(cfg.search_coverage_m / 2.0);
  SampleOptions uav_opts;
  uav_opts.uav_px = cfg.uav_px;
  uav_opts.uav_footprint_m = cfg.uav_footprint_m;
  uav_opts.jitter = false;

  NavState state;
  state.search_coverage_m = cfg.search_coverage_m;
  WorldPoint believed = cfg.initial_estimate.value_or(trajectory.waypoints.front());
  for (std::size_t t = 0; t < trajectory.waypoints.size(); ++t) {
    const WorldPoint truth = trajectory.waypoints[t];
    const auto tile = TileGeometry::centered(believed, cfg.search_coverage_m, cfg.search_px);
    if (!inside_world(world, tile)) {
      throw OutOfBounds(fmt::format(
          "navigate: frame {} search region centered at ({}, {}) m leaves the {} m world", t,
          believed.x_m, believed.y_m, world.size_m()));
    }
    const Image sat = render_tile(world, tile);
    const Image uav = render_uav_view(world, truth, uav_opts);
    const PixelPoint pred_px = localizer({uav, sat, tile, tile.to_pixel(truth), t});
    NavFrame f;
    f.frame = t;
    f.truth = truth;
    f.search_center = believed;
    f.predicted = tile.to_world(pred_px);
    f.error_m = std::hypot(f.predicted.x_m - truth.x_m, f.predicted.y_m - truth.y_m);
    f.diverged = f.error_m > cfg.search_coverage_m / 2.0;
    state.frames.push_back(f);
    believed = f.predicted;
  }
  return state;
}

Image render_track_overlay(const WorldMap& world, const NavState& state) {
  if (state.frames.empty()) {
    return {};
  }
  double x0 = world.size_m(), y0 = world.size_m(), x1 = 0.0, y1 = 0.0;
  for (const auto& f : state.frames) {
    for (const auto& p : {f.truth, f.predicted}) {
      x0 = std::min(x0, p.x_m);
      y0 = std::min(y0, p.y_m);
      x1 = std::max(x1, p.x_m);
      y1 = std::max(y1, p.y_m);
    }
  }
  const int w = world.image.width();
  const int h = world.image.height();
  const int margin = 32;
  const auto lo = [&](double v, int n) {
    return std::clamp(static_cast<int>(std::floor(v / world.meters_per_pixel)) - margin, 0, n - 1);
  };
  const auto hi = [&](double v, int n) {
    return std::clamp(static_cast<int>(std::ceil(v / world.meters_per_pixel)) + margin, 0, n - 1);
  };
  const int c0 = lo(x0, w), r0 = lo(y0, h), c1 = hi(x1, w), r1 = hi(y1, h);
  Image out(r1 - r0 + 1, c1 - c0 + 1, 3);
  for (int r = r0; r <= r1; ++r) {
    for (int c = c0; c <= c1; ++c) {
      for (int ch = 0; ch < 3; ++ch) {
        out.at(r - r0, c - c0, ch) = world.image.at(r, c, ch);
      }
    }
  }
  auto local = [&](WorldPoint p) {
    const auto px = world.to_pixel(p);
    return PixelPoint{px.x - c0, px.y - r0};
  };
  auto draw_track = [&](bool truth, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    for (std::size_t i = 0; i < state.frames.size(); ++i) {
      const auto p = local(truth ? state.frames[i].truth : state.frames[i].predicted);
      if (i > 0) {
        const auto q = local(truth ? state.frames[i - 1].truth : state.frames[i - 1].predicted);
        draw_line(out, q, p, r, g, b);
      }
      draw_ring(out, p, 3.0, 1.5, r, g, b);
    }
  };
  draw_track(true, 255, 0, 0);
  draw_track(false, 0, 0, 255);
  return out;
}

void render_report(const WorldMap& world, const NavState& state,
                   const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::ofstream out(out_dir / "navigation.csv");
  if (!out) {
    throw IoError(fmt::format("cannot write {}", (out_dir / "navigation.csv").string()));
  }
  out << "frame,true_x_m,true_y_m,pred_x_m,pred_y_m,error_m\n";
  for (const auto& f : state.frames) {
    out << fmt::format("{},{},{},{},{},{}\n", f.frame, f.truth.x_m, f.truth.y_m, f.predicted.x_m,
                       f.predicted.y_m, f.error_m);
  }
  out.close();
  if (!state.frames.empty()) {
    write_png(out_dir / "track.png", render_track_overlay(world, state));
  }
}

}  // namespace osfpi
