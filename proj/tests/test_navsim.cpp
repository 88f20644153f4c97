// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "osfpi/errors.hpp"
#include "osfpi/image.hpp"
#include "osfpi/navsim.hpp"
#include "osfpi/synth.hpp"
#include "test_util.hpp"

namespace osfpi {
namespace {

const WorldMap& world() {
  static const WorldMap w = generate_world(21, 2048, 0.5);
  return w;
}

Trajectory straight(WorldPoint start, double dx, double dy, std::size_t n) {
  Trajectory t;
  for (std::size_t i = 0; i < n; ++i) {
    t.waypoints.push_back({start.x_m + dx * static_cast<double>(i), start.y_m + dy * static_cast<double>(i)});
  }
  return t;
}

TEST(Navsim, OracleTracksExactly) {
  const auto traj = random_trajectory(world(), 50, 20.0, 200.0, 4);
  ASSERT_EQ(traj.waypoints.size(), 50u);
  const auto state = navigate(world(), traj, oracle_localizer(), NavConfig{});
  ASSERT_EQ(state.frames.size(), 50u);
  for (const auto& f : state.frames) {
    EXPECT_NEAR(f.error_m, 0.0, 1e-9) << f.frame;
    EXPECT_FALSE(f.diverged);
  }
  EXPECT_NEAR(state.believed().x_m, traj.waypoints.back().x_m, 1e-9);
  EXPECT_NEAR(state.believed().y_m, traj.waypoints.back().y_m, 1e-9);
  EXPECT_FALSE(state.diverged());
}

TEST(Navsim, ConstantBiasDoesNotAccumulate) {
  // 384 m over 384 px: one pixel is one meter.
  const auto traj = straight({300, 500}, 20, 0, 16);
  for (const auto& [dx, dy] : {std::pair{5.0, 0.0}, std::pair{3.0, -4.0}}) {
    const auto state = navigate(world(), traj, biased_localizer(dx, dy), NavConfig{});
    for (const auto& f : state.frames) {
      EXPECT_NEAR(f.error_m, 5.0, 1e-9) << f.frame;
    }
    EXPECT_NEAR(state.mean_error_m(), 5.0, 1e-9);
  }
  const auto half = straight({300, 500}, 10, 0, 32);
  const auto state = navigate(world(), half, biased_localizer(5, 0), NavConfig{});
  EXPECT_NEAR(state.mean_error_m(), 5.0, 1e-9);
}

TEST(Navsim, SearchFollowsPreviousEstimate) {
  const auto traj = straight({500, 500}, 20, 0, 6);
  NavConfig cfg;
  cfg.initial_estimate = WorldPoint{510, 495};
  const auto state = navigate(world(), traj, biased_localizer(2, 0), cfg);
  EXPECT_EQ(state.frames[0].search_center.x_m, 510);
  for (std::size_t t = 1; t < state.frames.size(); ++t) {
    EXPECT_EQ(state.frames[t].search_center.x_m, state.frames[t - 1].predicted.x_m);
    EXPECT_EQ(state.frames[t].search_center.y_m, state.frames[t - 1].predicted.y_m);
  }
}

TEST(Navsim, DivergenceIsReportedNotThrown) {
  const auto traj = straight({400, 500}, 20, 0, 10);
  const auto state = navigate(world(), traj, biased_localizer(200, 0), NavConfig{});
  ASSERT_EQ(state.frames.size(), 10u);
  EXPECT_TRUE(state.diverged());
  for (const auto& f : state.frames) EXPECT_TRUE(f.diverged);
}

TEST(Navsim, LeavingTheWorldNamesTheFrame) {
  // Search centers follow the previous waypoint; frame 12 is centered at x = 180 m.
  const auto traj = straight({400, 500}, -20, 0, 16);
  try {
    navigate(world(), traj, oracle_localizer(), NavConfig{});
    FAIL();
  } catch (const OutOfBounds& e) {
    EXPECT_NE(std::string(e.what()).find("frame 12"), std::string::npos) << e.what();
  }
  EXPECT_THROW(navigate(world(), straight({100, 100}, 20, 0, 3), oracle_localizer(), NavConfig{}),
               OutOfBounds);
}

TEST(Navsim, IsCausal) {
  const auto traj = random_trajectory(world(), 30, 20.0, 200.0, 8);
  Trajectory prefix;
  prefix.waypoints.assign(traj.waypoints.begin(), traj.waypoints.begin() + 12);
  const auto localizer = biased_localizer(1.5, -2.5);
  const auto full = navigate(world(), traj, localizer, NavConfig{});
  const auto part = navigate(world(), prefix, localizer, NavConfig{});
  for (std::size_t t = 0; t < part.frames.size(); ++t) {
    EXPECT_EQ(part.frames[t].predicted.x_m, full.frames[t].predicted.x_m);
    EXPECT_EQ(part.frames[t].predicted.y_m, full.frames[t].predicted.y_m);
  }
}

TEST(Navsim, LocalizerSeesConsistentQuery) {
  const auto traj = straight({600, 600}, 0, 20, 4);
  NavConfig cfg;
  std::size_t calls = 0;
  const Localizer probe = [&](const LocalizerQuery& q) {
    EXPECT_EQ(q.frame, calls++);
    EXPECT_EQ(q.sat.width(), cfg.search_px);
    EXPECT_EQ(q.uav.width(), cfg.uav_px);
    return q.true_px;
  };
  navigate(world(), traj, probe, cfg);
  EXPECT_EQ(calls, 4u);
}

TEST(Trajectory, ValidationAndCsvRoundTrip) {
  auto traj = random_trajectory(world(), 20, 20.0, 200.0, 1);
  EXPECT_NO_THROW(traj.validate(192.0));
  for (std::size_t i = 1; i < traj.waypoints.size(); ++i) {
    const auto& a = traj.waypoints[i - 1];
    const auto& b = traj.waypoints[i];
    EXPECT_LE(std::hypot(a.x_m - b.x_m, a.y_m - b.y_m), 20.0 + 1e-9);
    EXPECT_GE(b.x_m, 200.0);
    EXPECT_LE(b.x_m, world().size_m() - 200.0);
  }
  TempDir dir;
  traj.save_csv(dir.path() / "t.csv");
  const auto back = Trajectory::load_csv(dir.path() / "t.csv");
  ASSERT_EQ(back.waypoints.size(), traj.waypoints.size());
  for (std::size_t i = 0; i < traj.waypoints.size(); ++i) {
    EXPECT_DOUBLE_EQ(back.waypoints[i].x_m, traj.waypoints[i].x_m);
    EXPECT_DOUBLE_EQ(back.waypoints[i].y_m, traj.waypoints[i].y_m);
  }

  const auto jump = straight({500, 500}, 250, 0, 3);
  EXPECT_THROW(jump.validate(192.0), std::invalid_argument);
  EXPECT_THROW(navigate(world(), jump, oracle_localizer(), NavConfig{}), std::invalid_argument);
  EXPECT_THROW(Trajectory{}.validate(192.0), std::invalid_argument);
}

TEST(Navsim, ReportMatchesState) {
  const auto traj = random_trajectory(world(), 25, 20.0, 200.0, 2);
  const auto state = navigate(world(), traj, biased_localizer(3, 7), NavConfig{});
  TempDir dir;
  render_report(world(), state, dir.path());
  std::ifstream in(dir.path() / "navigation.csv");
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "frame,true_x_m,true_y_m,pred_x_m,pred_y_m,error_m");
  std::size_t rows = 0;
  double sum = 0.0;
  while (std::getline(in, line)) {
    const auto comma = line.rfind(',');
    sum += std::stod(line.substr(comma + 1));
    ++rows;
  }
  EXPECT_EQ(rows, state.frames.size());
  EXPECT_NEAR(sum / static_cast<double>(rows), state.mean_error_m(), 1e-9);
  const auto png = read_png(dir.path() / "track.png");
  EXPECT_GT(png.width(), 0);
}

TEST(Navsim, ZeroErrorOverlayShowsOnlyPrediction) {
  const auto traj = random_trajectory(world(), 15, 20.0, 200.0, 6);
  const auto state = navigate(world(), traj, oracle_localizer(), NavConfig{});
  const auto img = render_track_overlay(world(), state);
  std::size_t red = 0, blue = 0;
  for (int r = 0; r < img.height(); ++r) {
    for (int c = 0; c < img.width(); ++c) {
      const bool is_red = img.at(r, c, 0) == 255 && img.at(r, c, 1) == 0 && img.at(r, c, 2) == 0;
      const bool is_blue = img.at(r, c, 0) == 0 && img.at(r, c, 1) == 0 && img.at(r, c, 2) == 255;
      red += is_red;
      blue += is_blue;
    }
  }
  EXPECT_EQ(red, 0u);
  EXPECT_GT(blue, 0u);

  const auto biased = navigate(world(), traj, biased_localizer(12, 0), NavConfig{});
  const auto img2 = render_track_overlay(world(), biased);
  red = 0;
  for (int r = 0; r < img2.height(); ++r) {
    for (int c = 0; c < img2.width(); ++c) {
      red += img2.at(r, c, 0) == 255 && img2.at(r, c, 1) == 0 && img2.at(r, c, 2) == 0;
    }
  }
  EXPECT_GT(red, 0u);
}

}  // namespace
}  // namespace osfpi
