// SPDX-License-Identifier: Apache-2.0
//
// Single JSON document driving every subcommand.
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "osfpi/model.hpp"
#include "osfpi/synth.hpp"
#include "osfpi/trainer.hpp"

namespace osfpi::cli {

inline constexpr int kConfigVersion = 1;

struct SynthSettings {
  int world_size = 4096;
  double meters_per_pixel = 0.5;
  int train_samples = 256;
  double uav_footprint_m = 40.0;
  bool jitter = true;
  bool rotate = false;
  double brightness = 0.1;
  double contrast = 0.1;
  double central_fraction = 0.8;
};

struct NavSettings {
  double search_coverage_m = 384.0;
  int frames = 50;
  double step_m = 20.0;
};

struct Paths {
  std::string dataset = "dataset";
  std::string output = "runs/default";
};

struct RunConfig {
  int config_version = kConfigVersion;
  std::uint64_t seed = 0;
  ModelConfig model = ModelConfig::defaults();
  TrainConfig train;
  TestProtocol protocol;
  SynthSettings synth;
  NavSettings navigation;
  Paths paths;

  /// Throws ConfigError naming the first invalid field.
  void validate() const;

  /// Sample options with the model's input sizes.
  SampleOptions sample_options() const;

  /// "default" (full 96 / 384 px sizes) or "miniature" (desk scale).
  static RunConfig preset(const std::string& name);
};

nlohmann::json to_json(const RunConfig& cfg);
/// Strict: unknown keys and a missing or unsupported config_version raise ConfigError.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const std::filesystem::path& path, const RunConfig& cfg);

/// Derived seeds so world, splits and training never share a stream.
std::uint64_t world_seed(const RunConfig& cfg);
std::uint64_t split_seed(const RunConfig& cfg, const std::string& split);

}  // namespace osfpi::cli
