// SPDX-License-Identifier: Apache-2.0
#include "osfpi_cli/run_config.hpp"

#include <fstream>

#include <fmt/format.h>

#include "osfpi/errors.hpp"
#include "osfpi/json_util.hpp"
#include "osfpi/rng.hpp"

namespace osfpi::cli {

void RunConfig::validate() const {
  if (config_version != kConfigVersion) {
    throw ConfigError("config_version", fmt::format("unsupported version {}", config_version));
  }
  model.validate();
  train.validate();
  protocol.validate();
  if (synth.world_size < kMinWorldSize) {
    throw ConfigError("synth.world_size", fmt::format("must be at least {}", kMinWorldSize));
  }
  if (!(synth.meters_per_pixel > 0.0)) {
    throw ConfigError("synth.meters_per_pixel", "must be positive");
  }
  if (synth.train_samples < 0) {
    throw ConfigError("synth.train_samples", "must be >= 0");
  }
  if (!(synth.uav_footprint_m > 0.0) || synth.uav_footprint_m >= protocol.min_coverage_m) {
    throw ConfigError("synth.uav_footprint_m", "must be positive and below protocol.min_coverage_m");
  }
  if (!(synth.central_fraction > 0.0) || synth.central_fraction > 1.0) {
    throw ConfigError("synth.central_fraction", "must lie in (0, 1]");
  }
  if (protocol.max_coverage_m > synth.world_size * synth.meters_per_pixel) {
    throw ConfigError("protocol.max_coverage_m", "exceeds the world size");
  }
  if (!(navigation.search_coverage_m > 0.0)) {
    throw ConfigError("navigation.search_coverage_m", "must be positive");
  }
  if (navigation.frames < 2) {
    throw ConfigError("navigation.frames", "must be at least 2");
  }
  if (!(navigation.step_m > 0.0) || navigation.step_m > navigation.search_coverage_m / 2.0) {
    throw ConfigError("navigation.step_m", "must lie in (0, search_coverage_m / 2]");
  }
}

SampleOptions RunConfig::sample_options() const {
  SampleOptions o;
  o.sat_px = static_cast<int>(model.backbone.sat_input.rows);
  o.uav_px = static_cast<int>(model.backbone.uav_input.rows);
  o.uav_footprint_m = synth.uav_footprint_m;
  o.jitter = synth.jitter;
  o.rotate = synth.rotate;
  o.brightness = synth.brightness;
  o.contrast = synth.contrast;
  o.central_fraction = synth.central_fraction;
  return o;
}

RunConfig RunConfig::preset(const std::string& name) {
  RunConfig cfg;
  if (name == "default") {
    return cfg;
  }
  if (name == "miniature") {
    cfg.model = ModelConfig::miniature();
    cfg.train.batch_size = 8;
    cfg.train.epochs = 10;
    cfg.synth.world_size = 2048;
    cfg.synth.train_samples = 64;
    cfg.protocol.samples_per_coverage = 4;
    cfg.navigation.frames = 20;
    cfg.paths.output = "runs/miniature";
    return cfg;
  }
  throw ConfigError("preset", fmt::format("unknown preset '{}'", name));
}

nlohmann::json to_json(const RunConfig& c) {
  return {{"config_version", c.config_version},
          {"seed", c.seed},
          {"model", to_json(c.model)},
          {"train", to_json(c.train)},
          {"protocol",
           {{"min_coverage_m", c.protocol.min_coverage_m},
            {"max_coverage_m", c.protocol.max_coverage_m},
            {"num_scales", c.protocol.num_scales},
            {"samples_per_coverage", c.protocol.samples_per_coverage}}},
          {"synth",
           {{"world_size", c.synth.world_size},
            {"meters_per_pixel", c.synth.meters_per_pixel},
            {"train_samples", c.synth.train_samples},
            {"uav_footprint_m", c.synth.uav_footprint_m},
            {"jitter", c.synth.jitter},
            {"rotate", c.synth.rotate},
            {"brightness", c.synth.brightness},
            {"contrast", c.synth.contrast},
            {"central_fraction", c.synth.central_fraction}}},
          {"navigation",
           {{"search_coverage_m", c.navigation.search_coverage_m},
            {"frames", c.navigation.frames},
            {"step_m", c.navigation.step_m}}},
          {"paths", {{"dataset", c.paths.dataset}, {"output", c.paths.output}}}};
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  StrictObject root(j, "");
  if (!j.contains("config_version")) {
    throw ConfigError("config_version", "missing");
  }
  root.read("config_version", c.config_version);
  if (c.config_version != kConfigVersion) {
    throw ConfigError("config_version", fmt::format("unsupported version {}", c.config_version));
  }
  root.read("seed", c.seed);
  if (const auto* node = root.child("model")) {
    c.model = model_config_from_json(*node);
  }
  if (const auto* node = root.child("train")) {
    c.train = train_config_from_json(*node);
  }
  if (const auto* node = root.child("protocol")) {
    StrictObject o(*node, "protocol");
    o.read("min_coverage_m", c.protocol.min_coverage_m);
    o.read("max_coverage_m", c.protocol.max_coverage_m);
    o.read("num_scales", c.protocol.num_scales);
    o.read("samples_per_coverage", c.protocol.samples_per_coverage);
    o.finish();
  }
  if (const auto* node = root.child("synth")) {
    StrictObject o(*node, "synth");
    o.read("world_size", c.synth.world_size);
    o.read("meters_per_pixel", c.synth.meters_per_pixel);
    o.read("train_samples", c.synth.train_samples);
    o.read("uav_footprint_m", c.synth.uav_footprint_m);
    o.read("jitter", c.synth.jitter);
    o.read("rotate", c.synth.rotate);
    o.read("brightness", c.synth.brightness);
    o.read("contrast", c.synth.contrast);
    o.read("central_fraction", c.synth.central_fraction);
    o.finish();
  }
  if (const auto* node = root.child("navigation")) {
    StrictObject o(*node, "navigation");
    o.read("search_coverage_m", c.navigation.search_coverage_m);
    o.read("frames", c.navigation.frames);
    o.read("step_m", c.navigation.step_m);
    o.finish();
  }
  if (const auto* node = root.child("paths")) {
    StrictObject o(*node, "paths");
    o.read("dataset", c.paths.dataset);
    o.read("output", c.paths.output);
    o.finish();
  }
  root.finish();
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError(fmt::format("cannot open config {}", path.string()));
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string(), e.what());
  }
  return run_config_from_json(j);
}

void save_run_config(const std::filesystem::path& path, const RunConfig& cfg) {
  std::ofstream out(path);
  if (!out) {
    throw IoError(fmt::format("cannot write {}", path.string()));
  }
  out << to_json(cfg).dump(2) << '\n';
}

std::uint64_t world_seed(const RunConfig& cfg) { return mix64(cfg.seed ^ 0x776f726c64ULL); }

std::uint64_t split_seed(const RunConfig& cfg, const std::string& split) {
  std::uint64_t h = cfg.seed;
  for (char ch : split) {
    h = mix64(h ^ static_cast<unsigned char>(ch));
  }
  return h;
}

}  // namespace osfpi::cli
