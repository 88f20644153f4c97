// SPDX-License-Identifier: Apache-2.0
#include "osfpi/model.hpp"

#include <fmt/format.h>
#include <torch/torch.h>

#include "osfpi/errors.hpp"
#include "osfpi/json_util.hpp"

namespace osfpi {

void ModelConfig::validate() const {
  backbone.validate();
  fusion.validate();
  if (backbone.stage_channels[0] != fusion.fpn_channels) {
    throw ConfigError("fusion.fpn_channels",
                      fmt::format("must equal the stage-1 channel count {}",
                                  backbone.stage_channels[0]));
  }
  if (backbone.sat_input.rows != backbone.sat_input.cols) {
    throw ConfigError("backbone.sat_input", "satellite tiles must be square");
  }
  if (fusion.heatmap_size != backbone.sat_input.rows) {
    throw ConfigError("fusion.heatmap_size",
                      fmt::format("must equal the satellite input size {}", backbone.sat_input.rows));
  }
}

ModelConfig ModelConfig::defaults() { return {}; }

ModelConfig ModelConfig::miniature() {
  ModelConfig cfg;
  cfg.backbone.stage_channels = {16, 32, 64};
  cfg.backbone.stage_depths = {1, 1, 2};
  cfg.backbone.stage_heads = {1, 2, 4};
  cfg.backbone.sra_ratios = {8, 4, 2};
  cfg.backbone.mlp_ratios = {4.0, 4.0, 4.0};
  cfg.backbone.uav_input = {32, 32};
  cfg.backbone.sat_input = {128, 128};
  cfg.fusion.fpn_channels = 16;
  cfg.fusion.corr_groups = 16;
  cfg.fusion.heatmap_size = 128;
  return cfg;
}

ModelConfig ModelConfig::gradcheck() {
  ModelConfig cfg;
  cfg.backbone.stage_channels = {8, 16, 32};
  cfg.backbone.stage_depths = {1, 1, 1};
  cfg.backbone.stage_heads = {1, 2, 4};
  cfg.backbone.sra_ratios = {4, 2, 1};
  cfg.backbone.mlp_ratios = {2.0, 2.0, 2.0};
  cfg.backbone.uav_input = {16, 16};
  cfg.backbone.sat_input = {32, 32};
  cfg.fusion.fpn_channels = 8;
  cfg.fusion.corr_groups = 8;
  cfg.fusion.atrous_rates = {2, 4, 6};
  cfg.fusion.heatmap_size = 32;
  return cfg;
}

nlohmann::json to_json(const ModelConfig& cfg) {
  const auto& b = cfg.backbone;
  const auto& f = cfg.fusion;
  return {
      {"backbone",
       {{"patch_size", b.patch_size},
        {"stage_channels", b.stage_channels},
        {"stage_depths", b.stage_depths},
        {"stage_heads", b.stage_heads},
        {"sra_ratios", b.sra_ratios},
        {"mlp_ratios", b.mlp_ratios},
        {"uav_input", {b.uav_input.rows, b.uav_input.cols}},
        {"sat_input", {b.sat_input.rows, b.sat_input.cols}}}},
      {"fusion",
       {{"fpn_channels", f.fpn_channels},
        {"atrous_rates", f.atrous_rates},
        {"corr_groups", f.corr_groups},
        {"heatmap_size", f.heatmap_size},
        {"offset_clamp", f.offset_clamp}}},
  };
}

namespace {

GridSize read_grid(StrictObject& obj, const std::string& key, GridSize fallback) {
  std::vector<std::int64_t> dims{fallback.rows, fallback.cols};
  obj.read(key, dims);
  if (dims.size() != 2) {
    throw ConfigError(obj.field(key), "expected [height, width]");
  }
  return {dims[0], dims[1]};
}

}  // namespace

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  StrictObject root(j, "model");
  if (const auto* node = root.child("backbone")) {
    StrictObject o(*node, "model.backbone");
    auto& b = cfg.backbone;
    o.read("patch_size", b.patch_size);
    o.read("stage_channels", b.stage_channels);
    o.read("stage_depths", b.stage_depths);
    o.read("stage_heads", b.stage_heads);
    o.read("sra_ratios", b.sra_ratios);
    o.read("mlp_ratios", b.mlp_ratios);
    b.uav_input = read_grid(o, "uav_input", b.uav_input);
    b.sat_input = read_grid(o, "sat_input", b.sat_input);
    o.finish();
  }
  if (const auto* node = root.child("fusion")) {
    StrictObject o(*node, "model.fusion");
    auto& f = cfg.fusion;
    o.read("fpn_channels", f.fpn_channels);
    o.read("atrous_rates", f.atrous_rates);
    o.read("corr_groups", f.corr_groups);
    o.read("heatmap_size", f.heatmap_size);
    o.read("offset_clamp", f.offset_clamp);
    o.finish();
  }
  root.finish();
  cfg.validate();
  return cfg;
}

OsFpiImpl::OsFpiImpl(ModelConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  backbone_ = register_module("backbone", OsPcpvt(cfg_.backbone));
  const auto& ch = cfg_.backbone.stage_channels;
  head_ = register_module("head", FusionHead(std::array{ch[0], ch[1], ch[2]}, cfg_.fusion));
}

HeadOutput OsFpiImpl::forward(const torch::Tensor& uav, const torch::Tensor& sat) {
  return head_->forward(backbone_->forward(uav, sat));
}

OsFpi make_model(const ModelConfig& cfg, std::uint64_t seed) {
  torch::manual_seed(seed);
  return OsFpi(cfg);
}

std::vector<PredictionOutput> predict(OsFpi& model, const torch::Tensor& uav,
                                      const torch::Tensor& sat) {
  torch::NoGradGuard no_grad;
  const auto out = model->forward(uav, sat);
  std::vector<PredictionOutput> preds;
  preds.reserve(static_cast<std::size_t>(uav.size(0)));
  for (std::int64_t i = 0; i < uav.size(0); ++i) {
    preds.push_back(decode_prediction(out, i, model->config().fusion.offset_clamp));
  }
  return preds;
}

}  // namespace osfpi
