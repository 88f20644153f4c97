// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/nn/module.h>
#include <torch/nn/pimpl.h>

#include "osfpi/backbone.hpp"
#include "osfpi/fusion_head.hpp"

namespace osfpi {

struct ModelConfig {
  BackboneConfig backbone;
  FusionConfig fusion;

  void validate() const;

  /// Full-size network: 96x96 UAV, 384x384 satellite, channels 64/128/320.
  static ModelConfig defaults();
  /// Desk-scale training network: channels 16/32/64, depths 1/1/2, 32x32 UAV, 128x128 satellite.
  static ModelConfig miniature();
  /// Smallest valid network for finite-difference checks: channels 8/16/32, 16x16 UAV, 32x32 satellite.
  static ModelConfig gradcheck();
};

nlohmann::json to_json(const ModelConfig& cfg);
/// Strict: unknown keys raise ConfigError.
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Backbone followed by the fusion head.
class OsFpiImpl : public torch::nn::Module {
 public:
  explicit OsFpiImpl(ModelConfig cfg);

  /// uav: [B, 3, H_z, W_z], sat: [B, 3, H_x, W_x], values in [-1, 1].
  HeadOutput forward(const torch::Tensor& uav, const torch::Tensor& sat);

  const ModelConfig& config() const noexcept { return cfg_; }
  OsPcpvt& backbone() { return backbone_; }
  FusionHead& head() { return head_; }

 private:
  ModelConfig cfg_;
  OsPcpvt backbone_{nullptr};
  FusionHead head_{nullptr};
};
TORCH_MODULE(OsFpi);

/// Seeds the global generator, then constructs the network.
OsFpi make_model(const ModelConfig& cfg, std::uint64_t seed);

/// Gradient-free forward plus decoding of every sample in the batch.
std::vector<PredictionOutput> predict(OsFpi& model, const torch::Tensor& uav,
                                      const torch::Tensor& sat);

}  // namespace osfpi
