// SPDX-License-Identifier: Apache-2.0
//
// Feature fusion and prediction heads: satellite-only FPN, atrous context
// block, grouped correlation against the stage-1 UAV map, and the
// classification/offset branches at full satellite resolution.
#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include <torch/nn/module.h>
#include <torch/nn/modules/container/modulelist.h>
#include <torch/nn/modules/conv.h>
#include <torch/nn/pimpl.h>

#include "osfpi/backbone.hpp"
#include "osfpi/image.hpp"

namespace osfpi {

struct FusionConfig {
  std::int64_t fpn_channels = 64;
  std::vector<std::int64_t> atrous_rates{12, 24, 32};
  std::int64_t corr_groups = 64;
  std::int64_t heatmap_size = 384;
  /// Inference-time clamp on offsets, in full-resolution pixels.
  double offset_clamp = 16.0;

  void validate() const;
};

/// Raw batched head outputs; what the losses consume.
struct HeadOutput {
  torch::Tensor heatmap;  // [B, 1, S, S] logits
  torch::Tensor offsets;  // [B, 2, S, S] (x, y) corrections in pixels
};

/// Decoded prediction for one sample.
struct PredictionOutput {
  torch::Tensor heatmap;  // [S, S]
  torch::Tensor offsets;  // [2, S, S], clamped
  PixelPoint argmax;
  PixelPoint point;
  double peak_value = 0.0;
};

/// Row-major first maximum of a 2D map.
PixelPoint argmax_2d(const torch::Tensor& map);

/// point = argmax(heatmap) + offsets[argmax], offsets clamped to +-clamp.
PredictionOutput decode_prediction(const HeadOutput& output, std::int64_t index, double clamp);

/// Nearest-neighbour upsampling of [B, C, h, w] by an integer factor.
torch::Tensor upsample_nearest(const torch::Tensor& x, std::int64_t factor);

/// Expands per-cell offsets to full resolution so that every pixel of a cell
/// points at the same location: offset(p) = cell_offset - (p - cell_anchor),
/// where cell_anchor is the cell's top-left pixel (the pixel argmax picks
/// under nearest-neighbour upsampling).
torch::Tensor expand_cell_offsets(const torch::Tensor& cell_offsets, std::int64_t factor);

class FeaturePyramidImpl : public torch::nn::Module {
 public:
  FeaturePyramidImpl(const std::array<std::int64_t, kNumStages>& in_channels,
                     std::int64_t out_channels);

  /// S1..S3 as [B, C_i, H_i, W_i]; each level must halve the previous one.
  torch::Tensor forward(const torch::Tensor& s1, const torch::Tensor& s2, const torch::Tensor& s3);

  torch::nn::Conv2d& lateral(std::size_t i) { return laterals_[i]; }
  torch::nn::Conv2d& smooth() { return smooth_; }

 private:
  std::array<torch::nn::Conv2d, kNumStages> laterals_{nullptr, nullptr, nullptr};
  torch::nn::Conv2d smooth_{nullptr};
};
TORCH_MODULE(FeaturePyramid);

class AtrousBlockImpl : public torch::nn::Module {
 public:
  AtrousBlockImpl(std::int64_t channels, const std::vector<std::int64_t>& rates);

  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Conv2d branch(std::size_t i) { return branches_->ptr<torch::nn::Conv2dImpl>(i); }
  torch::nn::Conv2d& fuse() { return fuse_; }

 private:
  torch::nn::ModuleList branches_{nullptr};
  torch::nn::Conv2d fuse_{nullptr};
};
TORCH_MODULE(AtrousBlock);

/// Slides each sample's template over its search map with "same" zero
/// padding, one response per channel group. template: [B, C, kh, kw],
/// search: [B, C, H, W] -> [B, groups, H, W]. Responses are averaged over the
/// template area. For even kernels the template anchor is (kh/2, kw/2).
torch::Tensor grouped_correlation(const torch::Tensor& templ, const torch::Tensor& search,
                                  std::int64_t groups);

class CorrelationImpl : public torch::nn::Module {
 public:
  CorrelationImpl(std::int64_t channels, std::int64_t groups);

  /// Grouped responses reduced to one channel by a learnable 1x1 projection.
  torch::Tensor forward(const torch::Tensor& u1, const torch::Tensor& f);

  torch::nn::Conv2d& projection() { return proj_; }

 private:
  std::int64_t channels_;
  std::int64_t groups_;
  torch::nn::Conv2d proj_{nullptr};
};
TORCH_MODULE(Correlation);

/// Two 3x3 conv + GELU layers and a zero-initialized 1x1 to two channels.
class OffsetHeadImpl : public torch::nn::Module {
 public:
  explicit OffsetHeadImpl(std::int64_t channels);

  torch::Tensor forward(const torch::Tensor& f);

 private:
  torch::nn::Conv2d conv1_{nullptr};
  torch::nn::Conv2d conv2_{nullptr};
  torch::nn::Conv2d out_{nullptr};
};
TORCH_MODULE(OffsetHead);

class FusionHeadImpl : public torch::nn::Module {
 public:
  FusionHeadImpl(const std::array<std::int64_t, kNumStages>& backbone_channels, FusionConfig cfg);

  /// Consumes S1..S3 and U1 only; U2 and U3 are ignored.
  HeadOutput forward(const StageOutputs& features);

  const FusionConfig& config() const noexcept { return cfg_; }
  FeaturePyramid& pyramid() { return fpn_; }
  AtrousBlock& atrous() { return atrous_; }
  Correlation& correlation() { return corr_; }

 private:
  FusionConfig cfg_;
  FeaturePyramid fpn_{nullptr};
  AtrousBlock atrous_{nullptr};
  Correlation corr_{nullptr};
  OffsetHead offset_head_{nullptr};
};
TORCH_MODULE(FusionHead);

}  // namespace osfpi
