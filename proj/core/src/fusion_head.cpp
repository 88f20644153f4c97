// SPDX-License-Identifier: Apache-2.0
#include "osfpi/fusion_head.hpp"

#include <fmt/format.h>
#include <torch/torch.h>

#include "osfpi/errors.hpp"
#include "osfpi/init.hpp"

namespace osfpi {

namespace F = torch::nn::functional;

void FusionConfig::validate() const {
  if (fpn_channels <= 0) {
    throw ConfigError("fusion.fpn_channels", "must be positive");
  }
  if (atrous_rates.empty()) {
    throw ConfigError("fusion.atrous_rates", "must not be empty");
  }
  for (std::size_t i = 0; i < atrous_rates.size(); ++i) {
    if (atrous_rates[i] <= 0 || (i > 0 && atrous_rates[i] <= atrous_rates[i - 1])) {
      throw ConfigError("fusion.atrous_rates", "must be strictly increasing positive integers");
    }
  }
  if (corr_groups <= 0 || fpn_channels % corr_groups != 0) {
    throw ConfigError("fusion.corr_groups",
                      fmt::format("{} does not divide fpn_channels {}", corr_groups, fpn_channels));
  }
  if (heatmap_size <= 0) {
    throw ConfigError("fusion.heatmap_size", "must be positive");
  }
  if (!(offset_clamp > 0.0)) {
    throw ConfigError("fusion.offset_clamp", "must be positive");
  }
}

PixelPoint argmax_2d(const torch::Tensor& map) {
  auto m = map.detach().to(torch::kCPU, torch::kFloat64).squeeze().contiguous();
  if (m.dim() != 2) {
    throw DimensionMismatch("argmax_2d expects a 2D map");
  }
  const std::int64_t cols = m.size(1);
  const double* data = m.data_ptr<double>();
  std::int64_t best = 0;
  for (std::int64_t i = 1; i < m.numel(); ++i) {
    if (data[i] > data[best]) {
      best = i;
    }
  }
  return {static_cast<double>(best % cols), static_cast<double>(best / cols)};
}

PredictionOutput decode_prediction(const HeadOutput& output, std::int64_t index, double clamp) {
  PredictionOutput pred;
  pred.heatmap = output.heatmap[index][0].detach();
  pred.offsets = output.offsets[index].detach().clamp(-clamp, clamp);
  pred.argmax = argmax_2d(pred.heatmap);
  const auto row = static_cast<std::int64_t>(pred.argmax.y);
  const auto col = static_cast<std::int64_t>(pred.argmax.x);
  pred.peak_value = pred.heatmap[row][col].item<double>();
  pred.point = {pred.argmax.x + pred.offsets[0][row][col].item<double>(),
                pred.argmax.y + pred.offsets[1][row][col].item<double>()};
  return pred;
}

torch::Tensor upsample_nearest(const torch::Tensor& x, std::int64_t factor) {
  if (factor == 1) {
    return x;
  }
  return x.repeat_interleave(factor, 2).repeat_interleave(factor, 3);
}

torch::Tensor expand_cell_offsets(const torch::Tensor& cell_offsets, std::int64_t factor) {
  auto up = upsample_nearest(cell_offsets, factor);
  if (factor == 1) {
    return up;
  }
  const auto opts = up.options().requires_grad(false);
  auto local_x = torch::arange(up.size(3), opts).remainder(factor).view({1, up.size(3)});
  auto local_y = torch::arange(up.size(2), opts).remainder(factor).view({up.size(2), 1});
  auto shift = torch::stack({local_x.expand({up.size(2), up.size(3)}),
                             local_y.expand({up.size(2), up.size(3)})})
                   .unsqueeze(0);
  return up - shift;
}

FeaturePyramidImpl::FeaturePyramidImpl(const std::array<std::int64_t, kNumStages>& in_channels,
                                       std::int64_t out_channels) {
  for (std::size_t i = 0; i < kNumStages; ++i) {
    laterals_[i] = register_module(fmt::format("lateral{}", i + 1),
                                   torch::nn::Conv2d(torch::nn::Conv2dOptions(
                                       in_channels[i], out_channels, 1)));
  }
  smooth_ = register_module(
      "smooth",
      torch::nn::Conv2d(torch::nn::Conv2dOptions(out_channels, out_channels, 3).padding(1)));
  init_projection(*this);
}

torch::Tensor FeaturePyramidImpl::forward(const torch::Tensor& s1, const torch::Tensor& s2,
                                          const torch::Tensor& s3) {
  const std::array<const torch::Tensor*, kNumStages> levels{&s1, &s2, &s3};
  for (std::size_t i = 0; i < kNumStages; ++i) {
    const auto& t = *levels[i];
    if (t.dim() != 4 || t.size(1) != laterals_[i]->options.in_channels()) {
      throw ShapeLadderError(fmt::format("S{} must be [B, {}, H, W]", i + 1,
                                         laterals_[i]->options.in_channels()));
    }
    if (i > 0 && (levels[i - 1]->size(2) != 2 * t.size(2) ||
                  levels[i - 1]->size(3) != 2 * t.size(3))) {
      throw ShapeLadderError(fmt::format("S{} ({}x{}) is not half of S{} ({}x{})", i + 1,
                                         t.size(2), t.size(3), i, levels[i - 1]->size(2),
                                         levels[i - 1]->size(3)));
    }
  }
  auto p3 = laterals_[2]->forward(s3);
  auto p2 = laterals_[1]->forward(s2) + upsample_nearest(p3, 2);
  auto p1 = laterals_[0]->forward(s1) + upsample_nearest(p2, 2);
  return smooth_->forward(p1);
}

AtrousBlockImpl::AtrousBlockImpl(std::int64_t channels, const std::vector<std::int64_t>& rates) {
  branches_ = register_module("branches", torch::nn::ModuleList());
  for (std::int64_t rate : rates) {
    branches_->push_back(torch::nn::Conv2d(
        torch::nn::Conv2dOptions(channels, channels, 3).padding(rate).dilation(rate)));
  }
  fuse_ = register_module(
      "fuse", torch::nn::Conv2d(torch::nn::Conv2dOptions(
                                    channels * static_cast<std::int64_t>(rates.size()), channels, 3)
                                    .padding(1)));
  init_projection(*this);
}

torch::Tensor AtrousBlockImpl::forward(const torch::Tensor& x) {
  std::vector<torch::Tensor> outs;
  outs.reserve(branches_->size());
  for (const auto& branch : *branches_) {
    outs.push_back(branch->as<torch::nn::Conv2dImpl>()->forward(x));
  }
  return fuse_->forward(torch::cat(outs, 1));
}

torch::Tensor grouped_correlation(const torch::Tensor& templ, const torch::Tensor& search,
                                  std::int64_t groups) {
  if (templ.dim() != 4 || search.dim() != 4 || templ.size(0) != search.size(0)) {
    throw DimensionMismatch("correlation expects [B, C, h, w] template and [B, C, H, W] search");
  }
  const std::int64_t batch = search.size(0);
  const std::int64_t channels = search.size(1);
  if (templ.size(1) != channels) {
    throw ChannelMismatch(fmt::format("template has {} channels, search map has {}",
                                      templ.size(1), channels));
  }
  if (groups <= 0 || channels % groups != 0) {
    throw ChannelMismatch(fmt::format("{} groups do not divide {} channels", groups, channels));
  }
  const std::int64_t kh = templ.size(2);
  const std::int64_t kw = templ.size(3);
  auto padded = F::pad(search, F::PadFuncOptions({kw / 2, kw - 1 - kw / 2, kh / 2, kh - 1 - kh / 2}));
  auto input = padded.reshape({1, batch * channels, padded.size(2), padded.size(3)});
  auto weight = templ.reshape({batch * groups, channels / groups, kh, kw});
  auto response = F::conv2d(input, weight, F::Conv2dFuncOptions().groups(batch * groups));
  return response.view({batch, groups, search.size(2), search.size(3)}) /
         static_cast<double>(kh * kw);
}

CorrelationImpl::CorrelationImpl(std::int64_t channels, std::int64_t groups)
    : channels_(channels), groups_(groups) {
  proj_ = register_module("proj", torch::nn::Conv2d(torch::nn::Conv2dOptions(groups, 1, 1)));
  init_projection(*this);
}

torch::Tensor CorrelationImpl::forward(const torch::Tensor& u1, const torch::Tensor& f) {
  if (u1.size(1) != channels_ || f.size(1) != channels_) {
    throw ChannelMismatch(fmt::format("correlation expects {} channels, got U1={} F={}", channels_,
                                      u1.size(1), f.size(1)));
  }
  return proj_->forward(grouped_correlation(u1, f, groups_));
}

OffsetHeadImpl::OffsetHeadImpl(std::int64_t channels) {
  conv1_ = register_module(
      "conv1", torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, channels, 3).padding(1)));
  conv2_ = register_module(
      "conv2", torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, channels, 3).padding(1)));
  out_ = register_module("out", torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, 2, 1)));
  init_projection(*this);
  torch::NoGradGuard no_grad;
  out_->weight.zero_();
  out_->bias.zero_();
}

torch::Tensor OffsetHeadImpl::forward(const torch::Tensor& f) {
  auto x = torch::gelu(conv1_->forward(f));
  x = torch::gelu(conv2_->forward(x));
  return out_->forward(x);
}

FusionHeadImpl::FusionHeadImpl(const std::array<std::int64_t, kNumStages>& backbone_channels,
                               FusionConfig cfg)
    : cfg_(std::move(cfg)) {
  cfg_.validate();
  if (backbone_channels[0] != cfg_.fpn_channels) {
    throw ChannelMismatch(fmt::format("U1 has {} channels but fpn_channels is {}",
                                      backbone_channels[0], cfg_.fpn_channels));
  }
  fpn_ = register_module("fpn", FeaturePyramid(backbone_channels, cfg_.fpn_channels));
  atrous_ = register_module("atrous", AtrousBlock(cfg_.fpn_channels, cfg_.atrous_rates));
  corr_ = register_module("corr", Correlation(cfg_.fpn_channels, cfg_.corr_groups));
  offset_head_ = register_module("offset_head", OffsetHead(cfg_.fpn_channels));
}

HeadOutput FusionHeadImpl::forward(const StageOutputs& features) {
  auto p = fpn_->forward(features.sat[0], features.sat[1], features.sat[2]);
  auto f = atrous_->forward(p);
  auto response = corr_->forward(features.uav[0], f);
  if (cfg_.heatmap_size % f.size(2) != 0 || cfg_.heatmap_size % f.size(3) != 0) {
    throw DimensionMismatch(fmt::format("heatmap size {} is not a multiple of the fused grid {}x{}",
                                        cfg_.heatmap_size, f.size(2), f.size(3)));
  }
  const std::int64_t factor = cfg_.heatmap_size / f.size(2);
  HeadOutput out;
  out.heatmap = upsample_nearest(response, factor);
  out.offsets = expand_cell_offsets(offset_head_->forward(f), factor);
  return out;
}

}  // namespace osfpi
