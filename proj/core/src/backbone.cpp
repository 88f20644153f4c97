// SPDX-License-Identifier: Apache-2.0
#include "osfpi/backbone.hpp"

#include <cmath>
#include <string>

#include <fmt/format.h>
#include <torch/torch.h>

#include "osfpi/errors.hpp"
#include "osfpi/init.hpp"

namespace osfpi {

namespace {

template <typename T>
void require_stage_list(const std::vector<T>& values, const char* field) {
  if (values.size() != kNumStages) {
    throw ConfigError(fmt::format("backbone.{}", field),
                      fmt::format("expected {} entries, got {}", kNumStages, values.size()));
  }
  for (const T& v : values) {
    if (!(v > 0)) {
      throw ConfigError(fmt::format("backbone.{}", field), "entries must be positive");
    }
  }
}

void check_image(const torch::Tensor& image, GridSize expected, std::int64_t patch,
                 const char* name) {
  if (image.dim() != 4 || image.size(1) != 3) {
    throw DimensionMismatch(fmt::format("{} input must be [B, 3, H, W]", name));
  }
  const std::int64_t h = image.size(2);
  const std::int64_t w = image.size(3);
  if (h % patch != 0 || w % patch != 0) {
    throw DimensionMismatch(
        fmt::format("{} input {}x{} is not divisible by patch size {}", name, h, w, patch));
  }
  if (h != expected.rows || w != expected.cols) {
    throw DimensionMismatch(fmt::format("{} input {}x{} does not match the configured {}x{}", name,
                                        h, w, expected.rows, expected.cols));
  }
}

void check_inputs(const torch::Tensor& uav, const torch::Tensor& sat, const BackboneConfig& cfg) {
  check_image(uav, cfg.uav_input, cfg.patch_size, "UAV");
  check_image(sat, cfg.sat_input, cfg.patch_size, "satellite");
  if (uav.size(0) != sat.size(0)) {
    throw DimensionMismatch("UAV and satellite batches differ in size");
  }
}

std::pair<TokenSequence, TokenSequence> split_merged(const torch::Tensor& merged,
                                                     const MergedLayout& layout) {
  if (merged.size(1) != layout.total()) {
    throw SplitPointError(fmt::format("merged length {} != {} UAV + {} SAT tokens", merged.size(1),
                                      layout.uav_length(), layout.sat_length()));
  }
  return {TokenSequence{merged.narrow(1, 0, layout.uav_length()), layout.uav, Domain::Uav},
          TokenSequence{merged.narrow(1, layout.uav_length(), layout.sat_length()), layout.sat,
                        Domain::Sat}};
}

}  // namespace

void BackboneConfig::validate() const {
  if (patch_size <= 0) {
    throw ConfigError("backbone.patch_size", "must be positive");
  }
  require_stage_list(stage_channels, "stage_channels");
  require_stage_list(stage_depths, "stage_depths");
  require_stage_list(stage_heads, "stage_heads");
  require_stage_list(sra_ratios, "sra_ratios");
  require_stage_list(mlp_ratios, "mlp_ratios");
  for (std::size_t i = 0; i < kNumStages; ++i) {
    if (stage_channels[i] % stage_heads[i] != 0) {
      throw ConfigError("backbone.stage_heads",
                        fmt::format("stage {} channels {} not divisible by {} heads", i,
                                    stage_channels[i], stage_heads[i]));
    }
  }
  const std::int64_t unit = patch_size << (kNumStages - 1);
  for (auto [grid, field] : {std::pair{uav_input, "uav_input"}, std::pair{sat_input, "sat_input"}}) {
    if (grid.rows <= 0 || grid.cols <= 0 || grid.rows % unit != 0 || grid.cols % unit != 0) {
      throw ConfigError(fmt::format("backbone.{}", field),
                        fmt::format("{}x{} must be a positive multiple of {}", grid.rows,
                                    grid.cols, unit));
    }
  }
  for (std::size_t i = 0; i < kNumStages; ++i) {
    for (Domain d : {Domain::Uav, Domain::Sat}) {
      const GridSize g = stage_grid(d, i);
      if (g.rows % sra_ratios[i] != 0 || g.cols % sra_ratios[i] != 0) {
        throw ConfigError("backbone.sra_ratios",
                          fmt::format("stage {} ratio {} does not divide the {} grid {}x{}", i,
                                      sra_ratios[i], d == Domain::Uav ? "UAV" : "SAT", g.rows,
                                      g.cols));
      }
    }
  }
}

GridSize BackboneConfig::stage_grid(Domain domain, std::size_t stage) const {
  const GridSize input = domain == Domain::Uav ? uav_input : sat_input;
  const std::int64_t factor = patch_size << stage;
  return {input.rows / factor, input.cols / factor};
}

torch::Tensor TokenSequence::to_grid() const {
  if (data.size(1) != grid.area()) {
    throw DimensionMismatch(fmt::format("token length {} does not match grid {}x{}", data.size(1),
                                        grid.rows, grid.cols));
  }
  return data.transpose(1, 2).reshape({data.size(0), data.size(2), grid.rows, grid.cols});
}

TokenSequence TokenSequence::from_grid(const torch::Tensor& grid, Domain domain) {
  return {grid.flatten(2).transpose(1, 2), GridSize{grid.size(2), grid.size(3)}, domain};
}

PatchMergeImpl::PatchMergeImpl(std::int64_t in_channels, std::int64_t out_channels,
                               std::int64_t stride)
    : stride_(stride) {
  proj_ = register_module(
      "proj", torch::nn::Conv2d(torch::nn::Conv2dOptions(in_channels, out_channels, stride)
                                    .stride(stride)));
  norm_ = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({out_channels})));
  init_projection(*this);
}

TokenSequence PatchMergeImpl::forward(const torch::Tensor& grid, Domain domain) {
  if (grid.size(2) % stride_ != 0 || grid.size(3) % stride_ != 0) {
    throw DimensionMismatch(fmt::format("grid {}x{} is not divisible by stride {}", grid.size(2),
                                        grid.size(3), stride_));
  }
  auto tokens = TokenSequence::from_grid(proj_->forward(grid), domain);
  tokens.data = norm_->forward(tokens.data);
  return tokens;
}

std::pair<TokenSequence, TokenSequence> patch_embed(PatchMerge& embed, const torch::Tensor& uav,
                                                    const torch::Tensor& sat,
                                                    const BackboneConfig& cfg) {
  check_inputs(uav, sat, cfg);
  return {embed->forward(uav, Domain::Uav), embed->forward(sat, Domain::Sat)};
}

SpatialReductionImpl::SpatialReductionImpl(std::int64_t channels, std::int64_t ratio)
    : ratio_(ratio) {
  if (ratio <= 0) {
    throw std::invalid_argument("SRA ratio must be positive");
  }
  if (ratio > 1) {
    conv_ = register_module(
        "conv", torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, channels, ratio).stride(ratio)));
    norm_ = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({channels})));
    init_projection(*this);
  }
}

TokenSequence SpatialReductionImpl::forward(const TokenSequence& tokens) {
  if (tokens.grid.rows % ratio_ != 0 || tokens.grid.cols % ratio_ != 0) {
    throw DimensionMismatch(fmt::format("SRA ratio {} does not divide grid {}x{}", ratio_,
                                        tokens.grid.rows, tokens.grid.cols));
  }
  if (ratio_ == 1) {
    return tokens;
  }
  auto reduced = TokenSequence::from_grid(conv_->forward(tokens.to_grid()), tokens.domain);
  reduced.data = norm_->forward(reduced.data);
  return reduced;
}

torch::Tensor scaled_dot_product(const torch::Tensor& q, const torch::Tensor& k,
                                 const torch::Tensor& v, torch::Tensor* weights) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.size(-1)));
  auto attn = torch::softmax(torch::matmul(q, k.transpose(-2, -1)) * scale, -1);
  if (weights != nullptr) {
    *weights = attn;
  }
  return torch::matmul(attn, v);
}

MixedAttentionImpl::MixedAttentionImpl(std::int64_t channels, std::int64_t heads,
                                       std::int64_t sra_ratio)
    : heads_(heads) {
  if (channels % heads != 0) {
    throw ChannelMismatch(
        fmt::format("{} channels are not divisible by {} attention heads", channels, heads));
  }
  q_ = register_module("q", torch::nn::Linear(channels, channels));
  kv_ = register_module("kv", torch::nn::Linear(channels, 2 * channels));
  sr_uav_ = register_module("sr_uav", SpatialReduction(channels, sra_ratio));
  sr_sat_ = register_module("sr_sat", SpatialReduction(channels, sra_ratio));
  proj_ = register_module("proj", torch::nn::Linear(channels, channels));
  init_projection(*this);
  torch::NoGradGuard no_grad;
  proj_->weight.zero_();
}

torch::Tensor MixedAttentionImpl::forward(const torch::Tensor& merged, const MergedLayout& layout,
                                          AttentionProbe* probe) {
  auto [uav, sat] = split_merged(merged, layout);
  const std::int64_t batch = merged.size(0);
  const std::int64_t length = merged.size(1);
  const std::int64_t channels = merged.size(2);
  const std::int64_t head_dim = channels / heads_;

  auto q = q_->forward(merged).view({batch, length, heads_, head_dim}).permute({0, 2, 1, 3});
  auto q_u = q.narrow(2, 0, layout.uav_length());
  auto q_s = q.narrow(2, layout.uav_length(), layout.sat_length());

  // [2, B, heads, L', d] per domain
  auto key_value = [&](const TokenSequence& reduced) {
    return kv_->forward(reduced.data)
        .view({batch, reduced.length(), 2, heads_, head_dim})
        .permute({2, 0, 3, 1, 4});
  };
  auto kv_u = key_value(sr_uav_->forward(uav));
  auto kv_s = key_value(sr_sat_->forward(sat));

  torch::Tensor w_u;
  torch::Tensor w_s;
  auto out_u = scaled_dot_product(q_u, kv_u[0], kv_u[1], probe ? &w_u : nullptr);
  auto out_s = scaled_dot_product(q_s, torch::cat({kv_u[0], kv_s[0]}, 2),
                                  torch::cat({kv_u[1], kv_s[1]}, 2), probe ? &w_s : nullptr);
  if (probe != nullptr) {
    probe->uav = w_u;
    probe->sat = w_s;
  }
  auto out = torch::cat({out_u, out_s}, 2).permute({0, 2, 1, 3}).reshape({batch, length, channels});
  return proj_->forward(out);
}

PositionEncodingImpl::PositionEncodingImpl(std::int64_t channels) {
  conv_ = register_module("conv", torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, channels, 3)
                                                        .padding(1)
                                                        .groups(channels)));
  torch::NoGradGuard no_grad;
  conv_->weight.zero_();
  conv_->bias.zero_();
}

TokenSequence PositionEncodingImpl::forward(const TokenSequence& tokens) {
  auto grid = tokens.to_grid();
  return TokenSequence::from_grid(grid + conv_->forward(grid), tokens.domain);
}

MlpImpl::MlpImpl(std::int64_t channels, double ratio) {
  const auto hidden = static_cast<std::int64_t>(std::lround(channels * ratio));
  fc1_ = register_module("fc1", torch::nn::Linear(channels, hidden));
  fc2_ = register_module("fc2", torch::nn::Linear(hidden, channels));
  init_projection(*this);
  torch::NoGradGuard no_grad;
  fc2_->weight.zero_();
}

torch::Tensor MlpImpl::forward(const torch::Tensor& x) {
  return fc2_->forward(torch::gelu(fc1_->forward(x)));
}

EncoderBlockImpl::EncoderBlockImpl(std::int64_t channels, std::int64_t heads,
                                   std::int64_t sra_ratio, double mlp_ratio) {
  norm1_ = register_module("norm1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({channels})));
  attn_ = register_module("attn", MixedAttention(channels, heads, sra_ratio));
  norm2_ = register_module("norm2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({channels})));
  mlp_ = register_module("mlp", Mlp(channels, mlp_ratio));
}

torch::Tensor EncoderBlockImpl::forward(const torch::Tensor& merged, const MergedLayout& layout,
                                        AttentionProbe* probe) {
  auto x = merged + attn_->forward(norm1_->forward(merged), layout, probe);
  return x + mlp_->forward(norm2_->forward(x));
}

BackboneStageImpl::BackboneStageImpl(const BackboneConfig& cfg, std::size_t stage) {
  const std::int64_t channels = cfg.stage_channels[stage];
  const std::int64_t in_channels = stage == 0 ? 3 : cfg.stage_channels[stage - 1];
  const std::int64_t stride = stage == 0 ? cfg.patch_size : 2;
  merge_ = register_module("merge", PatchMerge(in_channels, channels, stride));
  blocks_ = register_module("blocks", torch::nn::ModuleList());
  for (std::int64_t i = 0; i < cfg.stage_depths[stage]; ++i) {
    blocks_->push_back(EncoderBlock(channels, cfg.stage_heads[stage], cfg.sra_ratios[stage],
                                    cfg.mlp_ratios[stage]));
  }
  peg_uav_ = register_module("peg_uav", PositionEncoding(channels));
  peg_sat_ = register_module("peg_sat", PositionEncoding(channels));
}

std::pair<torch::Tensor, torch::Tensor> BackboneStageImpl::forward(const torch::Tensor& uav,
                                                                   const torch::Tensor& sat) {
  const auto u = merge_->forward(uav, Domain::Uav);
  const auto s = merge_->forward(sat, Domain::Sat);
  const MergedLayout layout{u.grid, s.grid};
  auto x = torch::cat({u.data, s.data}, 1);
  for (std::size_t i = 0; i < blocks_->size(); ++i) {
    x = blocks_->ptr<EncoderBlockImpl>(i)->forward(x, layout);
    if (i == 0) {
      auto [tu, ts] = split_merged(x, layout);
      x = torch::cat({peg_uav_->forward(tu).data, peg_sat_->forward(ts).data}, 1);
    }
  }
  auto [tu, ts] = split_merged(x, layout);
  return {tu.to_grid(), ts.to_grid()};
}

OsPcpvtImpl::OsPcpvtImpl(BackboneConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  for (std::size_t i = 0; i < kNumStages; ++i) {
    stages_.push_back(register_module("stage" + std::to_string(i + 1), BackboneStage(cfg_, i)));
  }
}

StageOutputs OsPcpvtImpl::forward(const torch::Tensor& uav, const torch::Tensor& sat) {
  check_inputs(uav, sat, cfg_);
  StageOutputs out;
  torch::Tensor u = uav;
  torch::Tensor s = sat;
  for (std::size_t i = 0; i < kNumStages; ++i) {
    std::tie(u, s) = stages_[i]->forward(u, s);
    out.uav[i] = u;
    out.sat[i] = s;
    out.token_counts[i] = {u.size(2) * u.size(3), s.size(2) * s.size(3)};
  }
  return out;
}

}  // namespace osfpi
