// SPDX-License-Identifier: Apache-2.0
//
// One-stream pyramid transformer backbone. UAV and satellite patches are
// embedded separately, concatenated into one token sequence, and run through
// three stages of spatial-reduction attention. UAV queries attend only to UAV
// keys; satellite queries attend to the keys of both images.
#pragma once

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include <torch/nn/module.h>
#include <torch/nn/modules/container/modulelist.h>
#include <torch/nn/modules/conv.h>
#include <torch/nn/modules/linear.h>
#include <torch/nn/modules/normalization.h>
#include <torch/nn/pimpl.h>

namespace osfpi {

inline constexpr std::size_t kNumStages = 3;

struct GridSize {
  std::int64_t rows = 0;
  std::int64_t cols = 0;

  std::int64_t area() const noexcept { return rows * cols; }
  bool operator==(const GridSize&) const = default;
};

enum class Domain { Uav, Sat };

struct BackboneConfig {
  std::int64_t patch_size = 4;
  std::vector<std::int64_t> stage_channels{64, 128, 320};
  std::vector<std::int64_t> stage_depths{3, 4, 6};
  std::vector<std::int64_t> stage_heads{1, 2, 5};
  std::vector<std::int64_t> sra_ratios{8, 4, 2};
  std::vector<double> mlp_ratios{8.0, 8.0, 4.0};
  GridSize uav_input{96, 96};
  GridSize sat_input{384, 384};

  /// Throws ConfigError naming the offending field.
  void validate() const;

  /// Token grid of one domain at a stage (0-based).
  GridSize stage_grid(Domain domain, std::size_t stage) const;
};

/// Tokens of one image flattened row-major from a 2D grid.
struct TokenSequence {
  torch::Tensor data;  // [B, rows * cols, C]
  GridSize grid;
  Domain domain = Domain::Uav;

  std::int64_t length() const { return data.size(1); }
  std::int64_t channels() const { return data.size(2); }

  /// [B, C, rows, cols]
  torch::Tensor to_grid() const;
  static TokenSequence from_grid(const torch::Tensor& grid, Domain domain);
};

/// Split point of a merged [UAV | SAT] sequence.
struct MergedLayout {
  GridSize uav;
  GridSize sat;

  std::int64_t uav_length() const noexcept { return uav.area(); }
  std::int64_t sat_length() const noexcept { return sat.area(); }
  std::int64_t total() const noexcept { return uav.area() + sat.area(); }
};

struct StageOutputs {
  std::array<torch::Tensor, kNumStages> uav;  // U1..U3, [B, C_i, H, W]
  std::array<torch::Tensor, kNumStages> sat;  // S1..S3
  /// (UAV rows, SAT rows) of the merged sequence in each stage.
  std::array<std::pair<std::int64_t, std::int64_t>, kNumStages> token_counts{};
};

/// Strided conv (kernel = stride) followed by LayerNorm. Used for the patch
/// embedding and the 2x2 downsampling between stages; the same weights are
/// applied to each domain's grid separately.
class PatchMergeImpl : public torch::nn::Module {
 public:
  PatchMergeImpl(std::int64_t in_channels, std::int64_t out_channels, std::int64_t stride);

  TokenSequence forward(const torch::Tensor& grid, Domain domain);

  std::int64_t stride() const noexcept { return stride_; }

 private:
  std::int64_t stride_;
  torch::nn::Conv2d proj_{nullptr};
  torch::nn::LayerNorm norm_{nullptr};
};
TORCH_MODULE(PatchMerge);

/// Embeds both images into stage-1 token sequences. Inputs are [B, 3, H, W].
std::pair<TokenSequence, TokenSequence> patch_embed(PatchMerge& embed, const torch::Tensor& uav,
                                                    const torch::Tensor& sat,
                                                    const BackboneConfig& cfg);

/// Spatial reduction for keys and values: strided conv + LayerNorm, identity at ratio 1.
class SpatialReductionImpl : public torch::nn::Module {
 public:
  SpatialReductionImpl(std::int64_t channels, std::int64_t ratio);

  TokenSequence forward(const TokenSequence& tokens);

  std::int64_t ratio() const noexcept { return ratio_; }

 private:
  std::int64_t ratio_;
  torch::nn::Conv2d conv_{nullptr};
  torch::nn::LayerNorm norm_{nullptr};
};
TORCH_MODULE(SpatialReduction);

/// softmax(q k^T / sqrt(d)) v over [B, heads, L, d] tensors. Optionally
/// returns the attention weights.
torch::Tensor scaled_dot_product(const torch::Tensor& q, const torch::Tensor& k,
                                 const torch::Tensor& v, torch::Tensor* weights = nullptr);

/// Attention weights captured by a forward pass, for inspection in tests.
struct AttentionProbe {
  torch::Tensor uav;  // [B, heads, L_u, L_u']
  torch::Tensor sat;  // [B, heads, L_s, L_u' + L_s']
};

class MixedAttentionImpl : public torch::nn::Module {
 public:
  MixedAttentionImpl(std::int64_t channels, std::int64_t heads, std::int64_t sra_ratio);

  torch::Tensor forward(const torch::Tensor& merged, const MergedLayout& layout,
                        AttentionProbe* probe = nullptr);

  torch::nn::Linear& query() { return q_; }
  torch::nn::Linear& key_value() { return kv_; }
  torch::nn::Linear& output() { return proj_; }

 private:
  std::int64_t heads_;
  torch::nn::Linear q_{nullptr};
  torch::nn::Linear kv_{nullptr};
  SpatialReduction sr_uav_{nullptr};
  SpatialReduction sr_sat_{nullptr};
  torch::nn::Linear proj_{nullptr};
};
TORCH_MODULE(MixedAttention);

/// Conditional position encoding: depthwise 3x3 conv on the token grid added
/// as a residual. Zero-initialized.
class PositionEncodingImpl : public torch::nn::Module {
 public:
  explicit PositionEncodingImpl(std::int64_t channels);

  TokenSequence forward(const TokenSequence& tokens);

  torch::nn::Conv2d& conv() { return conv_; }

 private:
  torch::nn::Conv2d conv_{nullptr};
};
TORCH_MODULE(PositionEncoding);

class MlpImpl : public torch::nn::Module {
 public:
  MlpImpl(std::int64_t channels, double ratio);

  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Linear fc1_{nullptr};
  torch::nn::Linear fc2_{nullptr};
};
TORCH_MODULE(Mlp);

/// Pre-norm transformer block over a merged sequence:
/// x + attn(norm(x)), then x + mlp(norm(x)).
class EncoderBlockImpl : public torch::nn::Module {
 public:
  EncoderBlockImpl(std::int64_t channels, std::int64_t heads, std::int64_t sra_ratio,
                   double mlp_ratio);

  torch::Tensor forward(const torch::Tensor& merged, const MergedLayout& layout,
                        AttentionProbe* probe = nullptr);

  MixedAttention& attention() { return attn_; }

 private:
  torch::nn::LayerNorm norm1_{nullptr};
  MixedAttention attn_{nullptr};
  torch::nn::LayerNorm norm2_{nullptr};
  Mlp mlp_{nullptr};
};
TORCH_MODULE(EncoderBlock);

class BackboneStageImpl : public torch::nn::Module {
 public:
  BackboneStageImpl(const BackboneConfig& cfg, std::size_t stage);

  /// Inputs are images (stage 0) or the previous stage's maps, [B, C, H, W].
  /// Returns the UAV and SAT maps of this stage.
  std::pair<torch::Tensor, torch::Tensor> forward(const torch::Tensor& uav,
                                                  const torch::Tensor& sat);

  PatchMerge& merge() { return merge_; }
  PositionEncoding& peg(Domain domain) { return domain == Domain::Uav ? peg_uav_ : peg_sat_; }
  EncoderBlock block(std::size_t i) { return blocks_->ptr<EncoderBlockImpl>(i); }
  std::size_t depth() const { return blocks_->size(); }

 private:
  PatchMerge merge_{nullptr};
  torch::nn::ModuleList blocks_{nullptr};
  PositionEncoding peg_uav_{nullptr};
  PositionEncoding peg_sat_{nullptr};
};
TORCH_MODULE(BackboneStage);

class OsPcpvtImpl : public torch::nn::Module {
 public:
  explicit OsPcpvtImpl(BackboneConfig cfg);

  /// uav: [B, 3, H_z, W_z], sat: [B, 3, H_x, W_x]
  StageOutputs forward(const torch::Tensor& uav, const torch::Tensor& sat);

  const BackboneConfig& config() const noexcept { return cfg_; }
  BackboneStage stage(std::size_t i) { return stages_[i]; }

 private:
  BackboneConfig cfg_;
  std::vector<BackboneStage> stages_;
};
TORCH_MODULE(OsPcpvt);

}  // namespace osfpi
