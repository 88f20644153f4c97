// SPDX-License-Identifier: Apache-2.0
//
// Training objective: Hanning-weighted binary cross-entropy on the heatmap
// plus smooth-L1 on offsets at rank-selected positive pixels.
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <torch/types.h>

#include "osfpi/fusion_head.hpp"

namespace osfpi {

struct SampleLabel {
  double gt_x = 0.0;  // column, satellite pixels
  double gt_y = 0.0;  // row
  int window = 33;    // side of the positive rectangle, odd
  int topk = 300;     // heatmap rank cap for offset positives

  /// Throws std::invalid_argument when gt lies outside [0, size) or window/topk are invalid.
  void validate(std::int64_t size) const;

  /// Rounded ground-truth pixel the window is centered on.
  std::int64_t center_col() const;
  std::int64_t center_row() const;
};

/// w[n] = 0.5 - 0.5 cos(2 pi n / (M - 1)), n = 0..M-1. Throws for M < 2.
std::vector<double> hanning_window_1d(int m);

/// Outer product of two Hanning windows centered on the rounded ground truth,
/// cropped at the borders. [size, size] float64.
torch::Tensor classification_weight_map(const SampleLabel& label, std::int64_t size);

/// Weighted BCE over one [S, S] logit map: positives (nonzero weight) carry
/// the Hanning weight, negatives weight 1, normalized by sum(weights) + 1.
/// Throws std::domain_error for non-finite logits.
torch::Tensor classification_loss(const torch::Tensor& logits, const SampleLabel& label);

/// Flat row-major indices p inside the window rectangle whose heatmap value
/// ranks among the topk largest of all pixels (ties ranked by index). Sorted.
std::vector<std::int64_t> select_positive_samples(const torch::Tensor& heatmap,
                                                  const SampleLabel& label);

double smooth_l1(double x);
torch::Tensor smooth_l1(const torch::Tensor& x);

/// Mean smooth-L1 between predicted offsets [2, S, S] and (gt - p) over the
/// positives of `heatmap`, both axes. Zero when no pixel qualifies.
torch::Tensor offset_loss(const torch::Tensor& offsets, const torch::Tensor& heatmap,
                          const SampleLabel& label);

struct LossBreakdown {
  torch::Tensor classification;
  torch::Tensor offset;
  torch::Tensor total;

  double classification_value() const { return classification.item<double>(); }
  double offset_value() const { return offset.item<double>(); }
  double total_value() const { return total.item<double>(); }
};

/// Batch mean of classification + offset losses on raw head outputs.
LossBreakdown total_loss(const HeadOutput& output, std::span<const SampleLabel> labels);

}  // namespace osfpi
