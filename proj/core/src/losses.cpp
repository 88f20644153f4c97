// SPDX-License-Identifier: Apache-2.0
#include "osfpi/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>

#include <fmt/format.h>
#include <torch/torch.h>

#include "osfpi/errors.hpp"

namespace osfpi {

namespace {

struct WindowBounds {
  std::int64_t row0, row1, col0, col1;  // inclusive
};

WindowBounds window_bounds(const SampleLabel& label, std::int64_t rows, std::int64_t cols) {
  const std::int64_t half = label.window / 2;
  return {std::max<std::int64_t>(0, label.center_row() - half),
          std::min(rows - 1, label.center_row() + half),
          std::max<std::int64_t>(0, label.center_col() - half),
          std::min(cols - 1, label.center_col() + half)};
}

}  // namespace

void SampleLabel::validate(std::int64_t size) const {
  if (!(gt_x >= 0.0 && gt_x < static_cast<double>(size) && gt_y >= 0.0 &&
        gt_y < static_cast<double>(size))) {
    throw std::invalid_argument(
        fmt::format("ground truth ({}, {}) outside [0, {})", gt_x, gt_y, size));
  }
  if (window < 1 || window % 2 == 0) {
    throw std::invalid_argument(fmt::format("window {} must be odd and positive", window));
  }
  if (topk < 1) {
    throw std::invalid_argument("topk must be at least 1");
  }
}

std::int64_t SampleLabel::center_col() const {
  return static_cast<std::int64_t>(std::floor(gt_x + 0.5));
}

std::int64_t SampleLabel::center_row() const {
  return static_cast<std::int64_t>(std::floor(gt_y + 0.5));
}

std::vector<double> hanning_window_1d(int m) {
  if (m < 2) {
    throw std::invalid_argument(fmt::format("Hanning window length {} < 2", m));
  }
  std::vector<double> w(static_cast<std::size_t>(m));
  for (int n = 0; n < m; ++n) {
    w[static_cast<std::size_t>(n)] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * n / (m - 1));
  }
  return w;
}

torch::Tensor classification_weight_map(const SampleLabel& label, std::int64_t size) {
  const auto taps = hanning_window_1d(label.window);
  const std::int64_t half = label.window / 2;
  auto map = torch::zeros({size, size}, torch::kFloat64);
  auto acc = map.accessor<double, 2>();
  const auto b = window_bounds(label, size, size);
  for (std::int64_t r = b.row0; r <= b.row1; ++r) {
    const double wr = taps[static_cast<std::size_t>(r - label.center_row() + half)];
    for (std::int64_t c = b.col0; c <= b.col1; ++c) {
      acc[r][c] = wr * taps[static_cast<std::size_t>(c - label.center_col() + half)];
    }
  }
  return map;
}

torch::Tensor classification_loss(const torch::Tensor& logits, const SampleLabel& label) {
  if (logits.dim() != 2 || logits.size(0) != logits.size(1)) {
    throw DimensionMismatch("classification_loss expects a square [S, S] logit map");
  }
  if (!torch::isfinite(logits).all().item<bool>()) {
    throw std::domain_error("classification_loss: non-finite logits");
  }
  const auto weights = classification_weight_map(label, logits.size(0)).to(logits.dtype());
  const auto positive = weights > 0;
  // BCE with logits: target 1 -> softplus(-x), target 0 -> softplus(x).
  const auto per_pixel = torch::where(positive, weights * torch::softplus(-logits),
                                      torch::softplus(logits));
  return per_pixel.sum() / (weights.sum() + 1.0);
}

std::vector<std::int64_t> select_positive_samples(const torch::Tensor& heatmap,
                                                  const SampleLabel& label) {
  auto map = heatmap.detach().to(torch::kCPU, torch::kFloat64).squeeze().contiguous();
  if (map.dim() != 2) {
    throw DimensionMismatch("select_positive_samples expects a 2D heatmap");
  }
  const std::int64_t rows = map.size(0);
  const std::int64_t cols = map.size(1);
  const std::int64_t n = rows * cols;
  const double* v = map.data_ptr<double>();
  const std::int64_t k = std::min<std::int64_t>(label.topk, n);

  // Strict ranking: larger value first, lower index first among equal values.
  const auto ranks_before = [v](std::int64_t a, std::int64_t b) {
    return v[a] > v[b] || (v[a] == v[b] && a < b);
  };
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), std::int64_t{0});
  std::nth_element(order.begin(), order.begin() + (k - 1), order.end(), ranks_before);
  const std::int64_t last_kept = order[static_cast<std::size_t>(k - 1)];

  std::vector<std::int64_t> positives;
  const auto b = window_bounds(label, rows, cols);
  for (std::int64_t r = b.row0; r <= b.row1; ++r) {
    for (std::int64_t c = b.col0; c <= b.col1; ++c) {
      const std::int64_t p = r * cols + c;
      if (p == last_kept || ranks_before(p, last_kept)) {
        positives.push_back(p);
      }
    }
  }
  return positives;
}

double smooth_l1(double x) {
  const double a = std::abs(x);
  return a < 1.0 ? 0.5 * x * x : a - 0.5;
}

torch::Tensor smooth_l1(const torch::Tensor& x) {
  const auto a = x.abs();
  return torch::where(a < 1.0, 0.5 * x * x, a - 0.5);
}

torch::Tensor offset_loss(const torch::Tensor& offsets, const torch::Tensor& heatmap,
                          const SampleLabel& label) {
  if (offsets.dim() != 3 || offsets.size(0) != 2) {
    throw DimensionMismatch("offset_loss expects [2, S, S] offsets");
  }
  const auto positives = select_positive_samples(heatmap, label);
  if (positives.empty()) {
    return offsets.sum() * 0.0;
  }
  const std::int64_t cols = offsets.size(2);
  const auto count = static_cast<std::int64_t>(positives.size());
  auto index = torch::from_blob(const_cast<std::int64_t*>(positives.data()), {count}, torch::kInt64)
                   .clone();
  auto target = torch::empty({2, count}, torch::kFloat64);
  auto acc = target.accessor<double, 2>();
  for (std::int64_t i = 0; i < count; ++i) {
    const std::int64_t p = positives[static_cast<std::size_t>(i)];
    acc[0][i] = label.gt_x - static_cast<double>(p % cols);
    acc[1][i] = label.gt_y - static_cast<double>(p / cols);
  }
  const auto predicted = offsets.reshape({2, -1}).index_select(1, index);
  return smooth_l1(predicted - target.to(offsets.dtype())).mean();
}

LossBreakdown total_loss(const HeadOutput& output, std::span<const SampleLabel> labels) {
  const std::int64_t batch = output.heatmap.size(0);
  if (static_cast<std::int64_t>(labels.size()) != batch) {
    throw std::invalid_argument(
        fmt::format("{} labels for a batch of {}", labels.size(), batch));
  }
  std::vector<torch::Tensor> cls;
  std::vector<torch::Tensor> off;
  for (std::int64_t i = 0; i < batch; ++i) {
    const auto& label = labels[static_cast<std::size_t>(i)];
    const auto heatmap = output.heatmap[i][0];
    label.validate(heatmap.size(0));
    cls.push_back(classification_loss(heatmap, label));
    off.push_back(offset_loss(output.offsets[i], heatmap, label));
  }
  LossBreakdown loss;
  loss.classification = torch::stack(cls).mean();
  loss.offset = torch::stack(off).mean();
  loss.total = loss.classification + loss.offset;
  return loss;
}

}  // namespace osfpi
