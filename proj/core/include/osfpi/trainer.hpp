// SPDX-License-Identifier: Apache-2.0
//
// AdamW training with a cosine schedule and a faster head learning rate.
#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/optim/adamw.h>

#include "osfpi/checkpoint.hpp"
#include "osfpi/model.hpp"
#include "osfpi/synth.hpp"

namespace osfpi {

struct TrainConfig {
  int batch_size = 16;
  double base_lr = 3e-4;
  double final_lr = 5e-6;
  double head_lr_ratio = 1.5;
  int epochs = 1;
  std::int64_t max_steps = 0;  // > 0 overrides epochs
  std::uint64_t seed = 0;
  double weight_decay = 0.05;
  std::int64_t warmup_steps = 0;
  double grad_clip = 1.0;  // global norm, <= 0 disables
  std::int64_t checkpoint_every = 0;  // steps, 0 = only at the end
  int window = 33;
  int topk = 300;

  /// Throws ConfigError("train.<field>", ...).
  void validate() const;
};

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct LearningRates {
  double backbone = 0.0;
  double head = 0.0;
};

/// final + 0.5 (base - final)(1 + cos(pi step / total)) after an optional
/// linear warmup; head = ratio x backbone. Throws std::out_of_range unless
/// 0 <= step <= total.
LearningRates cosine_lr(std::int64_t step, std::int64_t total_steps, const TrainConfig& cfg);

struct LogRow {
  std::int64_t step = 0;
  double lr_backbone = 0.0;
  double lr_head = 0.0;
  double loss_cls = 0.0;
  double loss_off = 0.0;
  double loss_total = 0.0;
  double wall_ms = 0.0;
};

/// Header is written when the file is new or append is false.
void write_training_log(const std::filesystem::path& path, std::span<const LogRow> rows,
                        bool append = false);
std::vector<LogRow> read_training_log(const std::filesystem::path& path);

/// Backbone vs everything else, each split into decayed matrices and
/// undecayed vectors (norm weights, biases).
struct ParameterGroups {
  std::vector<torch::Tensor> backbone_decay;
  std::vector<torch::Tensor> backbone_no_decay;
  std::vector<torch::Tensor> head_decay;
  std::vector<torch::Tensor> head_no_decay;

  std::size_t size() const;
};
ParameterGroups partition_parameters(OsFpi& model);

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::int64_t step, std::vector<std::string> sample_ids, const std::string& what);
  std::int64_t step() const noexcept { return step_; }
  const std::vector<std::string>& sample_ids() const noexcept { return ids_; }

 private:
  std::int64_t step_;
  std::vector<std::string> ids_;
};

/// Deterministic shuffle of [0, n) for one epoch.
std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed, std::int64_t epoch);

class Trainer {
 public:
  Trainer(OsFpi model, TrainConfig cfg);

  /// Rebuilds model, optimizer state and step counter from a checkpoint.
  static Trainer resume(const std::filesystem::path& checkpoint);

  std::int64_t total_steps(std::size_t dataset_size) const;
  std::int64_t step() const noexcept { return step_; }
  OsFpi& model() { return model_; }
  const TrainConfig& config() const noexcept { return cfg_; }

  /// Runs steps until `until_step` (or the schedule end when negative).
  /// Checkpoints go to checkpoint_dir/step_NNNNNN.osfpi at the configured
  /// cadence and at the final step. Throws TrainingDiverged on a non-finite loss.
  std::vector<LogRow> train(const std::vector<GeoSample>& data, std::int64_t until_step = -1,
                            const std::filesystem::path& checkpoint_dir = {});

  /// One optimizer step on an explicit batch.
  LogRow step_on(const std::vector<const GeoSample*>& batch, std::int64_t total_steps);

  Checkpoint checkpoint() const;
  void save(const std::filesystem::path& path) const;

 private:
  OsFpi model_;
  TrainConfig cfg_;
  std::unique_ptr<torch::optim::AdamW> optimizer_;
  std::vector<bool> group_is_head_;
  std::int64_t step_ = 0;
};

struct OverfitReport {
  std::vector<LogRow> log;
  std::vector<double> point_error_px;   // offset-adjusted
  std::vector<double> argmax_error_px;
  std::vector<double> point_error_m;
  double mean_point_error_px = 0.0;
  double mean_argmax_error_px = 0.0;
  double mean_point_error_m = 0.0;
};

/// Trains on a fixed set of pairs for `steps` steps, then measures the
/// argmax-only and offset-adjusted errors on those same pairs.
OverfitReport overfit_smoke(OsFpi model, const std::vector<GeoSample>& pairs, std::int64_t steps,
                            TrainConfig cfg);

/// Network stored in a trainer checkpoint, weights loaded, dtype preserved.
OsFpi load_model(const std::filesystem::path& checkpoint);

/// Forward on samples in chunks; one prediction per sample.
std::vector<PredictionOutput> predict_samples(OsFpi& model, const std::vector<GeoSample>& samples,
                                              int chunk = 8);

}  // namespace osfpi
