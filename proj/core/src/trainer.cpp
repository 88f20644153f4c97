// SPDX-License-Identifier: Apache-2.0
#include "osfpi/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

#include <fmt/format.h>
#include <fmt/ranges.h>
#include <torch/torch.h>

#include "osfpi/csv.hpp"
#include "osfpi/errors.hpp"
#include "osfpi/json_util.hpp"
#include "osfpi/losses.hpp"

namespace osfpi {

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("train.batch_size", "must be >= 1");
  if (!(base_lr > 0.0)) throw ConfigError("train.base_lr", "must be positive");
  if (!(final_lr >= 0.0) || !(final_lr < base_lr)) {
    throw ConfigError("train.final_lr", "must satisfy 0 <= final_lr < base_lr");
  }
  if (!(head_lr_ratio > 0.0)) throw ConfigError("train.head_lr_ratio", "must be positive");
  if (epochs < 0) throw ConfigError("train.epochs", "must be >= 0");
  if (max_steps < 0) throw ConfigError("train.max_steps", "must be >= 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay", "must be >= 0");
  if (warmup_steps < 0) throw ConfigError("train.warmup_steps", "must be >= 0");
  if (checkpoint_every < 0) throw ConfigError("train.checkpoint_every", "must be >= 0");
  if (window < 1 || window % 2 == 0) throw ConfigError("train.window", "must be odd and positive");
  if (topk < 1) throw ConfigError("train.topk", "must be >= 1");
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"batch_size", c.batch_size},     {"base_lr", c.base_lr},
          {"final_lr", c.final_lr},         {"head_lr_ratio", c.head_lr_ratio},
          {"epochs", c.epochs},             {"max_steps", c.max_steps},
          {"seed", c.seed},                 {"weight_decay", c.weight_decay},
          {"warmup_steps", c.warmup_steps}, {"grad_clip", c.grad_clip},
          {"checkpoint_every", c.checkpoint_every},
          {"window", c.window},             {"topk", c.topk}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  StrictObject o(j, "train");
  o.read("batch_size", c.batch_size);
  o.read("base_lr", c.base_lr);
  o.read("final_lr", c.final_lr);
  o.read("head_lr_ratio", c.head_lr_ratio);
  o.read("epochs", c.epochs);
  o.read("max_steps", c.max_steps);
  o.read("seed", c.seed);
  o.read("weight_decay", c.weight_decay);
  o.read("warmup_steps", c.warmup_steps);
  o.read("grad_clip", c.grad_clip);
  o.read("checkpoint_every", c.checkpoint_every);
  o.read("window", c.window);
  o.read("topk", c.topk);
  o.finish();
  c.validate();
  return c;
}

LearningRates cosine_lr(std::int64_t step, std::int64_t total_steps, const TrainConfig& cfg) {
  if (step < 0 || step > total_steps) {
    throw std::out_of_range(fmt::format("cosine_lr: step {} outside [0, {}]", step, total_steps));
  }
  double lr = cfg.base_lr;
  if (step < cfg.warmup_steps) {
    lr = cfg.base_lr * static_cast<double>(step + 1) / static_cast<double>(cfg.warmup_steps);
  } else if (total_steps > cfg.warmup_steps) {
    const double t = static_cast<double>(step - cfg.warmup_steps) /
                     static_cast<double>(total_steps - cfg.warmup_steps);
    lr = cfg.final_lr + 0.5 * (cfg.base_lr - cfg.final_lr) * (1.0 + std::cos(std::numbers::pi * t));
  }
  return {lr, cfg.head_lr_ratio * lr};
}

void write_training_log(const std::filesystem::path& path, std::span<const LogRow> rows,
                        bool append) {
  const bool header = !append || !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
  if (!out) {
    throw IoError(fmt::format("cannot write {}", path.string()));
  }
  if (header) {
    out << "step,lr_backbone,lr_head,loss_cls,loss_off,loss_total,wall_ms\n";
  }
  for (const auto& r : rows) {
    out << fmt::format("{},{},{},{},{},{},{:.3f}\n", r.step, r.lr_backbone, r.lr_head, r.loss_cls,
                       r.loss_off, r.loss_total, r.wall_ms);
  }
}

std::vector<LogRow> read_training_log(const std::filesystem::path& path) {
  const auto t = CsvTable::read(path);
  const std::size_t cols[] = {t.column("step"),     t.column("lr_backbone"), t.column("lr_head"),
                              t.column("loss_cls"), t.column("loss_off"),    t.column("loss_total"),
                              t.column("wall_ms")};
  std::vector<LogRow> rows;
  for (std::size_t r = 0; r < t.rows(); ++r) {
    rows.push_back({static_cast<std::int64_t>(t.number(r, cols[0])), t.number(r, cols[1]),
                    t.number(r, cols[2]), t.number(r, cols[3]), t.number(r, cols[4]),
                    t.number(r, cols[5]), t.number(r, cols[6])});
  }
  return rows;
}

std::size_t ParameterGroups::size() const {
  return backbone_decay.size() + backbone_no_decay.size() + head_decay.size() +
         head_no_decay.size();
}

ParameterGroups partition_parameters(OsFpi& model) {
  ParameterGroups g;
  for (const auto& item : model->named_parameters(/*recurse=*/true)) {
    if (!item.value().requires_grad()) {
      continue;
    }
    const bool backbone = item.key().rfind("backbone.", 0) == 0;
    const bool decay = item.value().dim() >= 2;
    auto& bucket = backbone ? (decay ? g.backbone_decay : g.backbone_no_decay)
                            : (decay ? g.head_decay : g.head_no_decay);
    bucket.push_back(item.value());
  }
  return g;
}

TrainingDiverged::TrainingDiverged(std::int64_t step, std::vector<std::string> sample_ids,
                                   const std::string& what)
    : std::runtime_error(fmt::format("training diverged at step {} (batch: {}): {}", step,
                                     fmt::join(sample_ids, ", "), what)),
      step_(step),
      ids_(std::move(sample_ids)) {}

std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed, std::int64_t epoch) {
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  auto rng = Rng::stream(seed, static_cast<std::uint64_t>(epoch));
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.below(i));
    std::swap(perm[i - 1], perm[j]);
  }
  return perm;
}

Trainer::Trainer(OsFpi model, TrainConfig cfg) : model_(std::move(model)), cfg_(cfg) {
  cfg_.validate();
  auto groups = partition_parameters(model_);
  std::vector<torch::optim::OptimizerParamGroup> param_groups;
  auto add = [&](std::vector<torch::Tensor>& params, bool head, bool decay) {
    if (params.empty()) return;
    auto opts = std::make_unique<torch::optim::AdamWOptions>(cfg_.base_lr);
    opts->weight_decay(decay ? cfg_.weight_decay : 0.0);
    param_groups.emplace_back(params, std::move(opts));
    group_is_head_.push_back(head);
  };
  add(groups.backbone_decay, false, true);
  add(groups.backbone_no_decay, false, false);
  add(groups.head_decay, true, true);
  add(groups.head_no_decay, true, false);
  optimizer_ = std::make_unique<torch::optim::AdamW>(
      param_groups, torch::optim::AdamWOptions(cfg_.base_lr).weight_decay(0.0));
}

std::int64_t Trainer::total_steps(std::size_t dataset_size) const {
  if (cfg_.max_steps > 0) {
    return cfg_.max_steps;
  }
  const auto per_epoch = static_cast<std::int64_t>(
      (dataset_size + static_cast<std::size_t>(cfg_.batch_size) - 1) /
      static_cast<std::size_t>(cfg_.batch_size));
  return per_epoch * cfg_.epochs;
}

namespace {

torch::ScalarType model_dtype(OsFpi& model) {
  const auto params = model->parameters();
  return params.empty() ? torch::kFloat32 : params.front().scalar_type();
}

std::pair<torch::Tensor, torch::Tensor> batch_tensors(const std::vector<const GeoSample*>& batch,
                                                      torch::ScalarType dtype) {
  std::vector<const Image*> uav;
  std::vector<const Image*> sat;
  for (const auto* s : batch) {
    uav.push_back(&s->uav);
    sat.push_back(&s->sat);
  }
  return {images_to_batch(uav).to(dtype), images_to_batch(sat).to(dtype)};
}

}  // namespace

LogRow Trainer::step_on(const std::vector<const GeoSample*>& batch, std::int64_t total) {
  const auto start = std::chrono::steady_clock::now();
  std::vector<std::string> ids;
  std::vector<SampleLabel> labels;
  for (const auto* s : batch) {
    ids.push_back(s->id);
    labels.push_back({s->gt_x, s->gt_y, cfg_.window, cfg_.topk});
  }
  const auto lrs = cosine_lr(std::min(step_, total), total, cfg_);
  for (std::size_t g = 0; g < optimizer_->param_groups().size(); ++g) {
    auto& opts = static_cast<torch::optim::AdamWOptions&>(optimizer_->param_groups()[g].options());
    opts.lr(group_is_head_[g] ? lrs.head : lrs.backbone);
  }

  model_->train();
  optimizer_->zero_grad();
  auto [uav, sat] = batch_tensors(batch, model_dtype(model_));
  LossBreakdown loss;
  try {
    loss = total_loss(model_->forward(uav, sat), labels);
  } catch (const std::domain_error& e) {
    throw TrainingDiverged(step_, ids, e.what());
  }
  const double total_value = loss.total_value();
  if (!std::isfinite(total_value)) {
    throw TrainingDiverged(step_, ids, fmt::format("loss is {}", total_value));
  }
  loss.total.backward();
  if (cfg_.grad_clip > 0.0) {
    torch::nn::utils::clip_grad_norm_(model_->parameters(), cfg_.grad_clip);
  }
  optimizer_->step();

  LogRow row;
  row.step = step_;
  row.lr_backbone = lrs.backbone;
  row.lr_head = lrs.head;
  row.loss_cls = loss.classification_value();
  row.loss_off = loss.offset_value();
  row.loss_total = total_value;
  row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
                    .count();
  ++step_;
  return row;
}

std::vector<LogRow> Trainer::train(const std::vector<GeoSample>& data, std::int64_t until_step,
                                   const std::filesystem::path& checkpoint_dir) {
  if (data.empty()) {
    throw std::invalid_argument("train: empty dataset");
  }
  const auto total = total_steps(data.size());
  const auto end = until_step < 0 ? total : std::min(until_step, total);
  const auto bs = static_cast<std::size_t>(cfg_.batch_size);
  const auto per_epoch = static_cast<std::int64_t>((data.size() + bs - 1) / bs);
  auto save_at = [&](std::int64_t s) {
    if (!checkpoint_dir.empty()) {
      save(checkpoint_dir / fmt::format("step_{:06}.osfpi", s));
    }
  };

  std::vector<LogRow> log;
  std::int64_t cached_epoch = -1;
  std::vector<std::size_t> perm;
  while (step_ < end) {
    const auto epoch = step_ / per_epoch;
    if (epoch != cached_epoch) {
      perm = epoch_permutation(data.size(), cfg_.seed, epoch);
      cached_epoch = epoch;
    }
    const auto first = static_cast<std::size_t>(step_ % per_epoch) * bs;
    std::vector<const GeoSample*> batch;
    for (std::size_t i = first; i < std::min(first + bs, data.size()); ++i) {
      batch.push_back(&data[perm[i]]);
    }
    log.push_back(step_on(batch, total));
    if (cfg_.checkpoint_every > 0 && step_ % cfg_.checkpoint_every == 0 && step_ < end) {
      save_at(step_);
    }
  }
  save_at(step_);
  return log;
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint ckpt;
  ckpt.metadata = {{"kind", "trainer"},
                   {"step", step_},
                   {"model", to_json(model_->config())},
                   {"train", to_json(cfg_)}};
  add_module_tensors(ckpt, *model_);
  torch::serialize::OutputArchive archive;
  optimizer_->save(archive);
  std::ostringstream os;
  archive.save_to(os);
  const std::string bytes = os.str();
  auto blob = torch::empty({static_cast<std::int64_t>(bytes.size())}, torch::kUInt8);
  std::memcpy(blob.data_ptr(), bytes.data(), bytes.size());
  ckpt.tensors.emplace_back("optimizer", blob);
  return ckpt;
}

void Trainer::save(const std::filesystem::path& path) const {
  save_checkpoint(path, checkpoint());
}

namespace {

OsFpi model_from(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto& meta = ckpt.metadata;
  if (!meta.contains("model")) {
    throw IoError(fmt::format("{}: checkpoint carries no model config", path.string()));
  }
  OsFpi model(model_config_from_json(meta.at("model")));
  const auto params = model->named_parameters();
  if (const auto* first = ckpt.find("param/" + params.begin()->key())) {
    model->to(first->scalar_type());
  }
  load_module_tensors(*model, ckpt);
  return model;
}

}  // namespace

OsFpi load_model(const std::filesystem::path& checkpoint) {
  return model_from(load_checkpoint(checkpoint), checkpoint);
}

Trainer Trainer::resume(const std::filesystem::path& path) {
  const auto ckpt = load_checkpoint(path);
  const auto& meta = ckpt.metadata;
  if (!meta.contains("train") || !meta.contains("step")) {
    throw IoError(fmt::format("{}: not a trainer checkpoint", path.string()));
  }
  Trainer trainer(model_from(ckpt, path), train_config_from_json(meta.at("train")));
  trainer.step_ = meta.at("step").get<std::int64_t>();
  if (const auto* blob = ckpt.find("optimizer")) {
    std::istringstream is(std::string(static_cast<const char*>(blob->data_ptr()),
                                      static_cast<std::size_t>(blob->numel())));
    torch::serialize::InputArchive archive;
    archive.load_from(is);
    trainer.optimizer_->load(archive);
  }
  return trainer;
}

std::vector<PredictionOutput> predict_samples(OsFpi& model, const std::vector<GeoSample>& samples,
                                              int chunk) {
  std::vector<PredictionOutput> out;
  const auto dtype = model_dtype(model);
  for (std::size_t i = 0; i < samples.size(); i += static_cast<std::size_t>(chunk)) {
    std::vector<const GeoSample*> batch;
    for (std::size_t j = i; j < std::min(samples.size(), i + static_cast<std::size_t>(chunk)); ++j) {
      batch.push_back(&samples[j]);
    }
    auto [uav, sat] = batch_tensors(batch, dtype);
    for (auto& p : predict(model, uav, sat)) {
      out.push_back(std::move(p));
    }
  }
  return out;
}

OverfitReport overfit_smoke(OsFpi model, const std::vector<GeoSample>& pairs, std::int64_t steps,
                            TrainConfig cfg) {
  cfg.max_steps = steps;
  Trainer trainer(model, cfg);
  OverfitReport report;
  report.log = trainer.train(pairs);
  const auto preds = predict_samples(trainer.model(), pairs);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& s = pairs[i];
    const double e = std::hypot(preds[i].point.x - s.gt_x, preds[i].point.y - s.gt_y);
    const double a = std::hypot(preds[i].argmax.x - s.gt_x, preds[i].argmax.y - s.gt_y);
    report.point_error_px.push_back(e);
    report.argmax_error_px.push_back(a);
    report.point_error_m.push_back(e * s.tile.meters_per_pixel());
  }
  auto mean = [](const std::vector<double>& v) {
    double sum = 0.0;
    for (double x : v) sum += x;
    return v.empty() ? 0.0 : sum / static_cast<double>(v.size());
  };
  report.mean_point_error_px = mean(report.point_error_px);
  report.mean_argmax_error_px = mean(report.argmax_error_px);
  report.mean_point_error_m = mean(report.point_error_m);
  return report;
}

}  // namespace osfpi
