// SPDX-License-Identifier: Apache-2.0
#include "osfpi_cli/commands.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <unordered_map>

#include <fmt/format.h>
#include <fmt/ostream.h>
#include <torch/torch.h>

#include "osfpi/csv.hpp"
#include "osfpi/errors.hpp"
#include "osfpi/metrics.hpp"
#include "osfpi/navsim.hpp"

namespace osfpi::cli {

namespace fs = std::filesystem;

void prepare_output_dir(const fs::path& dir, bool force, std::initializer_list<std::string> owned) {
  if (fs::exists(dir) && !fs::is_directory(dir)) {
    throw IoError(fmt::format("{} exists and is not a directory", dir.string()));
  }
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    if (!force) {
      throw IoError(fmt::format("{} is not empty (use --force to overwrite)", dir.string()));
    }
    for (const auto& name : owned) {
      fs::remove_all(dir / name);
    }
  }
  fs::create_directories(dir);
}

namespace {

std::vector<LocationLabel> labels_of(const std::vector<GeoSample>& samples) {
  std::vector<LocationLabel> labels;
  for (const auto& s : samples) {
    labels.push_back({s.id, s.gt_x, s.gt_y, static_cast<double>(s.sat.width()),
                      static_cast<double>(s.sat.height()), s.coverage_m});
  }
  return labels;
}

void check_inputs(const ModelConfig& model, const std::vector<GeoSample>& samples,
                  const fs::path& dataset) {
  const auto& b = model.backbone;
  for (const auto& s : samples) {
    if (s.sat.height() != b.sat_input.rows || s.sat.width() != b.sat_input.cols ||
        s.uav.height() != b.uav_input.rows || s.uav.width() != b.uav_input.cols) {
      throw DimensionMismatch(fmt::format(
          "{}: sample {} is {}x{} sat / {}x{} uav, the model expects {}x{} / {}x{}",
          dataset.string(), s.id, s.sat.height(), s.sat.width(), s.uav.height(), s.uav.width(),
          b.sat_input.rows, b.sat_input.cols, b.uav_input.rows, b.uav_input.cols));
    }
  }
}

void require_dataset(const fs::path& root, const std::string& split) {
  const auto labels = root / split / "labels.csv";
  if (!fs::exists(labels)) {
    throw IoError(fmt::format("dataset split not found: {}", labels.string()));
  }
}

std::string ma_header(const std::map<double, double>& ma) {
  std::string out;
  for (const auto& [t, pct] : ma) out += fmt::format(",ma_{}m", t);
  return out;
}

std::string ma_values(const std::map<double, double>& ma) {
  std::string out;
  for (const auto& [t, pct] : ma) out += fmt::format(",{}", pct);
  return out;
}

}  // namespace

int cmd_synth(const RunConfig& cfg, const SynthOptions& opts, std::ostream& log) {
  cfg.validate();
  prepare_output_dir(opts.out, opts.force, {"train", "test", "config.json"});
  const auto world = generate_world(world_seed(cfg), cfg.synth.world_size,
                                    cfg.synth.meters_per_pixel);
  const auto sample_opts = cfg.sample_options();
  fmt::print(log, "world {}x{} px at {} m/px\n", world.image.width(), world.image.height(),
             world.meters_per_pixel);

  const auto train = build_train_set(world, static_cast<std::size_t>(cfg.synth.train_samples),
                                     cfg.protocol.min_coverage_m, cfg.protocol.max_coverage_m,
                                     split_seed(cfg, "train"), sample_opts);
  write_dataset(opts.out, "train", train);
  fmt::print(log, "train: {} samples\n", train.size());

  const auto test = build_test_set(world, cfg.protocol, split_seed(cfg, "test"), sample_opts);
  write_dataset(opts.out, "test", test);
  std::map<double, int> per_coverage;
  for (const auto& s : test) ++per_coverage[s.coverage_m];
  for (const auto& [coverage, count] : per_coverage) {
    fmt::print(log, "test coverage {:.2f} m: {} samples\n", coverage, count);
  }
  save_run_config(opts.out / "config.json", cfg);
  return 0;
}

int cmd_train(const RunConfig& cfg, const TrainOptions& opts, std::ostream& log) {
  cfg.validate();
  // Fail on a missing dataset before spending time on model construction.
  require_dataset(opts.dataset, "train");
  const bool resuming = !opts.resume.empty();
  if (resuming) {
    fs::create_directories(opts.out_dir);
  } else {
    prepare_output_dir(opts.out_dir, opts.force,
                       {"checkpoints", "train_log.csv", "model.osfpi", "config.json"});
  }
  auto data = load_dataset(opts.dataset, "train");
  if (data.empty()) {
    throw IoError(fmt::format("{}: training split is empty", opts.dataset.string()));
  }
  save_run_config(opts.out_dir / "config.json", cfg);
  const auto log_path = opts.out_dir / "train_log.csv";

  if (opts.overfit) {
    if (static_cast<int>(data.size()) < opts.overfit_pairs) {
      throw IoError(fmt::format("--overfit needs {} training pairs, found {}", opts.overfit_pairs,
                                data.size()));
    }
    data.resize(static_cast<std::size_t>(opts.overfit_pairs));
    check_inputs(cfg.model, data, opts.dataset);
    const auto steps = cfg.train.max_steps > 0 ? cfg.train.max_steps : 2000;
    auto report = overfit_smoke(make_model(cfg.model, cfg.train.seed), data, steps, cfg.train);
    write_training_log(log_path, report.log);
    fmt::print(log, "overfit: {} pairs, {} steps\n", data.size(), steps);
    fmt::print(log, "final loss {:.6f} (cls {:.6f}, off {:.6f})\n", report.log.back().loss_total,
               report.log.back().loss_cls, report.log.back().loss_off);
    fmt::print(log, "mean point error {:.3f} px ({:.3f} m), argmax-only {:.3f} px\n",
               report.mean_point_error_px, report.mean_point_error_m,
               report.mean_argmax_error_px);
    return 0;
  }

  Trainer trainer = resuming ? Trainer::resume(opts.resume)
                             : Trainer(make_model(cfg.model, cfg.train.seed), cfg.train);
  check_inputs(trainer.model()->config(), data, opts.dataset);
  const auto start = trainer.step();
  const auto total = trainer.total_steps(data.size());
  fmt::print(log, "training steps {} -> {} on {} samples\n", start, total, data.size());
  const auto rows = trainer.train(data, -1, opts.out_dir / "checkpoints");
  write_training_log(log_path, rows, resuming);
  trainer.save(opts.out_dir / "model.osfpi");
  if (!rows.empty()) {
    fmt::print(log, "step {}: loss {:.6f}\n", rows.back().step, rows.back().loss_total);
  }
  return 0;
}

namespace {

void write_report_files(const fs::path& dir, const std::string& name, const MetricsReport& r) {
  write_per_scale_csv(dir / fmt::format("per_scale_{}.csv", name), r);
}

}  // namespace

int cmd_eval(const RunConfig& cfg, const EvalOptions& opts, std::ostream& log) {
  cfg.validate();
  require_dataset(opts.dataset, opts.split);
  fs::create_directories(opts.out_dir);
  save_run_config(opts.out_dir / "config.json", cfg);

  if (!opts.predictions.empty()) {
    // Labels only; images are not needed.
    const auto table = CsvTable::read(opts.dataset / opts.split / "labels.csv");
    const auto id = table.column("sample_id");
    const auto gx = table.column("gt_x_px");
    const auto gy = table.column("gt_y_px");
    const auto cov = table.column("coverage_m");
    const auto sat_col = table.column("sat_path");
    std::vector<LocationLabel> labels;
    for (std::size_t r = 0; r < table.rows(); ++r) {
      const auto sat = read_png(opts.dataset / opts.split / table.text(r, sat_col));
      labels.push_back({table.text(r, id), table.number(r, gx), table.number(r, gy),
                        static_cast<double>(sat.width()), static_cast<double>(sat.height()),
                        table.number(r, cov)});
    }
    const auto preds = read_predictions_csv(opts.predictions);
    const auto report = evaluate_dataset(preds, labels);
    std::ofstream(opts.out_dir / "metrics.json") << nlohmann::json{{"predictions", to_json(report)}}.dump(2)
                                                 << '\n';
    write_report_files(opts.out_dir, "predictions", report);
    fmt::print(log, "{} samples: mean RDS {:.4f}, mean error {:.3f} m\n", report.count,
               report.mean_rds, report.mean_error_m);
    return 0;
  }

  if (opts.checkpoint.empty()) {
    throw IoError("eval needs --checkpoint or --predictions");
  }
  auto model = load_model(opts.checkpoint);
  const auto samples = load_dataset(opts.dataset, opts.split);
  check_inputs(model->config(), samples, opts.dataset);
  const auto preds = predict_samples(model, samples);

  std::vector<PointPrediction> adjusted;
  std::vector<PointPrediction> argmax;
  std::ofstream csv(opts.out_dir / "predictions.csv");
  csv << "sample_id,argmax_x,argmax_y,point_x,point_y,peak_value\n";
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& p = preds[i];
    csv << fmt::format("{},{},{},{},{},{}\n", samples[i].id, p.argmax.x, p.argmax.y, p.point.x,
                       p.point.y, p.peak_value);
    adjusted.push_back({samples[i].id, p.point.x, p.point.y});
    argmax.push_back({samples[i].id, p.argmax.x, p.argmax.y});
  }
  csv.close();

  const auto labels = labels_of(samples);
  const auto rep_adj = evaluate_dataset(adjusted, labels);
  const auto rep_arg = evaluate_dataset(argmax, labels);
  std::ofstream(opts.out_dir / "metrics.json")
      << nlohmann::json{{"argmax", to_json(rep_arg)}, {"adjusted", to_json(rep_adj)}}.dump(2)
      << '\n';
  write_report_files(opts.out_dir, "adjusted", rep_adj);
  write_report_files(opts.out_dir, "argmax", rep_arg);

  std::ofstream summary(opts.out_dir / "summary.csv");
  summary << "method,count,mean_rds,mean_error_m" << ma_header(rep_adj.ma) << '\n';
  for (const auto& [name, rep] : {std::pair{"argmax", &rep_arg}, std::pair{"adjusted", &rep_adj}}) {
    summary << fmt::format("{},{},{},{}", name, rep->count, rep->mean_rds, rep->mean_error_m)
            << ma_values(rep->ma) << '\n';
    fmt::print(log, "{:>9}: RDS {:.4f}  mean error {:.2f} m  <5m {:.1f}%  <10m {:.1f}%\n", name,
               rep->mean_rds, rep->mean_error_m, rep->ma.at(5.0), rep->ma.at(10.0));
  }
  return 0;
}

int cmd_navigate(const RunConfig& cfg, const NavigateOptions& opts, std::ostream& log) {
  cfg.validate();
  if (!opts.oracle && opts.checkpoint.empty()) {
    throw IoError("navigate needs --checkpoint or --oracle");
  }
  fs::create_directories(opts.out_dir);
  save_run_config(opts.out_dir / "config.json", cfg);
  const auto seed = opts.world_seed.value_or(world_seed(cfg));
  const auto world = generate_world(seed, cfg.synth.world_size, cfg.synth.meters_per_pixel);

  NavConfig nav;
  nav.search_coverage_m = cfg.navigation.search_coverage_m;
  nav.uav_footprint_m = cfg.synth.uav_footprint_m;
  Localizer localizer;
  if (opts.oracle) {
    nav.search_px = static_cast<int>(cfg.model.backbone.sat_input.rows);
    nav.uav_px = static_cast<int>(cfg.model.backbone.uav_input.rows);
    localizer = oracle_localizer();
  } else {
    auto model = load_model(opts.checkpoint);
    nav.search_px = static_cast<int>(model->config().backbone.sat_input.rows);
    nav.uav_px = static_cast<int>(model->config().backbone.uav_input.rows);
    localizer = model_localizer(model);
  }

  Trajectory traj;
  if (!opts.trajectory_file.empty()) {
    traj = Trajectory::load_csv(opts.trajectory_file, cfg.navigation.step_m);
  } else {
    traj = random_trajectory(world, static_cast<std::size_t>(cfg.navigation.frames),
                             cfg.navigation.step_m, cfg.navigation.search_coverage_m,
                             split_seed(cfg, "navigation"));
  }
  traj.save_csv(opts.out_dir / "trajectory.csv");
  const auto state = navigate(world, traj, localizer, nav);
  render_report(world, state, opts.out_dir);
  fmt::print(log, "{} frames, mean error {:.3f} m, max error {:.3f} m{}\n", state.frames.size(),
             state.mean_error_m(),
             std::max_element(state.frames.begin(), state.frames.end(),
                              [](const NavFrame& a, const NavFrame& b) {
                                return a.error_m < b.error_m;
                              })->error_m,
             state.diverged() ? ", DIVERGED" : "");
  return 0;
}

int cmd_report(const RunConfig& cfg, const ReportOptions& opts, std::ostream& log) {
  const auto table = CsvTable::read(opts.predictions);
  if (table.rows() == 0) {
    fmt::print(log, "warning: {} has no predictions, nothing to report\n",
               opts.predictions.string());
    return 0;
  }
  require_dataset(opts.dataset, opts.split);
  fs::create_directories(opts.out_dir);
  save_run_config(opts.out_dir / "config.json", cfg);
  const auto samples = load_dataset(opts.dataset, opts.split);
  std::unordered_map<std::string, const GeoSample*> by_id;
  for (const auto& s : samples) by_id.emplace(s.id, &s);

  std::optional<OsFpi> model;
  if (!opts.checkpoint.empty()) {
    model = load_model(opts.checkpoint);
  }
  const auto id = table.column("sample_id");
  const auto ax = table.column("argmax_x");
  const auto ay = table.column("argmax_y");
  const auto px = table.column("point_x");
  const auto py = table.column("point_y");
  for (std::size_t r = 0; r < table.rows(); ++r) {
    const auto it = by_id.find(table.text(r, id));
    if (it == by_id.end()) {
      throw IoError(fmt::format("prediction for unknown sample {}", table.text(r, id)));
    }
    const GeoSample& s = *it->second;
    Image canvas = s.sat;
    if (model) {
      const auto dtype = (*model)->parameters().front().scalar_type();
      auto pred = predict(*model, image_to_tensor(s.uav).unsqueeze(0).to(dtype),
                          image_to_tensor(s.sat).unsqueeze(0).to(dtype));
      canvas = overlay_heatmap(s.sat, torch::sigmoid(pred.front().heatmap));
    }
    const double radius = std::max(3.0, s.sat.width() / 64.0);
    draw_ring(canvas, {s.gt_x, s.gt_y}, radius, 1.5, 255, 0, 0);
    draw_ring(canvas, {table.number(r, ax), table.number(r, ay)}, radius, 1.5, 0, 0, 255);
    draw_ring(canvas, {table.number(r, px), table.number(r, py)}, radius, 1.5, 0, 255, 0);
    write_png(opts.out_dir / fmt::format("{}.png", s.id), canvas);
  }
  fmt::print(log, "wrote {} overlays to {}\n", table.rows(), opts.out_dir.string());
  return 0;
}

}  // namespace osfpi::cli
