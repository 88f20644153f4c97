// SPDX-License-Identifier: Apache-2.0
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <torch/torch.h>

#include "osfpi/errors.hpp"
#include "osfpi_cli/commands.hpp"

namespace {

using namespace osfpi::cli;

// OSFPI_THREADS caps intra-op parallelism; results are only reproducible
// across runs with the same cap.
void apply_thread_cap() {
  if (const char* env = std::getenv("OSFPI_THREADS")) {
    const int n = std::atoi(env);
    if (n < 1) {
      throw osfpi::ConfigError("OSFPI_THREADS", fmt::format("'{}' is not a positive integer", env));
    }
    torch::set_num_threads(n);
    torch::set_num_interop_threads(n);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"osfpi: one-stream UAV to satellite point localization"};
  app.require_subcommand(1);

  std::string config_path;
  std::string preset = "default";
  std::optional<std::uint64_t> seed;
  app.add_option("-c,--config", config_path, "RunConfig JSON (defaults apply when omitted)");
  app.add_option("--preset", preset, "base config when --config is not given")
      ->check(CLI::IsMember({"default", "miniature"}));
  app.add_option("--seed", seed, "overrides the config seed");

  auto* config_cmd = app.add_subcommand("config", "print the effective config as JSON");

  SynthOptions synth;
  std::string synth_out;
  auto* synth_cmd = app.add_subcommand("synth", "generate the synthetic dataset");
  synth_cmd->add_option("-o,--out", synth_out, "dataset root (default: paths.dataset)");
  synth_cmd->add_flag("--force", synth.force, "overwrite a non-empty dataset directory");

  TrainOptions train;
  std::string train_dataset, train_out, resume;
  auto* train_cmd = app.add_subcommand("train", "train a model");
  train_cmd->add_option("-d,--dataset", train_dataset, "dataset root (default: paths.dataset)");
  train_cmd->add_option("-o,--out-dir", train_out, "run directory (default: paths.output)");
  train_cmd->add_flag("--overfit", train.overfit, "overfit smoke test on the first training pairs");
  train_cmd->add_option("--overfit-pairs", train.overfit_pairs, "pairs used by --overfit")
      ->check(CLI::PositiveNumber);
  train_cmd->add_option("--resume", resume, "checkpoint to continue from");
  train_cmd->add_flag("--force", train.force, "overwrite a non-empty run directory");

  EvalOptions eval;
  std::string eval_dataset, eval_ckpt, eval_preds, eval_out;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint or a predictions CSV");
  eval_cmd->add_option("-d,--dataset", eval_dataset, "dataset root (default: paths.dataset)");
  eval_cmd->add_option("--split", eval.split, "dataset split");
  eval_cmd->add_option("--checkpoint", eval_ckpt, "trainer checkpoint");
  eval_cmd->add_option("--predictions", eval_preds, "CSV with sample_id,point_x,point_y");
  eval_cmd->add_option("-o,--out-dir", eval_out, "report directory (default: <output>/eval)");

  NavigateOptions nav;
  std::string nav_traj, nav_ckpt, nav_out;
  auto* nav_cmd = app.add_subcommand("navigate", "closed-loop navigation simulation");
  nav_cmd->add_option("--world-seed", nav.world_seed, "world seed (default: derived from --seed)");
  nav_cmd->add_option("--trajectory-file", nav_traj, "CSV of waypoints x_m,y_m");
  nav_cmd->add_option("--checkpoint", nav_ckpt, "trainer checkpoint");
  nav_cmd->add_flag("--oracle", nav.oracle, "use the ground-truth localizer");
  nav_cmd->add_option("-o,--out-dir", nav_out, "output directory (default: <output>/navigate)");

  ReportOptions report;
  std::string rep_preds, rep_dataset, rep_ckpt, rep_out;
  auto* report_cmd = app.add_subcommand("report", "draw prediction overlays");
  report_cmd->add_option("--predictions", rep_preds, "predictions.csv written by eval")->required();
  report_cmd->add_option("-d,--dataset", rep_dataset, "dataset root (default: paths.dataset)");
  report_cmd->add_option("--split", report.split, "dataset split");
  report_cmd->add_option("--checkpoint", rep_ckpt, "adds the predicted heatmap underneath");
  report_cmd->add_option("-o,--out-dir", rep_out, "output directory (default: <output>/report)");

  CLI11_PARSE(app, argc, argv);

  try {
    apply_thread_cap();
    RunConfig cfg = config_path.empty() ? RunConfig::preset(preset) : load_run_config(config_path);
    if (seed) {
      cfg.seed = *seed;
      cfg.train.seed = *seed;
    }
    cfg.validate();
    const std::filesystem::path dataset_default = cfg.paths.dataset;
    const std::filesystem::path output_default = cfg.paths.output;
    auto or_default = [](const std::string& v, const std::filesystem::path& d) {
      return v.empty() ? d : std::filesystem::path(v);
    };

    if (*config_cmd) {
      std::cout << to_json(cfg).dump(2) << '\n';
      return 0;
    }
    if (*synth_cmd) {
      synth.out = or_default(synth_out, dataset_default);
      return cmd_synth(cfg, synth, std::cout);
    }
    if (*train_cmd) {
      train.dataset = or_default(train_dataset, dataset_default);
      train.out_dir = or_default(train_out, output_default);
      train.resume = resume;
      return cmd_train(cfg, train, std::cout);
    }
    if (*eval_cmd) {
      eval.dataset = or_default(eval_dataset, dataset_default);
      eval.checkpoint = eval_ckpt;
      eval.predictions = eval_preds;
      eval.out_dir = or_default(eval_out, output_default / "eval");
      return cmd_eval(cfg, eval, std::cout);
    }
    if (*nav_cmd) {
      nav.trajectory_file = nav_traj;
      nav.checkpoint = nav_ckpt;
      nav.out_dir = or_default(nav_out, output_default / "navigate");
      return cmd_navigate(cfg, nav, std::cout);
    }
    if (*report_cmd) {
      report.predictions = rep_preds;
      report.dataset = or_default(rep_dataset, dataset_default);
      report.checkpoint = rep_ckpt;
      report.out_dir = or_default(rep_out, output_default / "report");
      return cmd_report(cfg, report, std::cout);
    }
  } catch (const osfpi::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
