// SPDX-License-Identifier: Apache-2.0
//
// Subcommand bodies. Each returns a process exit code and throws on errors;
// main() turns exceptions into messages.
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>

#include "osfpi_cli/run_config.hpp"

namespace osfpi::cli {

/// Creates dir. A non-empty dir is an error unless force is set, in which case
/// the entries listed in `owned` are removed first.
void prepare_output_dir(const std::filesystem::path& dir, bool force,
                        std::initializer_list<std::string> owned);

struct SynthOptions {
  std::filesystem::path out;  // dataset root
  bool force = false;
};
/// Writes train and test splits plus config.json.
int cmd_synth(const RunConfig& cfg, const SynthOptions& opts, std::ostream& log);

struct TrainOptions {
  std::filesystem::path dataset;
  std::filesystem::path out_dir;
  bool overfit = false;
  int overfit_pairs = 16;
  std::filesystem::path resume;  // checkpoint to continue from
  bool force = false;
};
/// Writes train_log.csv, checkpoints/ and model.osfpi into out_dir.
int cmd_train(const RunConfig& cfg, const TrainOptions& opts, std::ostream& log);

struct EvalOptions {
  std::filesystem::path dataset;
  std::string split = "test";
  std::filesystem::path checkpoint;
  std::filesystem::path predictions;  // evaluate this CSV instead of running a model
  std::filesystem::path out_dir;
};
int cmd_eval(const RunConfig& cfg, const EvalOptions& opts, std::ostream& log);

struct NavigateOptions {
  std::optional<std::uint64_t> world_seed;
  std::filesystem::path trajectory_file;
  std::filesystem::path checkpoint;
  bool oracle = false;
  std::filesystem::path out_dir;
};
int cmd_navigate(const RunConfig& cfg, const NavigateOptions& opts, std::ostream& log);

struct ReportOptions {
  std::filesystem::path predictions;
  std::filesystem::path dataset;
  std::string split = "test";
  std::filesystem::path checkpoint;  // optional, adds the heatmap underlay
  std::filesystem::path out_dir;
};
int cmd_report(const RunConfig& cfg, const ReportOptions& opts, std::ostream& log);

}  // namespace osfpi::cli
