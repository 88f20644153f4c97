// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint archive: "OSFPICKP", a little-endian u64 header length, a JSON
// header {version, metadata, tensors: [{name, dtype, shape, offset, nbytes}]},
// then the raw tensor bytes back to back.
#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/nn/module.h>
#include <torch/types.h>

namespace osfpi {

inline constexpr std::string_view kCheckpointVersion = "osfpi-ckpt-v1";

struct Checkpoint {
  nlohmann::json metadata = nlohmann::json::object();
  std::vector<std::pair<std::string, torch::Tensor>> tensors;

  /// nullptr when absent.
  const torch::Tensor* find(std::string_view name) const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);

/// Throws IoError for a bad magic, an unknown version or a truncated file.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Appends every named parameter and buffer as "<prefix><name>".
void add_module_tensors(Checkpoint& ckpt, const torch::nn::Module& module,
                        const std::string& prefix = "param/");

/// Copies tensors back into the module. Every parameter must be present with
/// a matching shape; throws IoError naming the first mismatch.
void load_module_tensors(torch::nn::Module& module, const Checkpoint& ckpt,
                         const std::string& prefix = "param/");

}  // namespace osfpi
