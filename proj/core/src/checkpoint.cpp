// SPDX-License-Identifier: Apache-2.0
#include "osfpi/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <fmt/format.h>
#include <torch/torch.h>

#include "osfpi/errors.hpp"

namespace osfpi {

static_assert(std::endian::native == std::endian::little,
              "checkpoint archives are written in host byte order");

namespace {

constexpr char kMagic[8] = {'O', 'S', 'F', 'P', 'I', 'C', 'K', 'P'};

std::string dtype_name(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat32: return "float32";
    case torch::kFloat64: return "float64";
    case torch::kInt64: return "int64";
    case torch::kUInt8: return "uint8";
    default: throw IoError(fmt::format("checkpoint: unsupported dtype {}", c10::toString(t)));
  }
}

torch::ScalarType dtype_from(const std::string& name) {
  if (name == "float32") return torch::kFloat32;
  if (name == "float64") return torch::kFloat64;
  if (name == "int64") return torch::kInt64;
  if (name == "uint8") return torch::kUInt8;
  throw IoError("checkpoint: unknown dtype " + name);
}

}  // namespace

const torch::Tensor* Checkpoint::find(std::string_view name) const {
  for (const auto& [key, tensor] : tensors) {
    if (key == name) {
      return &tensor;
    }
  }
  return nullptr;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  nlohmann::json header;
  header["version"] = kCheckpointVersion;
  header["metadata"] = ckpt.metadata;
  header["tensors"] = nlohmann::json::array();
  std::vector<torch::Tensor> blobs;
  std::uint64_t offset = 0;
  for (const auto& [name, tensor] : ckpt.tensors) {
    auto t = tensor.detach().to(torch::kCPU).contiguous();
    const auto nbytes = static_cast<std::uint64_t>(t.nbytes());
    header["tensors"].push_back({{"name", name},
                                 {"dtype", dtype_name(t.scalar_type())},
                                 {"shape", t.sizes().vec()},
                                 {"offset", offset},
                                 {"nbytes", nbytes}});
    offset += nbytes;
    blobs.push_back(std::move(t));
  }
  const std::string text = header.dump();
  const auto length = static_cast<std::uint64_t>(text.size());

  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw IoError(fmt::format("cannot write {}", tmp.string()));
    }
    out.write(kMagic, sizeof(kMagic));
    out.write(reinterpret_cast<const char*>(&length), sizeof(length));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& t : blobs) {
      out.write(static_cast<const char*>(t.data_ptr()), static_cast<std::streamsize>(t.nbytes()));
    }
    if (!out) {
      throw IoError(fmt::format("short write to {}", tmp.string()));
    }
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError(fmt::format("cannot open {}", path.string()));
  }
  char magic[sizeof(kMagic)];
  std::uint64_t length = 0;
  in.read(magic, sizeof(magic));
  in.read(reinterpret_cast<char*>(&length), sizeof(length));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw IoError(fmt::format("{} is not an osfpi checkpoint", path.string()));
  }
  std::string text(length, '\0');
  in.read(text.data(), static_cast<std::streamsize>(length));
  if (!in) {
    throw IoError(fmt::format("{}: truncated header", path.string()));
  }
  const auto header = nlohmann::json::parse(text);
  if (header.value("version", std::string{}) != kCheckpointVersion) {
    throw IoError(fmt::format("{}: unsupported checkpoint version '{}'", path.string(),
                              header.value("version", std::string{})));
  }
  Checkpoint ckpt;
  ckpt.metadata = header.at("metadata");
  const auto data_start = in.tellg();
  for (const auto& entry : header.at("tensors")) {
    const auto shape = entry.at("shape").get<std::vector<std::int64_t>>();
    auto t = torch::empty(shape, dtype_from(entry.at("dtype").get<std::string>()));
    const auto nbytes = entry.at("nbytes").get<std::uint64_t>();
    if (nbytes != t.nbytes()) {
      throw IoError(fmt::format("{}: size mismatch for {}", path.string(),
                                entry.at("name").get<std::string>()));
    }
    in.seekg(data_start + static_cast<std::streamoff>(entry.at("offset").get<std::uint64_t>()));
    in.read(static_cast<char*>(t.data_ptr()), static_cast<std::streamsize>(nbytes));
    if (!in) {
      throw IoError(fmt::format("{}: truncated data for {}", path.string(),
                                entry.at("name").get<std::string>()));
    }
    ckpt.tensors.emplace_back(entry.at("name").get<std::string>(), std::move(t));
  }
  return ckpt;
}

void add_module_tensors(Checkpoint& ckpt, const torch::nn::Module& module,
                        const std::string& prefix) {
  for (const auto& item : module.named_parameters()) {
    ckpt.tensors.emplace_back(prefix + item.key(), item.value().detach().clone());
  }
  for (const auto& item : module.named_buffers()) {
    ckpt.tensors.emplace_back(prefix + item.key(), item.value().detach().clone());
  }
}

void load_module_tensors(torch::nn::Module& module, const Checkpoint& ckpt,
                         const std::string& prefix) {
  torch::NoGradGuard no_grad;
  auto copy_into = [&](const std::string& name, torch::Tensor& target) {
    const torch::Tensor* source = ckpt.find(prefix + name);
    if (source == nullptr) {
      throw IoError("checkpoint is missing " + name);
    }
    if (source->sizes() != target.sizes()) {
      throw IoError(fmt::format("checkpoint shape mismatch for {}", name));
    }
    target.copy_(*source);
  };
  for (auto& item : module.named_parameters()) {
    copy_into(item.key(), item.value());
  }
  for (auto& item : module.named_buffers()) {
    copy_into(item.key(), item.value());
  }
}

}  // namespace osfpi
