#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

namespace anomaly_recon::io {

// Layout: 8-byte magic "ARCKPT\0\0", u32 format version, u64 header length,
// UTF-8 JSON header, then the raw little-endian tensor payload. The header
// carries caller metadata under "meta" and a tensor table
// [{name, dtype, shape, offset, nbytes}] with offsets into the payload.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  torch::Tensor tensor;
};

void write_checkpoint(const std::filesystem::path& path, const nlohmann::json& meta,
                      const std::vector<NamedTensor>& tensors);

struct Checkpoint {
  nlohmann::json meta;
  std::vector<NamedTensor> tensors;

  /// Tensor by name; throws MissingArtifact when absent.
  const torch::Tensor& at(const std::string& name) const;
  bool has(const std::string& name) const;
};

/// Throws MissingArtifact when the file is absent and Error on a malformed or
/// newer-version file.
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Named parameters and buffers of a module ("param/<name>", "buffer/<name>").
std::vector<NamedTensor> module_tensors(const torch::nn::Module& module);

/// Copies module tensors back from a checkpoint. Throws Error on a missing
/// entry or a shape mismatch.
void load_module_tensors(torch::nn::Module& module, const Checkpoint& ckpt);

/// Adam moment estimates per parameter, named "<prefix>/<index>/{exp_avg,
/// exp_avg_sq}" plus the step counts in the returned JSON.
nlohmann::json adam_state(const torch::optim::Adam& opt, const std::string& prefix, std::vector<NamedTensor>& out);
void load_adam_state(torch::optim::Adam& opt, const std::string& prefix, const nlohmann::json& steps,
                     const Checkpoint& ckpt);

}  // namespace anomaly_recon::io
