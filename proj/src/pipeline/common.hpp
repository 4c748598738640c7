#pragma once

// Helpers shared by the pipeline stage implementations.

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "anomaly_recon/data/volume.hpp"
#include "anomaly_recon/pipeline/config.hpp"

namespace anomaly_recon::pipeline::detail {

namespace fs = std::filesystem;

inline const std::string kRawDir = "data/raw";
inline const std::string kPrepDir = "data/prep";
inline const std::string kDataManifest = "data/manifest.json";
inline const std::string kPrepIndex = "data/prep/index.json";

void write_json(const fs::path& path, const nlohmann::json& j);
nlohmann::json read_json(const fs::path& path);

/// Every regular file below `dir`, relative to `root`, sorted.
std::vector<std::string> list_outputs(const fs::path& root, const std::string& dir);

/// One prepared (cropped, renormalised) volume.
struct PrepVolume {
  std::string id;
  std::string split;
  Grid3 image;  // K x S x S in [-1, 1]
  data::LabelVolume labels;
  Mask3 body;
  std::vector<std::int64_t> empty_slices;
  std::vector<std::int64_t> abnormal_slices;

  bool is_empty(std::int64_t k) const;
  bool is_abnormal(std::int64_t k) const;
};

struct PrepEntry {
  std::string id;
  std::string split;
};

/// Volume ids of a split in index order.
std::vector<PrepEntry> prep_entries(const fs::path& root, const std::string& split);
PrepVolume load_prep(const fs::path& root, const PrepEntry& e, bool with_labels);

/// Selected slices of a prepared volume as a batch x 1 x S x S float tensor.
torch::Tensor slices_tensor(const Grid3& g, const std::vector<std::int64_t>& ks);
std::vector<std::int64_t> all_slices(const Grid3& g);

/// Writes a K x S x S float volume with extra header fields.
void write_grid(const fs::path& stem, const Grid3& g, const nlohmann::json& extra = {});

}  // namespace anomaly_recon::pipeline::detail
