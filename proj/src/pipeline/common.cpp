#include "common.hpp"

#include <algorithm>
#include <fstream>

#include "anomaly_recon/error.hpp"

namespace anomaly_recon::pipeline::detail {

using nlohmann::json;

void write_json(const fs::path& path, const json& j) {
  fs::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw Error("cannot write " + path.string());
  f << j.dump(2) << '\n';
}

json read_json(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw MissingArtifact("missing artifact: " + path.string());
  try {
    return json::parse(f);
  } catch (const json::exception& e) {
    throw Error("malformed JSON in " + path.string() + ": " + e.what());
  }
}

std::vector<std::string> list_outputs(const fs::path& root, const std::string& dir) {
  std::vector<std::string> out;
  if (!fs::exists(root / dir)) return out;
  for (const auto& e : fs::recursive_directory_iterator(root / dir)) {
    if (e.is_regular_file()) out.push_back(fs::relative(e.path(), root).generic_string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

bool PrepVolume::is_empty(std::int64_t k) const {
  return std::find(empty_slices.begin(), empty_slices.end(), k) != empty_slices.end();
}

bool PrepVolume::is_abnormal(std::int64_t k) const {
  return std::find(abnormal_slices.begin(), abnormal_slices.end(), k) != abnormal_slices.end();
}

std::vector<PrepEntry> prep_entries(const fs::path& root, const std::string& split) {
  const json index = read_json(root / kPrepIndex);
  std::vector<PrepEntry> out;
  for (const auto& v : index.at("volumes")) {
    if (v.at("split") == split) out.push_back({v.at("id"), v.at("split")});
  }
  return out;
}

PrepVolume load_prep(const fs::path& root, const PrepEntry& e, bool with_labels) {
  const fs::path dir = root / kPrepDir;
  PrepVolume p;
  p.id = e.id;
  p.split = e.split;
  auto g = data::read_raw_grid(dir / (e.id + "_image"));
  p.image = std::move(g.grid);
  p.empty_slices = g.header.at("empty_slices").get<std::vector<std::int64_t>>();
  p.abnormal_slices = g.header.at("abnormal_slices").get<std::vector<std::int64_t>>();
  p.body = data::to_mask(data::read_raw_grid(dir / (e.id + "_body")).grid);
  if (with_labels) {
    std::vector<std::string> classes(data::kAbnormalityClasses.begin(), data::kAbnormalityClasses.end());
    classes.insert(classes.end(), data::kAnatomyClasses.begin(), data::kAnatomyClasses.end());
    p.labels = data::read_labels(dir, e.id, classes);
  }
  return p;
}

torch::Tensor slices_tensor(const Grid3& g, const std::vector<std::int64_t>& ks) {
  auto out = torch::empty({static_cast<std::int64_t>(ks.size()), 1, g.rows(), g.cols()}, torch::kFloat);
  float* dst = out.data_ptr<float>();
  for (auto k : ks) {
    const auto begin = g.data.begin() + static_cast<std::ptrdiff_t>(k * g.plane());
    dst = std::transform(begin, begin + static_cast<std::ptrdiff_t>(g.plane()), dst,
                         [](double v) { return static_cast<float>(v); });
  }
  return out;
}

std::vector<std::int64_t> all_slices(const Grid3& g) {
  std::vector<std::int64_t> ks(static_cast<std::size_t>(g.depth()));
  for (std::size_t k = 0; k < ks.size(); ++k) ks[k] = static_cast<std::int64_t>(k);
  return ks;
}

void write_grid(const fs::path& stem, const Grid3& g, const json& extra) {
  fs::create_directories(stem.parent_path());
  data::write_raw_grid(stem, g, {1.0, 1.0, 1.0}, extra);
}

}  // namespace anomaly_recon::pipeline::detail
