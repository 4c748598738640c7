#include "anomaly_recon/data/volume.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace anomaly_recon::data {

namespace fs = std::filesystem;
using nlohmann::json;

void Volume::validate() const {
  for (double s : spacing) {
    if (!(s > 0.0)) throw InvalidArgument("volume '" + id + "' has non-positive spacing");
  }
  for (double v : data.data) {
    if (!std::isfinite(v)) throw InvalidArgument("volume '" + id + "' contains non-finite values");
  }
}

const Mask3& LabelVolume::at(std::string_view cls) const {
  auto it = masks.find(std::string(cls));
  if (it == masks.end()) throw InvalidArgument("label volume has no class '" + std::string(cls) + "'");
  return it->second;
}

Mask3 LabelVolume::any_abnormality() const {
  Mask3 out;
  bool first = true;
  for (auto cls : kAbnormalityClasses) {
    auto it = masks.find(std::string(cls));
    if (it == masks.end()) continue;
    if (first) {
      out = Mask3(it->second.shape[0], it->second.shape[1], it->second.shape[2]);
      first = false;
    }
    for (std::size_t n = 0; n < out.data.size(); ++n) out.data[n] |= it->second.data[n];
  }
  if (first) throw InvalidArgument("label volume has no abnormality classes");
  return out;
}

Array3<std::int32_t> LabelVolume::anatomy_labels() const {
  const Mask3& bg = at(kAnatomyClasses[0]);
  Array3<std::int32_t> out(bg.shape[0], bg.shape[1], bg.shape[2], 0);
  for (int c = 1; c < kNumAnatomyClasses; ++c) {
    const Mask3& m = at(kAnatomyClasses[static_cast<std::size_t>(c)]);
    for (std::size_t n = 0; n < out.data.size(); ++n) {
      if (m.data[n]) out.data[n] = c;
    }
  }
  return out;
}

void LabelVolume::validate(const Volume& v) const {
  for (const auto& [name, m] : masks) {
    if (m.shape != v.data.shape) throw InvalidArgument("mask '" + name + "' shape differs from volume");
    for (auto b : m.data) {
      if (b > 1) throw InvalidArgument("mask '" + name + "' is not binary");
    }
  }
}

namespace {

std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
}

fs::path with_ext(const fs::path& stem, const char* ext) {
  return fs::path(stem.string() + ext);
}

}  // namespace

void write_raw_grid(const fs::path& stem, const Grid3& grid, const std::array<double, 3>& spacing,
                    const json& extra) {
  if (!stem.parent_path().empty()) fs::create_directories(stem.parent_path());
  {
    std::ofstream out(with_ext(stem, ".raw"), std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + with_ext(stem, ".raw").string());
    std::vector<std::uint32_t> buf(grid.data.size());
    for (std::size_t n = 0; n < buf.size(); ++n) {
      buf[n] = to_le(std::bit_cast<std::uint32_t>(static_cast<float>(grid.data[n])));
    }
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
  }
  json header = extra.is_object() ? extra : json::object();
  header["shape"] = {grid.shape[0], grid.shape[1], grid.shape[2]};
  header["spacing"] = {spacing[0], spacing[1], spacing[2]};
  header["dtype"] = "f32le";
  std::ofstream js(with_ext(stem, ".json"), std::ios::trunc);
  if (!js) throw Error("cannot write " + with_ext(stem, ".json").string());
  js << header.dump(2) << "\n";
}

RawGrid read_raw_grid(const fs::path& stem) {
  const fs::path jpath = with_ext(stem, ".json");
  const fs::path rpath = with_ext(stem, ".raw");
  if (!fs::exists(jpath) || !fs::exists(rpath)) throw MissingArtifact(stem.string() + ".{raw,json}");
  RawGrid out;
  std::ifstream js(jpath);
  try {
    out.header = json::parse(js);
  } catch (const json::exception& e) {
    throw Error("malformed header " + jpath.string() + ": " + e.what());
  }
  if (out.header.value("dtype", "") != "f32le") throw Error("unsupported dtype in " + jpath.string());
  auto shape = out.header.at("shape").get<std::vector<std::int64_t>>();
  auto spacing = out.header.at("spacing").get<std::vector<double>>();
  if (shape.size() != 3 || spacing.size() != 3) throw Error("bad shape/spacing in " + jpath.string());
  out.grid = Grid3(shape[0], shape[1], shape[2]);
  out.spacing = {spacing[0], spacing[1], spacing[2]};
  std::ifstream in(rpath, std::ios::binary);
  std::vector<std::uint32_t> buf(out.grid.data.size());
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
  if (in.gcount() != static_cast<std::streamsize>(buf.size() * 4)) {
    throw Error("truncated raw file " + rpath.string());
  }
  for (std::size_t n = 0; n < buf.size(); ++n) {
    out.grid.data[n] = static_cast<double>(std::bit_cast<float>(to_le(buf[n])));
  }
  return out;
}

void write_volume(const fs::path& dir, const Volume& v) {
  write_raw_grid(dir / v.id, v.data, v.spacing);
}

Volume read_volume(const fs::path& dir, const std::string& id) {
  RawGrid g = read_raw_grid(dir / id);
  Volume v{std::move(g.grid), g.spacing, id};
  v.validate();
  return v;
}

Mask3 to_mask(const Grid3& g) {
  Mask3 m(g.shape[0], g.shape[1], g.shape[2]);
  for (std::size_t n = 0; n < g.data.size(); ++n) m.data[n] = g.data[n] > 0.5 ? 1 : 0;
  return m;
}

Grid3 to_grid(const Mask3& m) {
  Grid3 g(m.shape[0], m.shape[1], m.shape[2]);
  for (std::size_t n = 0; n < m.data.size(); ++n) g.data[n] = m.data[n];
  return g;
}

void write_labels(const fs::path& dir, const std::string& id, const LabelVolume& labels,
                  const std::array<double, 3>& spacing) {
  for (const auto& [cls, m] : labels.masks) {
    write_raw_grid(dir / (id + "_" + cls), to_grid(m), spacing, json{{"class", cls}});
  }
}

LabelVolume read_labels(const fs::path& dir, const std::string& id, const std::vector<std::string>& classes) {
  LabelVolume out;
  for (const auto& cls : classes) out.masks[cls] = to_mask(read_raw_grid(dir / (id + "_" + cls)).grid);
  return out;
}

}  // namespace anomaly_recon::data
