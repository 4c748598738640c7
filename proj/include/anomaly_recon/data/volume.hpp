#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "anomaly_recon/array.hpp"

namespace anomaly_recon::data {

/// Scalar 3D image with physical voxel spacing (dz, dy, dx) in mm.
struct Volume {
  Grid3 data;
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  std::string id;

  /// Throws InvalidArgument on non-positive spacing or non-finite data.
  void validate() const;
};

/// One axial slice. After renormalization values lie in [-1, 1].
struct Slice {
  Image data;
  std::string source_id;
  std::int64_t index_k = 0;
};

inline constexpr std::array<std::string_view, 4> kAbnormalityClasses = {
    "metastatic_tumor_analog", "extracranial_tumor_analog", "cavity_analog",
    "structural_change_analog"};

// Anatomy classes, in label-index order. Index 0 is background.
inline constexpr std::array<std::string_view, 6> kAnatomyClasses = {
    "background", "skull_analog", "brain_analog", "ventricle_analog", "eye_left_analog",
    "eye_right_analog"};

inline constexpr int kNumAnatomyClasses = static_cast<int>(kAnatomyClasses.size());

/// Multi-label masks aligned with a Volume, keyed by class name.
struct LabelVolume {
  std::map<std::string, Mask3> masks;

  const Mask3& at(std::string_view cls) const;
  bool has(std::string_view cls) const { return masks.count(std::string(cls)) != 0; }
  /// Union of all abnormality-class masks.
  Mask3 any_abnormality() const;
  /// Anatomy label map (argmax over anatomy masks, background where none set).
  Array3<std::int32_t> anatomy_labels() const;
  void validate(const Volume& v) const;
};

// ---- raw + JSON sidecar format -------------------------------------------
// <stem>.raw  little-endian float32, C-order (z, y, x)
// <stem>.json {"shape":[K,I,J],"spacing":[dz,dy,dx],"dtype":"f32le", ...extra}

void write_raw_grid(const std::filesystem::path& stem, const Grid3& grid,
                    const std::array<double, 3>& spacing, const nlohmann::json& extra = {});

struct RawGrid {
  Grid3 grid;
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  nlohmann::json header;
};

RawGrid read_raw_grid(const std::filesystem::path& stem);

void write_volume(const std::filesystem::path& dir, const Volume& v);
Volume read_volume(const std::filesystem::path& dir, const std::string& id);

/// Writes one `<id>_<class>` pair per mask.
void write_labels(const std::filesystem::path& dir, const std::string& id, const LabelVolume& labels,
                  const std::array<double, 3>& spacing);
LabelVolume read_labels(const std::filesystem::path& dir, const std::string& id,
                        const std::vector<std::string>& classes);

Mask3 to_mask(const Grid3& g);
Grid3 to_grid(const Mask3& m);

}  // namespace anomaly_recon::data
