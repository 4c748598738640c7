#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "anomaly_recon/data/volume.hpp"

namespace anomaly_recon::data {

struct Range {
  double min = 0.0;
  double max = 0.0;
};

struct CountRange {
  int min = 0;
  int max = 0;
};

/// Procedural head phantom parameters. Lengths are in voxels of the output grid
/// unless stated otherwise; `seed` fully determines the output.
struct PhantomConfig {
  std::int64_t size = 64;   // in-plane rows = cols
  std::int64_t depth = 16;  // axial slices
  std::array<double, 3> spacing{1.0, 1.0, 1.0};

  // Anatomy. Semi-axes are fractions of `size`; z semi-axis is a fraction of depth.
  Range head_axis_rows{0.38, 0.43};
  Range head_axis_cols{0.30, 0.35};
  Range head_axis_depth{0.75, 0.9};
  double max_tilt_deg = 8.0;
  double skull_thickness = 0.13;  // fraction of the head radius
  double texture_amplitude = 0.05;
  double texture_wavelength = 6.0;  // voxels
  Range intensity_gain{0.85, 1.2};

  // Abnormalities, keyed by abnormality class name.
  std::map<std::string, CountRange> anomaly_counts;
  Range anomaly_radius{3.0, 5.0};
  Range intensity_offset{0.35, 0.5};  // bright blob offsets (tumour analogs)
  double deformation_amplitude = 3.0;  // voxels, structural change analog

  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static PhantomConfig from_json(const nlohmann::json& j);
};

struct AnomalyRecord {
  std::string cls;
  std::array<double, 3> center{};  // voxel coordinates (k, i, j)
  double radius = 0.0;
  double intensity_offset = 0.0;
};

struct Phantom {
  Volume volume;
  LabelVolume labels;  // all anatomy + all abnormality classes, always present
  Mask3 body;          // generator ground-truth body region
  std::vector<AnomalyRecord> anomalies;
};

/// Deterministic in cfg (including cfg.seed). Throws InvalidArgument when an
/// anomaly cannot fit inside the brain region.
Phantom generate_phantom(const PhantomConfig& cfg, const std::string& id = "phantom");

}  // namespace anomaly_recon::data
