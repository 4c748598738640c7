#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "anomaly_recon/array.hpp"
#include "anomaly_recon/data/volume.hpp"

namespace anomaly_recon::scoring {

inline constexpr std::size_t kNumThresholds = 1000;
inline constexpr const char* kAnyClass = "any_abnormality";

/// Operating-point metrics at one threshold.
struct OperatingPoint {
  double threshold = 0.0;
  double sensitivity = 0.0;
  double specificity = 0.0;
  double precision = 0.0;
  double f1 = 0.0;
};

struct ClassRoc {
  bool present = false;
  std::int64_t positives = 0;
  std::vector<double> tpr;  // aligned with RocResult::thresholds
  double auc = 0.0;
  OperatingPoint youden;
};

/// ROC curves for one volume. Thresholds are ascending; the curve of each
/// class runs through tpr/fpr (both non-increasing in the threshold) and is
/// closed by the points (1, 1) and (0, 0) for the AUC.
struct RocResult {
  std::vector<double> thresholds;
  std::vector<double> fpr;
  std::int64_t negatives = 0;
  std::map<std::string, ClassRoc> classes;

  nlohmann::json to_json(bool include_curves) const;
};

/// Voxel-level ROC per abnormality class. Within the evaluated region (mask
/// voxels, or every voxel when `mask` is null) a voxel counts as detected at
/// threshold t when score > t. Class TPR uses that class's voxels; FPR uses
/// voxels carrying no abnormality label. `kAnyClass` pools all labels.
/// Thresholds are kNumThresholds order-statistic quantiles of the region's
/// scores. Throws InvalidArgument on shape mismatch and DegenerateInput when
/// the region has no negatives or no positives at all.
RocResult evaluate_detection(const Grid3& scores, const data::LabelVolume& labels, const Mask3* mask,
                             const std::vector<std::string>& classes);

/// Area under a polyline through (fpr[i], tpr[i]) by the trapezoid rule after
/// sorting by fpr and adding the (0, 0) and (1, 1) corners.
double trapezoid_auc(const std::vector<double>& fpr, const std::vector<double>& tpr);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
  std::int64_t n = 0;
};

/// Sample mean and standard deviation (n - 1 denominator; 0 when n < 2).
MeanStd mean_std(const std::vector<double>& values);

struct NamedCurve {
  std::string name;
  std::vector<double> fpr, tpr;
};

/// Writes an SVG line chart of ROC curves.
void write_roc_svg(const std::filesystem::path& path, const std::string& title, const std::vector<NamedCurve>& curves);

}  // namespace anomaly_recon::scoring
