#pragma once

#include <array>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "anomaly_recon/data/volume.hpp"

namespace anomaly_recon::data {

/// Keys cubic-convolution kernel (a = -0.5).
double cubic_kernel(double t);

/// Resample to `target_spacing` with separable cubic interpolation. The first
/// voxel centre is kept fixed; output extent is floor((n-1)*s/s')+1 per axis.
Volume resample_volume(const Volume& v, const std::array<double, 3>& target_spacing);

/// Nearest-neighbour counterpart of resample_volume for label masks.
Mask3 resample_mask(const Mask3& m, const std::array<double, 3>& spacing,
                    const std::array<double, 3>& target_spacing);

/// Binned intensity distribution used as a histogram-matching template.
/// The CDF is piecewise linear inside each bin.
struct IntensityHistogram {
  double lo = 0.0;
  double hi = 1.0;
  std::vector<double> counts;

  static IntensityHistogram from_values(std::span<const double> values, std::size_t bins, double lo,
                                        double hi);
  double bin_width() const { return (hi - lo) / static_cast<double>(counts.size()); }
  double total() const;
  double cdf(double x) const;
  /// Inverse CDF for t in [0, 1].
  double quantile(double t) const;
  /// Centre of the most populated bin.
  double mode() const;
};

/// Builds the reference template from pooled foreground intensities. The pooled
/// values are mapped piecewise-linearly onto [0, 1] with min -> 0, histogram
/// mode (the white-matter analog) -> 0.5, max -> 1.
IntensityHistogram build_reference_histogram(const std::vector<const Volume*>& volumes,
                                             double foreground_threshold, std::size_t bins = 1024);

/// Rank-based CDF matching against `reference`. When a threshold is given only
/// voxels strictly above it are matched; the rest keep their value.
Volume histogram_match(const Volume& v, const IntensityHistogram& reference,
                       std::optional<double> foreground_threshold = std::nullopt);

template <class T>
Array2<T> center_crop_or_pad(const Array2<T>& img, std::int64_t size, T pad_value = T{});

/// One slice per axial index, each centre-cropped or zero-padded to size x size.
std::vector<Slice> decompose_and_crop(const Volume& v, std::int64_t size = 256);

/// Affine min/max map onto [-1, 1].
Slice renormalize(const Image& raw, std::string source_id = {}, std::int64_t index_k = 0);

struct AugmentRanges {
  double flip_probability = 0.5;
  double min_scale = 0.9;
  double max_scale = 1.1;
  double max_rotation_deg = 10.0;
};

struct AugmentParams {
  bool flip = false;
  double scale = 1.0;
  double rotation_deg = 0.0;

  bool is_identity() const { return !flip && scale == 1.0 && rotation_deg == 0.0; }
};

AugmentParams draw_augment(std::mt19937_64& rng, const AugmentRanges& ranges = {});

/// Bilinear resampling about the image centre; values outside the source take
/// `fill` and the result is clamped to [-1, 1].
Image apply_augment(const Image& img, const AugmentParams& p, double fill = -1.0);
/// Nearest-neighbour variant for label maps.
Array2<std::int32_t> apply_augment_labels(const Array2<std::int32_t>& labels, const AugmentParams& p);

Slice augment(const Slice& s, std::mt19937_64& rng, const AugmentRanges& ranges = {});

}  // namespace anomaly_recon::data
