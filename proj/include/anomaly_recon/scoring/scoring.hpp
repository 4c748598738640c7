#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "anomaly_recon/array.hpp"
#include "anomaly_recon/data/volume.hpp"
#include "anomaly_recon/discriminative/embedding.hpp"

namespace anomaly_recon::scoring {

enum class Normalization { kRaw, kZScored };

std::string to_string(Normalization n);
Normalization normalization_from_string(const std::string& s);

/// Abnormality scores aligned with a slice (depth 1) or a whole volume.
struct ScoreMap {
  Grid3 scores;
  Normalization normalization = Normalization::kRaw;
  std::int64_t stride = 1;
  std::int64_t index_k = 0;  // axial index when the map holds one slice

  static ScoreMap from_image(Image img, Normalization n, std::int64_t stride, std::int64_t index_k);
  Image image() const;
};

/// Centres along one axis of length n sampled every `stride` pixels; the last
/// pixel is always included so interpolation never extrapolates.
std::vector<std::int64_t> stride_grid(std::int64_t n, std::int64_t stride);

/// Embedding-distance abnormality maps for aligned batches x and x_hat
/// (batch x 1 x H x W). Each grid pixel scores ||f(p) - f(p_hat)|| for the
/// co-located windows of the reflect-padded images; other pixels are filled
/// by bilinear interpolation between grid nodes. Throws InvalidArgument when
/// the network has not been trained.
std::vector<Image> abnormality_maps(disc::EmbeddingNet& net, const torch::Tensor& x, const torch::Tensor& x_hat,
                                    std::int64_t stride, std::int64_t chunk = 4096);

/// Single-slice convenience wrapper.
ScoreMap abnormality_map(disc::EmbeddingNet& net, const Image& x, const Image& x_hat, std::int64_t stride);

/// Per-pixel |x - x_hat|.
Image l1_residual_map(const Image& x, const Image& x_hat);

/// (s - mean) / std with population statistics over `region` (whole image
/// when absent); pixels outside the region take the smallest normalised
/// in-region value. Throws DegenerateInput when the region has fewer than two
/// pixels or zero variance.
Image zscore_normalize(const Image& scores, const std::optional<Mask2>& region = std::nullopt);
ScoreMap zscore_normalize(const ScoreMap& m, const std::optional<Mask2>& region = std::nullopt);

/// Body region of an intensity-normalised volume with zero background:
/// voxels above the 5th percentile of the nonzero voxels, largest
/// 26-connected component, then per-slice filling of enclosed holes.
/// Throws DegenerateInput when nothing survives.
Mask3 body_mask(const data::Volume& v);

/// Stacks slice maps into a volume ordered by index_k (0 .. depth-1). Throws
/// InvalidArgument on a missing, duplicate or out-of-range index.
ScoreMap volume_assemble(const std::vector<ScoreMap>& slices);

/// Tensor helpers: batch x 1 x H x W float <-> images.
torch::Tensor images_to_tensor(const std::vector<const Image*>& images);
std::vector<Image> tensor_to_images(const torch::Tensor& t);

}  // namespace anomaly_recon::scoring
