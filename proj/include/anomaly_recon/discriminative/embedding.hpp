#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "anomaly_recon/array.hpp"
#include "anomaly_recon/data/volume.hpp"

namespace anomaly_recon::disc {

using data::Slice;

/// Embedding network plan: residual blocks (each followed by 2x max pooling)
/// then a one-hidden-layer MLP.
struct DiscArch {
  std::int64_t patch_size = 32;
  std::vector<std::int64_t> filters{64, 128, 256, 512};
  std::int64_t hidden = 1024;
  std::int64_t embedding_dim = 256;

  void validate() const;
  nlohmann::json to_json() const;
  static DiscArch from_json(const nlohmann::json& j);
};

class EmbeddingNetImpl : public torch::nn::Module {
 public:
  explicit EmbeddingNetImpl(DiscArch arch);
  torch::Tensor forward(const torch::Tensor& patches);

  const DiscArch& arch() const { return arch_; }
  /// Optimisation steps taken so far; 0 means untrained.
  std::int64_t trained_steps = 0;

 private:
  DiscArch arch_;
  torch::nn::ModuleList blocks_;
  torch::nn::Linear hidden_{nullptr}, out_{nullptr};
};
TORCH_MODULE(EmbeddingNet);

struct Patch {
  Image data;  // patch_size x patch_size, values in [-1, 1]
  std::int64_t ci = 0;
  std::int64_t cj = 0;
  std::string source;
};

struct Triplet {
  Patch anchor, positive, negative;
};

/// Jitter ranges for positives and the exclusion radius for negatives.
struct TripletOptions {
  std::int64_t patch_size = 32;
  std::int64_t max_shift = 3;
  double scale_jitter = 0.05;
  double intensity_scale_jitter = 0.05;
  double intensity_offset_jitter = 0.05;
  double min_negative_distance = 8.0;
  // Pixels above -1 + body_threshold belong to the body region.
  double body_threshold = 0.05;

  void validate() const;
  nlohmann::json to_json() const;
  static TripletOptions from_json(const nlohmann::json& j);
};

/// Patch centres (row-major pixel indices) whose window, enlarged by the
/// largest positive jitter, stays inside the slice and that lie in the body
/// region. The window of centre (ci, cj) covers rows ci - P/2 .. ci + P/2 - 1.
std::vector<std::int64_t> valid_centres(const Image& img, const TripletOptions& opt);

/// Axis-aligned window of `size` at centre (ci, cj), shifted by (di, dj),
/// scaled about its centre by `scale`, sampled bilinearly with edge clamping.
Image crop_patch(const Image& img, double ci, double cj, std::int64_t size, double scale = 1.0);

/// Anchor uniform over valid_centres; positive is the anchor window jittered
/// in position, scale and intensity; negative uniform over valid centres at
/// least min_negative_distance from the anchor. Throws DegenerateInput when no
/// valid centre exists.
Triplet sample_triplet(const Slice& s, std::mt19937_64& rng, const TripletOptions& opt = {});

/// Same as sample_triplet with a precomputed centre list.
Triplet sample_triplet(const Slice& s, const std::vector<std::int64_t>& centres, std::mt19937_64& rng,
                       const TripletOptions& opt);

/// Stacks patch images into a batch x 1 x P x P float tensor.
torch::Tensor to_tensor(const std::vector<const Image*>& patches);

/// Mean of max{d(a,p) - d(a,n) + 1, 0} over the batch with d the L2 distance.
/// a, p, n are batch x D. Throws InvalidArgument on shape mismatch.
torch::Tensor triplet_loss(const torch::Tensor& a, const torch::Tensor& p, const torch::Tensor& n);

/// Per-row L2 distance between two batch x D embeddings.
torch::Tensor embedding_distance(const torch::Tensor& a, const torch::Tensor& b);

/// Embeddings in eval mode without gradient tracking; batch x D.
/// Throws NumericFailure on non-finite output.
torch::Tensor embed(EmbeddingNet& net, const torch::Tensor& patches);

/// Fraction of triplets with d(a,p) < d(a,n) under `net` in eval mode.
/// Throws InvalidArgument on an empty set.
double triplet_accuracy(EmbeddingNet& net, const std::vector<Triplet>& triplets);

class DiscTrainer {
 public:
  DiscTrainer(EmbeddingNet net, double lr);

  /// One Adam step on the mean triplet loss; returns the batch loss.
  double step(const torch::Tensor& anchors, const torch::Tensor& positives, const torch::Tensor& negatives);

  EmbeddingNet& net() { return net_; }
  torch::optim::Adam& optimizer() { return *opt_; }

 private:
  EmbeddingNet net_;
  std::unique_ptr<torch::optim::Adam> opt_;
};

}  // namespace anomaly_recon::disc
