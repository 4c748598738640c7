#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "anomaly_recon/array.hpp"

namespace anomaly_recon::fidelity {

/// Residual U-shaped segmentation plan: one residual block per level with
/// 2x max pooling between encoder levels, nearest upsampling plus skip
/// concatenation on the way back up.
struct SegArch {
  std::int64_t image_size = 256;
  std::vector<std::int64_t> filters{32, 64, 128, 256};
  std::int64_t num_classes = 6;

  void validate() const;
  nlohmann::json to_json() const;
  static SegArch from_json(const nlohmann::json& j);
};

class SegNetImpl : public torch::nn::Module {
 public:
  explicit SegNetImpl(SegArch arch);
  /// Logits, batch x num_classes x H x W.
  torch::Tensor forward(const torch::Tensor& x);

  const SegArch& arch() const { return arch_; }
  std::int64_t trained_steps = 0;

 private:
  SegArch arch_;
  torch::nn::ModuleList down_, up_;
  torch::nn::Conv2d head_{nullptr};
};
TORCH_MODULE(SegNet);

struct SegLossOptions {
  double focal_gamma = 2.0;
  double dice_eps = 1e-5;
  double dice_weight = 1.0;
  double focal_weight = 1.0;
};

/// 1 - mean over classes of (2 sum(p g) + eps) / (sum p + sum g + eps), with
/// sums over batch and pixels. probs batch x C x H x W, one_hot same shape.
torch::Tensor soft_dice_loss(const torch::Tensor& probs, const torch::Tensor& one_hot, double eps);

/// Mean over pixels of -(1 - p_t)^gamma log p_t from logits.
torch::Tensor focal_loss(const torch::Tensor& logits, const torch::Tensor& labels, double gamma);

/// dice_weight * soft Dice + focal_weight * focal. labels batch x H x W
/// (int64). Throws InvalidArgument when a label lies outside [0, C).
torch::Tensor segmentation_loss(const torch::Tensor& logits, const torch::Tensor& labels,
                                const SegLossOptions& opt = {});

class SegTrainer {
 public:
  SegTrainer(SegNet net, double lr, double weight_decay, SegLossOptions loss = {});
  double step(const torch::Tensor& images, const torch::Tensor& labels);
  SegNet& net() { return net_; }
  torch::optim::Adam& optimizer() { return *opt_; }

 private:
  SegNet net_;
  SegLossOptions loss_;
  std::unique_ptr<torch::optim::Adam> opt_;
};

/// Per-pixel class probabilities of one slice, C x H x W.
struct SoftmaxMap {
  torch::Tensor probs;

  Array2<std::int32_t> argmax() const;
};

/// Softmax maps for a batch (eval mode, no gradients).
std::vector<SoftmaxMap> segment(SegNet& net, const torch::Tensor& images);

/// -sum_k sum_ij p log p with natural log and 0 log 0 = 0. Throws
/// InvalidArgument on negative probabilities.
double entropy(const SoftmaxMap& m);

/// 2|a & b| / (|a| + |b|); 1 when both masks are empty.
double dice(const Array2<std::int32_t>& a, const Array2<std::int32_t>& b, std::int32_t cls);

/// Mean Dice over the non-background classes present in `reference`. When
/// the reference has no foreground class the score is 1 if `other` has none
/// either, else 0.
double overlap_from_labels(const Array2<std::int32_t>& reference, const Array2<std::int32_t>& other,
                           std::int32_t num_classes);

struct FidelityScores {
  std::vector<double> quality;  // Entropy(x) - Entropy(x_hat)
  std::vector<double> overlap;
};

/// Quality and overlap scores for aligned batches x and x_hat.
FidelityScores fidelity_scores(SegNet& net, const torch::Tensor& x, const torch::Tensor& x_hat);

double quality_score(SegNet& net, const torch::Tensor& x, const torch::Tensor& x_hat);
double overlap_score(SegNet& net, const torch::Tensor& x, const torch::Tensor& x_hat);

}  // namespace anomaly_recon::fidelity
