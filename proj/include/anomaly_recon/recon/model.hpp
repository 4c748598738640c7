#pragma once

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "anomaly_recon/nn_blocks.hpp"

namespace anomaly_recon::recon {

/// Architecture plan. The encoder halves the image once per block down to
/// 4x4; the decoder has one more block than the encoder and doubles the size
/// after every block but the last.
struct ReconArch {
  std::int64_t image_size = 256;
  std::vector<std::int64_t> encoder_filters{32, 64, 128, 256, 512, 512};
  std::vector<std::int64_t> decoder_filters{512, 512, 256, 128, 64, 32, 16};
  std::int64_t latent_channels = 128;

  static constexpr std::int64_t kLatentSize = 4;

  void validate() const;
  std::int64_t latent_dim() const { return latent_channels * kLatentSize * kLatentSize; }
  nlohmann::json to_json() const;
  static ReconArch from_json(const nlohmann::json& j);
};

enum class TrainingMode { kVae, kIntroVae };

struct ReconHyper {
  double alpha = 0.5;
  double beta = 0.04;
  double margin = 120.0;
  double lr_encoder = 1e-4;
  double lr_decoder = 5e-3;
  double lambda_ssim = 1.0;
  // L_AE is a per-pixel mean; training objectives multiply it by this factor
  // (image pixels by default, i.e. a per-image sum of squared errors).
  double recon_scale = 0.0;  // 0 -> image_size^2
  double vae_weight_ae = 1.0;
  double vae_weight_reg = 1.0;

  double effective_recon_scale(const ReconArch& a) const {
    return recon_scale > 0.0 ? recon_scale : static_cast<double>(a.image_size * a.image_size);
  }
  nlohmann::json to_json() const;
  static ReconHyper from_json(const nlohmann::json& j);
};

class EncoderImpl : public torch::nn::Module {
 public:
  explicit EncoderImpl(const ReconArch& arch);
  /// Returns (mu, logvar), each batch x C' x 4 x 4.
  std::pair<torch::Tensor, torch::Tensor> forward(const torch::Tensor& x);
  /// Scales the mu and log-variance head weights and zeroes their biases so
  /// that the initial posterior is close to the prior.
  void shrink_heads(double factor);

 private:
  torch::nn::ModuleList blocks_;
  torch::nn::Conv2d mu_head_{nullptr}, logvar_head_{nullptr};
};
TORCH_MODULE(Encoder);

class DecoderImpl : public torch::nn::Module {
 public:
  explicit DecoderImpl(const ReconArch& arch);
  torch::Tensor forward(const torch::Tensor& z);
  /// Scales the output convolution weights and zeroes its bias so that the
  /// initial tanh inputs stay in the linear range.
  void shrink_output(double factor);

 private:
  torch::nn::Conv2d input_{nullptr}, output_{nullptr};
  torch::nn::ModuleList blocks_;
  torch::nn::ModuleList upsample_convs_;
  torch::nn::ModuleList upsample_bns_;
};
TORCH_MODULE(Decoder);

/// Largest |value| the decoder may emit; keeps outputs strictly inside (-1, 1)
/// even where tanh saturates in single precision.
inline constexpr double kDecoderBound = 1.0 - 1.0 / (1 << 20);

class ReconModelImpl : public torch::nn::Module {
 public:
  ReconModelImpl(ReconArch arch, TrainingMode mode, ReconHyper hyper = {});

  Encoder encoder{nullptr};
  Decoder decoder{nullptr};

  const ReconArch& arch() const { return arch_; }
  TrainingMode mode() const { return mode_; }
  void set_mode(TrainingMode m) { mode_ = m; }
  const ReconHyper& hyper() const { return hyper_; }
  ReconHyper& hyper() { return hyper_; }

 private:
  ReconArch arch_;
  TrainingMode mode_;
  ReconHyper hyper_;
};
TORCH_MODULE(ReconModel);

struct Posterior {
  torch::Tensor mu;
  torch::Tensor sigma;
  torch::Tensor logvar;
};

/// Runs the encoder; sigma = exp(0.5 * logvar). Throws NumericFailure on NaN/Inf.
Posterior encode(ReconModel& model, const torch::Tensor& x);

/// z = mu + sigma * epsilon. Throws InvalidArgument on shape mismatch.
torch::Tensor reparameterize(const torch::Tensor& mu, const torch::Tensor& sigma, const torch::Tensor& epsilon);

/// Decoder output, batch x 1 x H x W in (-1, 1).
torch::Tensor decode(ReconModel& model, const torch::Tensor& z);

/// Latent code with its Gaussian parameters.
struct LatentCode {
  enum class Origin { kEncoded, kSearched };
  torch::Tensor z, mu, sigma;
  Origin origin = Origin::kEncoded;
};

std::string to_string(TrainingMode m);
TrainingMode training_mode_from_string(const std::string& s);

}  // namespace anomaly_recon::recon
