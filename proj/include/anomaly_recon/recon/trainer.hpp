#pragma once

#include <memory>
#include <optional>

#include <torch/torch.h>

#include "anomaly_recon/recon/model.hpp"

namespace anomaly_recon::recon {

struct ReconLossReport {
  double l_ae = 0.0;
  double l_reg_z = 0.0;
  double l_margin_zprime = 0.0;
  double l_reg_zprime = 0.0;
  double l_encoder = 0.0;
  double l_decoder = 0.0;
};

struct ReconGradients {
  ReconLossReport report;
  std::vector<torch::Tensor> encoder;  // aligned with model->encoder->parameters()
  std::vector<torch::Tensor> decoder;  // aligned with model->decoder->parameters()
};

/// Gradients of w_ae * s * L_AE + w_reg * L_REG(z), s = recon scale, for both
/// networks from one forward pass. `epsilon` defaults to a draw from the
/// global torch generator.
ReconGradients vae_gradients(ReconModel& model, const torch::Tensor& batch,
                             std::optional<torch::Tensor> epsilon = std::nullopt);

/// Introspective objectives from one forward pass:
///   encoder: L_REG(z) + alpha * [m - L_REG(z')]^+ + beta * s * L_AE
///   decoder: alpha * L_REG(z') + beta * s * L_AE
/// where z' = E(x_hat). For the encoder x_hat is a constant (decoder path cut);
/// the decoder receives alpha * L_REG(z') through E applied to its own output.
ReconGradients introvae_gradients(ReconModel& model, const torch::Tensor& batch,
                                  std::optional<torch::Tensor> epsilon = std::nullopt);

/// Owns the encoder / decoder optimizers of one reconstruction model. Steps
/// mutate the model and must be called from a single thread.
class ReconTrainer {
 public:
  explicit ReconTrainer(ReconModel model);

  ReconModel& model() { return model_; }
  torch::optim::Adam& encoder_optimizer() { return *enc_opt_; }
  torch::optim::Adam& decoder_optimizer() { return *dec_opt_; }

  /// One step of each optimizer on vae_gradients.
  ReconLossReport train_vae_step(const torch::Tensor& batch, std::optional<torch::Tensor> epsilon = std::nullopt);

  /// Encoder then decoder optimizer step on introvae_gradients.
  ReconLossReport train_introvae_step(const torch::Tensor& batch,
                                      std::optional<torch::Tensor> epsilon = std::nullopt);

  /// Dispatches on the model's training mode.
  ReconLossReport step(const torch::Tensor& batch);
  /// One step of each optimizer with precomputed gradients.
  ReconLossReport apply(const ReconGradients& g);

 private:

  ReconModel model_;
  std::unique_ptr<torch::optim::Adam> enc_opt_;
  std::unique_ptr<torch::optim::Adam> dec_opt_;
};

}  // namespace anomaly_recon::recon
