#pragma once

#include <torch/torch.h>

namespace anomaly_recon::recon {

/// Closed-form KL(N(mu, sigma^2) || N(0, I)) summed over latent elements and
/// averaged over the batch. Throws InvalidArgument if any sigma <= 0.
torch::Tensor loss_reg(const torch::Tensor& mu, const torch::Tensor& sigma);

/// Same divergence parameterised by log-variance (used inside training).
torch::Tensor loss_reg_logvar(const torch::Tensor& mu, const torch::Tensor& logvar);

/// Per-sample KL, shape [batch].
torch::Tensor kl_per_sample(const torch::Tensor& mu, const torch::Tensor& logvar);

struct SsimOptions {
  std::int64_t window = 11;
  double sigma = 1.5;
  double data_range = 2.0;  // images live in [-1, 1]
  double k1 = 0.01;
  double k2 = 0.03;
};

/// Mean SSIM per sample over a Gaussian-weighted window with zero padding
/// ("same" size maps). Input batch x 1 x H x W, output [batch].
torch::Tensor ssim_per_sample(const torch::Tensor& x, const torch::Tensor& y, const SsimOptions& opt = {});

/// Per-sample reconstruction loss 0.5 * mean((x - x_hat)^2) + lambda * (1 - SSIM).
torch::Tensor loss_ae_per_sample(const torch::Tensor& x, const torch::Tensor& x_hat, double lambda_ssim);

/// Batch mean of loss_ae_per_sample. Throws InvalidArgument on shape mismatch.
torch::Tensor loss_ae(const torch::Tensor& x, const torch::Tensor& x_hat, double lambda_ssim);

}  // namespace anomaly_recon::recon
