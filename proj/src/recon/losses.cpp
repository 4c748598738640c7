#include "anomaly_recon/recon/losses.hpp"

#include <cmath>

#include "anomaly_recon/error.hpp"

namespace anomaly_recon::recon {

torch::Tensor kl_per_sample(const torch::Tensor& mu, const torch::Tensor& logvar) {
  if (!mu.sizes().equals(logvar.sizes())) throw InvalidArgument("KL: mu/logvar shape mismatch");
  auto kl = 0.5 * (mu.pow(2) + logvar.exp() - 1.0 - logvar);
  return kl.reshape({kl.size(0), -1}).sum(1);
}

torch::Tensor loss_reg_logvar(const torch::Tensor& mu, const torch::Tensor& logvar) {
  return kl_per_sample(mu, logvar).mean();
}

torch::Tensor loss_reg(const torch::Tensor& mu, const torch::Tensor& sigma) {
  if (!mu.sizes().equals(sigma.sizes())) throw InvalidArgument("KL: mu/sigma shape mismatch");
  if ((sigma <= 0).any().item<bool>()) throw InvalidArgument("KL: sigma must be strictly positive");
  return loss_reg_logvar(mu, 2.0 * torch::log(sigma));
}

namespace {

torch::Tensor gaussian_window(const SsimOptions& opt, const torch::TensorOptions& to) {
  auto coords = torch::arange(opt.window, to) - static_cast<double>(opt.window - 1) / 2.0;
  auto g = torch::exp(-(coords * coords) / (2.0 * opt.sigma * opt.sigma));
  g = g / g.sum();
  return torch::outer(g, g).reshape({1, 1, opt.window, opt.window});
}

}  // namespace

torch::Tensor ssim_per_sample(const torch::Tensor& x, const torch::Tensor& y, const SsimOptions& opt) {
  if (!x.sizes().equals(y.sizes()) || x.dim() != 4 || x.size(1) != 1) {
    throw InvalidArgument("SSIM expects two batch x 1 x H x W tensors of equal shape");
  }
  const auto w = gaussian_window(opt, x.options().requires_grad(false));
  const std::int64_t pad = opt.window / 2;
  auto filt = [&](const torch::Tensor& t) { return torch::conv2d(t, w, {}, 1, pad); };
  const double c1 = std::pow(opt.k1 * opt.data_range, 2);
  const double c2 = std::pow(opt.k2 * opt.data_range, 2);
  auto mx = filt(x), my = filt(y);
  auto sxx = filt(x * x) - mx * mx;
  auto syy = filt(y * y) - my * my;
  auto sxy = filt(x * y) - mx * my;
  auto map = ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2));
  return map.reshape({map.size(0), -1}).mean(1);
}

torch::Tensor loss_ae_per_sample(const torch::Tensor& x, const torch::Tensor& x_hat, double lambda_ssim) {
  if (!x.sizes().equals(x_hat.sizes())) throw InvalidArgument("L_AE: x and x_hat shapes differ");
  auto mse = (x - x_hat).pow(2).reshape({x.size(0), -1}).mean(1);
  auto loss = 0.5 * mse;
  if (lambda_ssim != 0.0) loss = loss + lambda_ssim * (1.0 - ssim_per_sample(x, x_hat));
  return loss;
}

torch::Tensor loss_ae(const torch::Tensor& x, const torch::Tensor& x_hat, double lambda_ssim) {
  return loss_ae_per_sample(x, x_hat, lambda_ssim).mean();
}

}  // namespace anomaly_recon::recon
