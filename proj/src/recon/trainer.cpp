#include "anomaly_recon/recon/trainer.hpp"

#include "anomaly_recon/error.hpp"
#include "anomaly_recon/recon/losses.hpp"

namespace anomaly_recon::recon {

ReconTrainer::ReconTrainer(ReconModel model) : model_(std::move(model)) {
  const auto& h = model_->hyper();
  enc_opt_ = std::make_unique<torch::optim::Adam>(model_->encoder->parameters(),
                                                  torch::optim::AdamOptions(h.lr_encoder));
  dec_opt_ = std::make_unique<torch::optim::Adam>(model_->decoder->parameters(),
                                                  torch::optim::AdamOptions(h.lr_decoder));
}

namespace {

double value(const torch::Tensor& t) { return t.item<double>(); }

torch::Tensor draw_epsilon(const torch::Tensor& mu, const std::optional<torch::Tensor>& eps) {
  if (eps) {
    if (!eps->sizes().equals(mu.sizes())) throw InvalidArgument("epsilon shape mismatch");
    return eps->to(mu.dtype());
  }
  return torch::randn_like(mu);
}

void check_report(const ReconLossReport& r) {
  for (double v : {r.l_ae, r.l_reg_z, r.l_margin_zprime, r.l_encoder, r.l_decoder}) {
    if (!std::isfinite(v)) {
      throw NumericFailure("reconstruction step aborted: L_AE=" + std::to_string(r.l_ae) +
                           " L_REG(z)=" + std::to_string(r.l_reg_z) + " L_enc=" + std::to_string(r.l_encoder) +
                           " L_dec=" + std::to_string(r.l_decoder));
    }
  }
}

void assign_grads(const std::vector<torch::Tensor>& params, const std::vector<torch::Tensor>& grads) {
  for (std::size_t n = 0; n < params.size(); ++n) {
    auto p = params[n];
    p.mutable_grad() = grads[n].defined() ? grads[n].detach().clone() : torch::zeros_like(p);
  }
}

}  // namespace

ReconGradients vae_gradients(ReconModel& model, const torch::Tensor& batch, std::optional<torch::Tensor> epsilon) {
  model->train();
  const auto& h = model->hyper();
  const double scale = h.effective_recon_scale(model->arch());
  auto post = encode(model, batch);
  auto z = reparameterize(post.mu, post.sigma, draw_epsilon(post.mu, epsilon));
  auto x_hat = decode(model, z);
  auto l_ae = loss_ae(batch, x_hat, h.lambda_ssim);
  auto l_reg = loss_reg_logvar(post.mu, post.logvar);
  auto total = h.vae_weight_ae * scale * l_ae + h.vae_weight_reg * l_reg;

  ReconGradients g;
  g.report.l_ae = value(l_ae);
  g.report.l_reg_z = value(l_reg);
  g.report.l_encoder = g.report.l_decoder = value(total);
  check_report(g.report);

  const auto enc_params = model->encoder->parameters();
  const auto dec_params = model->decoder->parameters();
  std::vector<torch::Tensor> all(enc_params);
  all.insert(all.end(), dec_params.begin(), dec_params.end());
  auto grads = torch::autograd::grad({total}, all, {}, false, false, true);
  g.encoder.assign(grads.begin(), grads.begin() + static_cast<std::ptrdiff_t>(enc_params.size()));
  g.decoder.assign(grads.begin() + static_cast<std::ptrdiff_t>(enc_params.size()), grads.end());
  return g;
}

ReconGradients introvae_gradients(ReconModel& model, const torch::Tensor& batch,
                                  std::optional<torch::Tensor> epsilon) {
  model->train();
  const auto& h = model->hyper();
  const double scale = h.effective_recon_scale(model->arch());
  auto post = encode(model, batch);
  auto z = reparameterize(post.mu, post.sigma, draw_epsilon(post.mu, epsilon));
  auto x_hat = decode(model, z);
  auto l_ae = loss_ae(batch, x_hat, h.lambda_ssim);
  auto l_reg_z = loss_reg_logvar(post.mu, post.logvar);

  // The leaf cuts the decoder (and z) out of the encoder's graph for z'.
  auto x_hat_leaf = x_hat.detach().requires_grad_(true);
  auto post_prime = encode(model, x_hat_leaf);
  auto l_reg_zp = loss_reg_logvar(post_prime.mu, post_prime.logvar);
  auto l_margin = torch::relu(h.margin - l_reg_zp);

  auto l_enc = l_reg_z + h.alpha * l_margin + h.beta * scale * l_ae;
  auto l_dec = h.alpha * l_reg_zp + h.beta * scale * l_ae;

  ReconGradients g;
  g.report.l_ae = value(l_ae);
  g.report.l_reg_z = value(l_reg_z);
  g.report.l_reg_zprime = value(l_reg_zp);
  g.report.l_margin_zprime = value(l_margin);
  g.report.l_encoder = value(l_enc);
  g.report.l_decoder = value(l_dec);
  check_report(g.report);

  const auto enc_params = model->encoder->parameters();
  const auto dec_params = model->decoder->parameters();
  g.encoder = torch::autograd::grad({l_enc}, enc_params, {}, true, false, true);

  auto gx = torch::autograd::grad({h.alpha * l_reg_zp}, {x_hat_leaf}, {}, true, false, true)[0];
  if (!gx.defined()) gx = torch::zeros_like(x_hat);
  g.decoder = torch::autograd::grad({x_hat, h.beta * scale * l_ae}, dec_params, {gx, torch::ones_like(l_ae)},
                                    false, false, true);
  return g;
}

ReconLossReport ReconTrainer::apply(const ReconGradients& g) {
  assign_grads(model_->encoder->parameters(), g.encoder);
  assign_grads(model_->decoder->parameters(), g.decoder);
  enc_opt_->step();
  dec_opt_->step();
  return g.report;
}

ReconLossReport ReconTrainer::train_vae_step(const torch::Tensor& batch, std::optional<torch::Tensor> epsilon) {
  return apply(vae_gradients(model_, batch, std::move(epsilon)));
}

ReconLossReport ReconTrainer::train_introvae_step(const torch::Tensor& batch,
                                                  std::optional<torch::Tensor> epsilon) {
  return apply(introvae_gradients(model_, batch, std::move(epsilon)));
}

ReconLossReport ReconTrainer::step(const torch::Tensor& batch) {
  return model_->mode() == TrainingMode::kVae ? train_vae_step(batch) : train_introvae_step(batch);
}

}  // namespace anomaly_recon::recon
