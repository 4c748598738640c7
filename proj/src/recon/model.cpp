#include "anomaly_recon/recon/model.hpp"

#include <bit>

#include "anomaly_recon/error.hpp"

namespace anomaly_recon::recon {

namespace nn = torch::nn;

constexpr double kOutputInitScale = 0.01;
using nlohmann::json;

void ReconArch::validate() const {
  if (encoder_filters.empty()) throw InvalidArgument("encoder needs at least one block");
  if (decoder_filters.size() != encoder_filters.size() + 1) {
    throw InvalidArgument("decoder must have exactly one more block than the encoder");
  }
  const std::int64_t expected = kLatentSize << encoder_filters.size();
  if (image_size != expected) {
    throw InvalidArgument("image size " + std::to_string(image_size) + " does not match " +
                          std::to_string(encoder_filters.size()) + " encoder blocks (expected " +
                          std::to_string(expected) + ")");
  }
  for (auto f : encoder_filters) if (f <= 0) throw InvalidArgument("filter counts must be positive");
  for (auto f : decoder_filters) if (f <= 0) throw InvalidArgument("filter counts must be positive");
  if (latent_channels <= 0) throw InvalidArgument("latent channels must be positive");
}

json ReconArch::to_json() const {
  return {{"image_size", image_size},
          {"encoder_filters", encoder_filters},
          {"decoder_filters", decoder_filters},
          {"latent_channels", latent_channels}};
}

ReconArch ReconArch::from_json(const json& j) {
  ReconArch a;
  a.image_size = j.value("image_size", a.image_size);
  a.encoder_filters = j.value("encoder_filters", a.encoder_filters);
  a.decoder_filters = j.value("decoder_filters", a.decoder_filters);
  a.latent_channels = j.value("latent_channels", a.latent_channels);
  a.validate();
  return a;
}

json ReconHyper::to_json() const {
  return {{"alpha", alpha},         {"beta", beta},
          {"margin", margin},       {"lr_encoder", lr_encoder},
          {"lr_decoder", lr_decoder}, {"lambda_ssim", lambda_ssim},
          {"recon_scale", recon_scale}, {"vae_weight_ae", vae_weight_ae},
          {"vae_weight_reg", vae_weight_reg}};
}

ReconHyper ReconHyper::from_json(const json& j) {
  ReconHyper h;
  h.alpha = j.value("alpha", h.alpha);
  h.beta = j.value("beta", h.beta);
  h.margin = j.value("margin", h.margin);
  h.lr_encoder = j.value("lr_encoder", h.lr_encoder);
  h.lr_decoder = j.value("lr_decoder", h.lr_decoder);
  h.lambda_ssim = j.value("lambda_ssim", h.lambda_ssim);
  h.recon_scale = j.value("recon_scale", h.recon_scale);
  h.vae_weight_ae = j.value("vae_weight_ae", h.vae_weight_ae);
  h.vae_weight_reg = j.value("vae_weight_reg", h.vae_weight_reg);
  return h;
}

EncoderImpl::EncoderImpl(const ReconArch& arch) {
  blocks_ = register_module("blocks", nn::ModuleList());
  std::int64_t in = 1;
  for (auto f : arch.encoder_filters) {
    blocks_->push_back(ResidualBlock(in, f, Activation::kLeakyRelu));
    in = f;
  }
  mu_head_ = register_module("mu", nn::Conv2d(nn::Conv2dOptions(in, arch.latent_channels, 3).padding(1)));
  logvar_head_ = register_module("logvar", nn::Conv2d(nn::Conv2dOptions(in, arch.latent_channels, 3).padding(1)));
}

std::pair<torch::Tensor, torch::Tensor> EncoderImpl::forward(const torch::Tensor& x) {
  auto h = x;
  for (const auto& b : *blocks_) h = torch::avg_pool2d(b->as<ResidualBlock>()->forward(h), 2);
  return {mu_head_(h), logvar_head_(h)};
}

DecoderImpl::DecoderImpl(const ReconArch& arch) {
  const auto& f = arch.decoder_filters;
  input_ = register_module("input", nn::Conv2d(nn::Conv2dOptions(arch.latent_channels, f.front(), 3).padding(1)));
  blocks_ = register_module("blocks", nn::ModuleList());
  upsample_convs_ = register_module("upsample", nn::ModuleList());
  upsample_bns_ = register_module("upsample_bn", nn::ModuleList());
  std::int64_t in = f.front();
  for (std::size_t b = 0; b < f.size(); ++b) {
    blocks_->push_back(ResidualBlock(in, f[b], Activation::kLeakyRelu));
    in = f[b];
    if (b + 1 < f.size()) {
      upsample_convs_->push_back(nn::Conv2d(nn::Conv2dOptions(in, in, 3).padding(1)));
      upsample_bns_->push_back(nn::BatchNorm2d(in));
    }
  }
  output_ = register_module("output", nn::Conv2d(nn::Conv2dOptions(in, 1, 3).padding(1)));
}

torch::Tensor DecoderImpl::forward(const torch::Tensor& z) {
  auto h = torch::leaky_relu(input_(z), 0.2);
  const auto n = blocks_->size();
  for (std::size_t b = 0; b < n; ++b) {
    h = blocks_[b]->as<ResidualBlock>()->forward(h);
    if (b + 1 < n) {
      h = torch::upsample_nearest2d(h, std::vector<std::int64_t>{h.size(2) * 2, h.size(3) * 2});
      h = upsample_convs_[b]->as<nn::Conv2d>()->forward(h);
      h = torch::leaky_relu(upsample_bns_[b]->as<nn::BatchNorm2d>()->forward(h), 0.2);
    }
  }
  return kDecoderBound * torch::tanh(output_(h));
}

void EncoderImpl::shrink_heads(double factor) {
  torch::NoGradGuard guard;
  for (auto* head : {&mu_head_, &logvar_head_}) {
    (*head)->weight.mul_(factor);
    (*head)->bias.zero_();
  }
}

void DecoderImpl::shrink_output(double factor) {
  torch::NoGradGuard guard;
  output_->weight.mul_(factor);
  output_->bias.zero_();
}

ReconModelImpl::ReconModelImpl(ReconArch arch, TrainingMode mode, ReconHyper hyper)
    : arch_(std::move(arch)), mode_(mode), hyper_(hyper) {
  arch_.validate();
  encoder = register_module("encoder", Encoder(arch_));
  decoder = register_module("decoder", Decoder(arch_));
  he_init(*this);
  encoder->shrink_heads(kOutputInitScale);
  decoder->shrink_output(kOutputInitScale);
}

Posterior encode(ReconModel& model, const torch::Tensor& x) {
  const auto& a = model->arch();
  if (x.dim() != 4 || x.size(1) != 1 || x.size(2) != a.image_size || x.size(3) != a.image_size) {
    throw InvalidArgument("encoder expects batch x 1 x " + std::to_string(a.image_size) + " x " +
                          std::to_string(a.image_size));
  }
  auto [mu, logvar] = model->encoder->forward(x);
  check_finite(mu, "encoder mu");
  check_finite(logvar, "encoder logvar");
  return {mu, torch::exp(0.5 * logvar), logvar};
}

torch::Tensor reparameterize(const torch::Tensor& mu, const torch::Tensor& sigma, const torch::Tensor& epsilon) {
  if (!mu.sizes().equals(sigma.sizes()) || !mu.sizes().equals(epsilon.sizes())) {
    throw InvalidArgument("reparameterize: mu, sigma and epsilon must have the same shape");
  }
  return mu + sigma * epsilon;
}

torch::Tensor decode(ReconModel& model, const torch::Tensor& z) {
  const auto& a = model->arch();
  if (z.dim() != 4 || z.size(1) != a.latent_channels || z.size(2) != ReconArch::kLatentSize ||
      z.size(3) != ReconArch::kLatentSize) {
    throw InvalidArgument("decoder expects batch x " + std::to_string(a.latent_channels) + " x 4 x 4");
  }
  auto out = model->decoder->forward(z);
  check_finite(out, "decoder output");
  return out;
}

std::string to_string(TrainingMode m) { return m == TrainingMode::kVae ? "vae" : "introvae"; }

TrainingMode training_mode_from_string(const std::string& s) {
  if (s == "vae") return TrainingMode::kVae;
  if (s == "introvae") return TrainingMode::kIntroVae;
  throw InvalidArgument("unknown training mode '" + s + "'");
}

}  // namespace anomaly_recon::recon
