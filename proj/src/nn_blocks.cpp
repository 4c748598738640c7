#include "anomaly_recon/nn_blocks.hpp"

#include <sstream>

#include "anomaly_recon/error.hpp"

namespace anomaly_recon {

namespace nn = torch::nn;

ResidualBlockImpl::ResidualBlockImpl(std::int64_t in_channels, std::int64_t out_channels, Activation act)
    : act_(act) {
  conv1_ = register_module("conv1", nn::Conv2d(nn::Conv2dOptions(in_channels, out_channels, 3).padding(1)));
  bn1_ = register_module("bn1", nn::BatchNorm2d(out_channels));
  conv2_ = register_module("conv2", nn::Conv2d(nn::Conv2dOptions(out_channels, out_channels, 3).padding(1)));
  bn2_ = register_module("bn2", nn::BatchNorm2d(out_channels));
  if (in_channels != out_channels) {
    shortcut_ = register_module("shortcut", nn::Conv2d(nn::Conv2dOptions(in_channels, out_channels, 1)));
    shortcut_bn_ = register_module("shortcut_bn", nn::BatchNorm2d(out_channels));
  }
}

torch::Tensor ResidualBlockImpl::activate(const torch::Tensor& x) const {
  return act_ == Activation::kLeakyRelu ? torch::leaky_relu(x, 0.2) : torch::relu(x);
}

torch::Tensor ResidualBlockImpl::forward(const torch::Tensor& x) {
  auto h = activate(bn1_(conv1_(x)));
  h = activate(bn2_(conv2_(h)));
  return h + (shortcut_ ? shortcut_bn_(shortcut_(x)) : x);
}

void he_init(nn::Module& module) {
  torch::NoGradGuard guard;
  for (auto& m : module.modules(/*include_self=*/false)) {
    if (auto* conv = m->as<nn::Conv2d>()) {
      nn::init::kaiming_normal_(conv->weight, 0.0, torch::kFanIn, torch::kReLU);
      if (conv->bias.defined()) conv->bias.zero_();
    } else if (auto* lin = m->as<nn::Linear>()) {
      nn::init::kaiming_normal_(lin->weight, 0.0, torch::kFanIn, torch::kReLU);
      if (lin->bias.defined()) lin->bias.zero_();
    }
  }
}

std::vector<torch::Tensor> state_tensors(const nn::Module& module) {
  std::vector<torch::Tensor> out;
  for (const auto& p : module.named_parameters(true)) out.push_back(p.value());
  for (const auto& b : module.named_buffers(true)) out.push_back(b.value());
  return out;
}

void check_finite(const torch::Tensor& t, const char* what) {
  if (torch::isfinite(t).all().item<bool>()) return;
  const auto bad = (~torch::isfinite(t)).sum().item<std::int64_t>();
  std::ostringstream msg;
  msg << what << ": " << bad << " of " << t.numel() << " values are NaN/Inf (shape " << t.sizes() << ")";
  throw NumericFailure(msg.str());
}

}  // namespace anomaly_recon
