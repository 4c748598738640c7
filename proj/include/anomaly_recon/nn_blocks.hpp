#pragma once

#include <torch/torch.h>

namespace anomaly_recon {

enum class Activation { kLeakyRelu, kRelu };

/// Two [conv3x3 + batch norm + activation] stages with an additive shortcut
/// (1x1 projection when the channel count changes).
class ResidualBlockImpl : public torch::nn::Module {
 public:
  ResidualBlockImpl(std::int64_t in_channels, std::int64_t out_channels, Activation act);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::Tensor activate(const torch::Tensor& x) const;

  Activation act_;
  torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr}, shortcut_{nullptr};
  torch::nn::BatchNorm2d bn1_{nullptr}, bn2_{nullptr}, shortcut_bn_{nullptr};
};
TORCH_MODULE(ResidualBlock);

/// He (fan-in) initialisation for every conv / linear weight; zero biases.
void he_init(torch::nn::Module& module);

/// Flat list of all parameters and buffers, in registration order.
std::vector<torch::Tensor> state_tensors(const torch::nn::Module& module);

/// Throws NumericFailure naming `what` when `t` holds NaN/Inf.
void check_finite(const torch::Tensor& t, const char* what);

}  // namespace anomaly_recon
