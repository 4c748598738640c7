#include "anomaly_recon/fidelity/fidelity.hpp"

#include <cmath>

#include "anomaly_recon/error.hpp"
#include "anomaly_recon/nn_blocks.hpp"

namespace anomaly_recon::fidelity {

namespace nn = torch::nn;
using nlohmann::json;

void SegArch::validate() const {
  if (filters.size() < 2) throw InvalidArgument("segmentation net needs at least two levels");
  const std::int64_t reduction = std::int64_t{1} << (filters.size() - 1);
  if (image_size <= 0 || image_size % reduction != 0) {
    throw InvalidArgument("image size " + std::to_string(image_size) + " is not divisible by " +
                          std::to_string(reduction));
  }
  for (auto f : filters) if (f <= 0) throw InvalidArgument("filter counts must be positive");
  if (num_classes < 2) throw InvalidArgument("segmentation needs at least two classes");
}

json SegArch::to_json() const {
  return {{"image_size", image_size}, {"filters", filters}, {"num_classes", num_classes}};
}

SegArch SegArch::from_json(const json& j) {
  SegArch a;
  a.image_size = j.value("image_size", a.image_size);
  a.filters = j.value("filters", a.filters);
  a.num_classes = j.value("num_classes", a.num_classes);
  a.validate();
  return a;
}

SegNetImpl::SegNetImpl(SegArch arch) : arch_(std::move(arch)) {
  arch_.validate();
  down_ = register_module("down", nn::ModuleList());
  up_ = register_module("up", nn::ModuleList());
  std::int64_t in = 1;
  for (auto f : arch_.filters) {
    down_->push_back(ResidualBlock(in, f, Activation::kRelu));
    in = f;
  }
  for (std::size_t l = arch_.filters.size() - 1; l-- > 0;) {
    up_->push_back(ResidualBlock(in + arch_.filters[l], arch_.filters[l], Activation::kRelu));
    in = arch_.filters[l];
  }
  head_ = register_module("head", nn::Conv2d(nn::Conv2dOptions(in, arch_.num_classes, 1)));
  he_init(*this);
}

torch::Tensor SegNetImpl::forward(const torch::Tensor& x) {
  if (x.dim() != 4 || x.size(1) != 1) throw InvalidArgument("segmentation expects batch x 1 x H x W");
  std::vector<torch::Tensor> skips;
  auto h = x;
  for (std::size_t l = 0; l < down_->size(); ++l) {
    if (l > 0) h = torch::max_pool2d(h, 2);
    h = down_[l]->as<ResidualBlock>()->forward(h);
    skips.push_back(h);
  }
  for (std::size_t u = 0; u < up_->size(); ++u) {
    const auto& skip = skips[skips.size() - 2 - u];
    h = torch::upsample_nearest2d(h, std::vector<std::int64_t>{skip.size(2), skip.size(3)});
    h = up_[u]->as<ResidualBlock>()->forward(torch::cat({h, skip}, 1));
  }
  return head_->forward(h);
}

torch::Tensor soft_dice_loss(const torch::Tensor& probs, const torch::Tensor& one_hot, double eps) {
  if (!probs.sizes().equals(one_hot.sizes())) throw InvalidArgument("soft Dice: shape mismatch");
  const std::vector<std::int64_t> dims{0, 2, 3};
  auto inter = (probs * one_hot).sum(dims);
  auto denom = probs.sum(dims) + one_hot.sum(dims);
  return 1.0 - ((2.0 * inter + eps) / (denom + eps)).mean();
}

torch::Tensor focal_loss(const torch::Tensor& logits, const torch::Tensor& labels, double gamma) {
  auto logp = torch::log_softmax(logits, 1).gather(1, labels.unsqueeze(1)).squeeze(1);
  auto p = logp.exp();
  return (-(1.0 - p).pow(gamma) * logp).mean();
}

namespace {

void check_labels(const torch::Tensor& logits, const torch::Tensor& labels) {
  if (logits.dim() != 4 || labels.dim() != 3 || labels.size(0) != logits.size(0) ||
      labels.size(1) != logits.size(2) || labels.size(2) != logits.size(3)) {
    throw InvalidArgument("segmentation labels must be batch x H x W matching the logits");
  }
  if (labels.scalar_type() != torch::kLong) throw InvalidArgument("segmentation labels must be int64");
  if (labels.min().item<std::int64_t>() < 0 || labels.max().item<std::int64_t>() >= logits.size(1)) {
    throw InvalidArgument("label value outside [0, " + std::to_string(logits.size(1)) + ")");
  }
}

}  // namespace

torch::Tensor segmentation_loss(const torch::Tensor& logits, const torch::Tensor& labels, const SegLossOptions& opt) {
  check_labels(logits, labels);
  auto one_hot = torch::one_hot(labels, logits.size(1)).permute({0, 3, 1, 2}).to(logits.dtype());
  auto probs = torch::softmax(logits, 1);
  return opt.dice_weight * soft_dice_loss(probs, one_hot, opt.dice_eps) +
         opt.focal_weight * focal_loss(logits, labels, opt.focal_gamma);
}

SegTrainer::SegTrainer(SegNet net, double lr, double weight_decay, SegLossOptions loss)
    : net_(std::move(net)), loss_(loss) {
  if (lr < 0 || weight_decay < 0) throw InvalidArgument("learning rate and weight decay must be >= 0");
  opt_ = std::make_unique<torch::optim::Adam>(net_->parameters(),
                                              torch::optim::AdamOptions(lr).weight_decay(weight_decay));
}

double SegTrainer::step(const torch::Tensor& images, const torch::Tensor& labels) {
  net_->train();
  auto loss = segmentation_loss(net_->forward(images), labels, loss_);
  const double value = loss.item<double>();
  if (!std::isfinite(value)) throw NumericFailure("segmentation loss is not finite; step aborted");
  opt_->zero_grad();
  loss.backward();
  opt_->step();
  ++net_->trained_steps;
  return value;
}

Array2<std::int32_t> SoftmaxMap::argmax() const {
  auto a = probs.argmax(0).to(torch::kInt).contiguous();
  Array2<std::int32_t> out(probs.size(1), probs.size(2));
  std::copy(a.data_ptr<std::int32_t>(), a.data_ptr<std::int32_t>() + a.numel(), out.data.begin());
  return out;
}

std::vector<SoftmaxMap> segment(SegNet& net, const torch::Tensor& images) {
  net->eval();
  torch::NoGradGuard ng;
  auto probs = torch::softmax(net->forward(images).to(torch::kDouble), 1);
  check_finite(probs, "segmentation probabilities");
  std::vector<SoftmaxMap> out;
  for (std::int64_t b = 0; b < probs.size(0); ++b) out.push_back(SoftmaxMap{probs[b].contiguous()});
  return out;
}

double entropy(const SoftmaxMap& m) {
  auto p = m.probs.to(torch::kDouble);
  if ((p < 0).any().item<bool>()) throw InvalidArgument("entropy: negative probability");
  auto terms = torch::where(p > 0, -p * torch::log(p), torch::zeros_like(p));
  return terms.sum().item<double>();
}

double dice(const Array2<std::int32_t>& a, const Array2<std::int32_t>& b, std::int32_t cls) {
  if (!a.same_shape(b)) throw InvalidArgument("Dice: label maps differ in shape");
  std::int64_t na = 0, nb = 0, both = 0;
  for (std::size_t n = 0; n < a.data.size(); ++n) {
    const bool in_a = a.data[n] == cls, in_b = b.data[n] == cls;
    na += in_a;
    nb += in_b;
    both += in_a && in_b;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

double overlap_from_labels(const Array2<std::int32_t>& reference, const Array2<std::int32_t>& other,
                           std::int32_t num_classes) {
  std::vector<bool> present(static_cast<std::size_t>(num_classes), false);
  bool other_foreground = false;
  for (std::size_t n = 0; n < reference.data.size(); ++n) {
    const auto r = reference.data[n];
    if (r < 0 || r >= num_classes) throw InvalidArgument("label outside class range");
    present[static_cast<std::size_t>(r)] = true;
    other_foreground = other_foreground || other.data[n] != 0;
  }
  double sum = 0.0;
  int count = 0;
  for (std::int32_t k = 1; k < num_classes; ++k) {
    if (!present[static_cast<std::size_t>(k)]) continue;
    sum += dice(reference, other, k);
    ++count;
  }
  if (count == 0) return other_foreground ? 0.0 : 1.0;
  return sum / count;
}

FidelityScores fidelity_scores(SegNet& net, const torch::Tensor& x, const torch::Tensor& x_hat) {
  if (!x.sizes().equals(x_hat.sizes())) throw InvalidArgument("fidelity: x and x_hat shapes differ");
  const auto mx = segment(net, x);
  const auto mh = segment(net, x_hat);
  const auto classes = static_cast<std::int32_t>(net->arch().num_classes);
  FidelityScores s;
  for (std::size_t b = 0; b < mx.size(); ++b) {
    s.quality.push_back(entropy(mx[b]) - entropy(mh[b]));
    s.overlap.push_back(overlap_from_labels(mx[b].argmax(), mh[b].argmax(), classes));
  }
  return s;
}

double quality_score(SegNet& net, const torch::Tensor& x, const torch::Tensor& x_hat) {
  return fidelity_scores(net, x, x_hat).quality.at(0);
}

double overlap_score(SegNet& net, const torch::Tensor& x, const torch::Tensor& x_hat) {
  return fidelity_scores(net, x, x_hat).overlap.at(0);
}

}  // namespace anomaly_recon::fidelity
