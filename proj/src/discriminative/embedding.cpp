#include "anomaly_recon/discriminative/embedding.hpp"

#include <algorithm>
#include <cmath>

#include "anomaly_recon/error.hpp"
#include "anomaly_recon/nn_blocks.hpp"

namespace anomaly_recon::disc {

namespace nn = torch::nn;
using nlohmann::json;

void DiscArch::validate() const {
  if (filters.empty()) throw InvalidArgument("embedding net needs at least one block");
  const std::int64_t reduction = std::int64_t{1} << filters.size();
  if (patch_size <= 0 || patch_size % reduction != 0) {
    throw InvalidArgument("patch size " + std::to_string(patch_size) + " is not divisible by " +
                          std::to_string(reduction));
  }
  for (auto f : filters) if (f <= 0) throw InvalidArgument("filter counts must be positive");
  if (hidden <= 0 || embedding_dim <= 0) throw InvalidArgument("MLP sizes must be positive");
}

json DiscArch::to_json() const {
  return {{"patch_size", patch_size}, {"filters", filters}, {"hidden", hidden}, {"embedding_dim", embedding_dim}};
}

DiscArch DiscArch::from_json(const json& j) {
  DiscArch a;
  a.patch_size = j.value("patch_size", a.patch_size);
  a.filters = j.value("filters", a.filters);
  a.hidden = j.value("hidden", a.hidden);
  a.embedding_dim = j.value("embedding_dim", a.embedding_dim);
  a.validate();
  return a;
}

void TripletOptions::validate() const {
  if (patch_size <= 0) throw InvalidArgument("patch size must be positive");
  if (max_shift < 0) throw InvalidArgument("max shift must be >= 0");
  if (scale_jitter < 0 || scale_jitter >= 1) throw InvalidArgument("scale jitter must be in [0, 1)");
  if (intensity_scale_jitter < 0 || intensity_offset_jitter < 0) {
    throw InvalidArgument("intensity jitter must be >= 0");
  }
  if (min_negative_distance < 0) throw InvalidArgument("negative distance must be >= 0");
}

json TripletOptions::to_json() const {
  return {{"patch_size", patch_size},
          {"max_shift", max_shift},
          {"scale_jitter", scale_jitter},
          {"intensity_scale_jitter", intensity_scale_jitter},
          {"intensity_offset_jitter", intensity_offset_jitter},
          {"min_negative_distance", min_negative_distance},
          {"body_threshold", body_threshold}};
}

TripletOptions TripletOptions::from_json(const json& j) {
  TripletOptions o;
  o.patch_size = j.value("patch_size", o.patch_size);
  o.max_shift = j.value("max_shift", o.max_shift);
  o.scale_jitter = j.value("scale_jitter", o.scale_jitter);
  o.intensity_scale_jitter = j.value("intensity_scale_jitter", o.intensity_scale_jitter);
  o.intensity_offset_jitter = j.value("intensity_offset_jitter", o.intensity_offset_jitter);
  o.min_negative_distance = j.value("min_negative_distance", o.min_negative_distance);
  o.body_threshold = j.value("body_threshold", o.body_threshold);
  o.validate();
  return o;
}

EmbeddingNetImpl::EmbeddingNetImpl(DiscArch arch) : arch_(std::move(arch)) {
  arch_.validate();
  blocks_ = register_module("blocks", nn::ModuleList());
  std::int64_t in = 1;
  for (auto f : arch_.filters) {
    blocks_->push_back(ResidualBlock(in, f, Activation::kRelu));
    in = f;
  }
  const std::int64_t side = arch_.patch_size >> arch_.filters.size();
  hidden_ = register_module("hidden", nn::Linear(in * side * side, arch_.hidden));
  out_ = register_module("out", nn::Linear(arch_.hidden, arch_.embedding_dim));
  he_init(*this);
}

torch::Tensor EmbeddingNetImpl::forward(const torch::Tensor& patches) {
  if (patches.dim() != 4 || patches.size(1) != 1 || patches.size(2) != arch_.patch_size ||
      patches.size(3) != arch_.patch_size) {
    throw InvalidArgument("embedding net expects batch x 1 x " + std::to_string(arch_.patch_size) + " x " +
                          std::to_string(arch_.patch_size) + " patches");
  }
  auto h = patches;
  for (const auto& b : *blocks_) h = torch::max_pool2d(b->as<ResidualBlock>()->forward(h), 2);
  h = torch::relu(hidden_->forward(h.flatten(1)));
  return out_->forward(h);
}

namespace {

// Source coordinate of patch pixel u for a window centred at c (pixel-edge
// convention: the unscaled window starts at c - P/2).
double source_coord(double c, std::int64_t u, std::int64_t size, double scale) {
  return c - 0.5 + scale * (static_cast<double>(u) - static_cast<double>(size) / 2.0 + 0.5);
}

double sample_bilinear(const Image& img, double i, double j) {
  i = std::clamp(i, 0.0, static_cast<double>(img.rows - 1));
  j = std::clamp(j, 0.0, static_cast<double>(img.cols - 1));
  const auto i0 = static_cast<std::int64_t>(std::floor(i));
  const auto j0 = static_cast<std::int64_t>(std::floor(j));
  const auto i1 = std::min(i0 + 1, img.rows - 1);
  const auto j1 = std::min(j0 + 1, img.cols - 1);
  const double di = i - static_cast<double>(i0);
  const double dj = j - static_cast<double>(j0);
  return (1 - di) * ((1 - dj) * img(i0, j0) + dj * img(i0, j1)) + di * ((1 - dj) * img(i1, j0) + dj * img(i1, j1));
}

}  // namespace

Image crop_patch(const Image& img, double ci, double cj, std::int64_t size, double scale) {
  Image out(size, size);
  for (std::int64_t u = 0; u < size; ++u) {
    const double si = source_coord(ci, u, size, scale);
    for (std::int64_t v = 0; v < size; ++v) out(u, v) = sample_bilinear(img, si, source_coord(cj, v, size, scale));
  }
  return out;
}

std::vector<std::int64_t> valid_centres(const Image& img, const TripletOptions& opt) {
  opt.validate();
  const double s = 1.0 + opt.scale_jitter;
  const double d = static_cast<double>(opt.max_shift);
  const double reach_lo = source_coord(0.0, 0, opt.patch_size, s) - d;
  const double reach_hi = source_coord(0.0, opt.patch_size - 1, opt.patch_size, s) + d;
  auto in_bounds = [&](std::int64_t c, std::int64_t n) {
    return static_cast<double>(c) + reach_lo >= 0.0 && static_cast<double>(c) + reach_hi <= static_cast<double>(n - 1);
  };
  std::vector<std::int64_t> out;
  for (std::int64_t i = 0; i < img.rows; ++i) {
    if (!in_bounds(i, img.rows)) continue;
    for (std::int64_t j = 0; j < img.cols; ++j) {
      if (in_bounds(j, img.cols) && img(i, j) > -1.0 + opt.body_threshold) out.push_back(i * img.cols + j);
    }
  }
  return out;
}

Triplet sample_triplet(const Slice& s, std::mt19937_64& rng, const TripletOptions& opt) {
  return sample_triplet(s, valid_centres(s.data, opt), rng, opt);
}

Triplet sample_triplet(const Slice& s, const std::vector<std::int64_t>& centres, std::mt19937_64& rng,
                       const TripletOptions& opt) {
  if (centres.empty()) throw DegenerateInput("slice " + s.source_id + ":" + std::to_string(s.index_k) +
                                             " has no body region for patch sampling");
  const std::int64_t cols = s.data.cols;
  std::uniform_int_distribution<std::size_t> pick(0, centres.size() - 1);
  std::uniform_real_distribution<double> sym(-1.0, 1.0);
  std::uniform_int_distribution<std::int64_t> shift(-opt.max_shift, opt.max_shift);

  Triplet t;
  const std::int64_t a = centres[pick(rng)];
  const std::int64_t ai = a / cols, aj = a % cols;
  t.anchor = Patch{crop_patch(s.data, static_cast<double>(ai), static_cast<double>(aj), opt.patch_size), ai, aj,
                   s.source_id};

  const std::int64_t di = shift(rng), dj = shift(rng);
  const double scale = 1.0 + opt.scale_jitter * sym(rng);
  const double gain = 1.0 + opt.intensity_scale_jitter * sym(rng);
  const double offset = opt.intensity_offset_jitter * sym(rng);
  Image pos = crop_patch(s.data, static_cast<double>(ai + di), static_cast<double>(aj + dj), opt.patch_size, scale);
  for (double& v : pos.data) v = std::clamp(gain * v + offset, -1.0, 1.0);
  t.positive = Patch{std::move(pos), ai + di, aj + dj, s.source_id};

  const double min_d2 = opt.min_negative_distance * opt.min_negative_distance;
  for (int attempt = 0; attempt < 10000; ++attempt) {
    const std::int64_t n = centres[pick(rng)];
    const double ni = static_cast<double>(n / cols - ai), nj = static_cast<double>(n % cols - aj);
    if (ni * ni + nj * nj < min_d2) continue;
    t.negative = Patch{crop_patch(s.data, static_cast<double>(n / cols), static_cast<double>(n % cols), opt.patch_size),
                       n / cols, n % cols, s.source_id};
    return t;
  }
  throw DegenerateInput("no negative centre at least " + std::to_string(opt.min_negative_distance) +
                        " px from the anchor in slice " + s.source_id);
}

torch::Tensor to_tensor(const std::vector<const Image*>& patches) {
  if (patches.empty()) throw InvalidArgument("empty patch batch");
  const auto rows = patches.front()->rows, cols = patches.front()->cols;
  auto out = torch::empty({static_cast<std::int64_t>(patches.size()), 1, rows, cols}, torch::kFloat);
  auto* dst = out.data_ptr<float>();
  for (const Image* p : patches) {
    if (p->rows != rows || p->cols != cols) throw InvalidArgument("patch sizes differ within a batch");
    dst = std::transform(p->data.begin(), p->data.end(), dst, [](double v) { return static_cast<float>(v); });
  }
  return out;
}

torch::Tensor embedding_distance(const torch::Tensor& a, const torch::Tensor& b) {
  if (!a.sizes().equals(b.sizes()) || a.dim() != 2) throw InvalidArgument("embedding shapes differ");
  return torch::linalg_vector_norm(a - b, 2, {1});
}

torch::Tensor triplet_loss(const torch::Tensor& a, const torch::Tensor& p, const torch::Tensor& n) {
  if (!a.sizes().equals(p.sizes()) || !a.sizes().equals(n.sizes()) || a.dim() != 2) {
    throw InvalidArgument("triplet embeddings must share one batch x D shape");
  }
  return torch::relu(embedding_distance(a, p) - embedding_distance(a, n) + 1.0).mean();
}

double triplet_accuracy(EmbeddingNet& net, const std::vector<Triplet>& triplets) {
  if (triplets.empty()) throw InvalidArgument("no triplets to score");
  std::vector<const Image*> a, p, n;
  for (const auto& t : triplets) {
    a.push_back(&t.anchor.data);
    p.push_back(&t.positive.data);
    n.push_back(&t.negative.data);
  }
  const auto ea = embed(net, to_tensor(a));
  const auto correct = embedding_distance(ea, embed(net, to_tensor(p))) < embedding_distance(ea, embed(net, to_tensor(n)));
  return correct.to(torch::kDouble).mean().item<double>();
}

torch::Tensor embed(EmbeddingNet& net, const torch::Tensor& patches) {
  net->eval();
  torch::NoGradGuard ng;
  auto e = net->forward(patches);
  check_finite(e, "patch embedding");
  return e;
}

DiscTrainer::DiscTrainer(EmbeddingNet net, double lr) : net_(std::move(net)) {
  if (lr < 0) throw InvalidArgument("learning rate must be >= 0");
  opt_ = std::make_unique<torch::optim::Adam>(net_->parameters(), torch::optim::AdamOptions(lr));
}

double DiscTrainer::step(const torch::Tensor& anchors, const torch::Tensor& positives, const torch::Tensor& negatives) {
  net_->train();
  const auto b = anchors.size(0);
  if (positives.size(0) != b || negatives.size(0) != b) throw InvalidArgument("triplet batch sizes differ");
  // One forward pass so batch-norm statistics see all three roles together.
  auto e = net_->forward(torch::cat({anchors, positives, negatives}));
  auto loss = triplet_loss(e.slice(0, 0, b), e.slice(0, b, 2 * b), e.slice(0, 2 * b));
  const double value = loss.item<double>();
  if (!std::isfinite(value)) throw NumericFailure("triplet loss is not finite; step aborted");
  opt_->zero_grad();
  loss.backward();
  opt_->step();
  ++net_->trained_steps;
  return value;
}

}  // namespace anomaly_recon::disc
