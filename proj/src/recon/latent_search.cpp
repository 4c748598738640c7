#include "anomaly_recon/recon/latent_search.hpp"

#include "anomaly_recon/error.hpp"
#include "anomaly_recon/recon/losses.hpp"

namespace anomaly_recon::recon {

namespace {

std::vector<double> to_vector(const torch::Tensor& t) {
  auto c = t.detach().to(torch::kDouble).contiguous();
  return {c.data_ptr<double>(), c.data_ptr<double>() + c.numel()};
}

}  // namespace

LatentSearchResult latent_search(ReconModel& model, const torch::Tensor& x, const LatentSearchOptions& opt) {
  if (opt.steps < 0) throw InvalidArgument("latent search steps must be >= 0");
  if (!(opt.lr > 0.0)) throw InvalidArgument("latent search learning rate must be > 0");
  model->eval();
  const double lambda = model->hyper().lambda_ssim;

  std::vector<torch::Tensor> params = model->parameters();
  std::vector<bool> grad_flags;
  for (auto& p : params) {
    grad_flags.push_back(p.requires_grad());
    p.requires_grad_(false);
  }

  LatentSearchResult r;
  try {
    Posterior post;
    {
      torch::NoGradGuard ng;
      post = encode(model, x);
    }
    r.mu = post.mu.detach();
    r.sigma = post.sigma.detach();
    auto z = r.mu.clone().requires_grad_(true);
    torch::optim::Adam adam({z}, torch::optim::AdamOptions(opt.lr));

    auto loss = loss_ae_per_sample(x, decode(model, z), lambda);
    const auto initial = loss.detach().clone();
    auto best_loss = initial.clone();
    auto best_z = z.detach().clone();
    auto current = initial.clone();
    for (int s = 0; s < opt.steps; ++s) {
      adam.zero_grad();
      loss.sum().backward();
      adam.step();
      loss = loss_ae_per_sample(x, decode(model, z), lambda);
      current = loss.detach();
      check_finite(current, "latent search loss");
      auto better = current < best_loss;
      best_loss = torch::where(better, current, best_loss);
      best_z = torch::where(better.view({-1, 1, 1, 1}), z.detach(), best_z);
    }

    auto diverged = current > opt.divergence_factor * initial;
    r.z = torch::where(diverged.view({-1, 1, 1, 1}), best_z, z.detach());
    {
      torch::NoGradGuard ng;
      r.x_hat = decode(model, r.z);
      r.final_loss = to_vector(loss_ae_per_sample(x, r.x_hat, lambda));
    }
    r.initial_loss = to_vector(initial);
    auto dv = diverged.to(torch::kDouble);
    for (double d : to_vector(dv)) r.diverged.push_back(d > 0.5);
  } catch (...) {
    for (std::size_t n = 0; n < params.size(); ++n) params[n].requires_grad_(grad_flags[n]);
    throw;
  }
  for (std::size_t n = 0; n < params.size(); ++n) params[n].requires_grad_(grad_flags[n]);
  return r;
}

}  // namespace anomaly_recon::recon
