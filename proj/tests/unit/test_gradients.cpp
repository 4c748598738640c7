#include "anomaly_recon/discriminative/embedding.hpp"
#include "anomaly_recon/fidelity/fidelity.hpp"
#include "anomaly_recon/recon/losses.hpp"
#include "anomaly_recon/recon/model.hpp"
#include "anomaly_recon/recon/trainer.hpp"
#include "helpers.hpp"

#include "doctest_torch.hpp"

using namespace anomaly_recon;

namespace {

constexpr double kTolerance = 1e-4;
constexpr std::int64_t kEntries = 60;

double scalar(const torch::Tensor& t) { return t.item<double>(); }

recon::ReconArch tiny_recon() {
  recon::ReconArch a;
  a.image_size = 8;
  a.encoder_filters = {3};
  a.decoder_filters = {3, 2};
  a.latent_channels = 2;
  return a;
}

torch::Tensor images(std::int64_t n, std::uint64_t seed) {
  torch::manual_seed(seed);
  return torch::rand({n, 1, 8, 8}, torch::kDouble) * 1.6 - 0.8;
}

std::vector<torch::Tensor> params_of(torch::nn::Module& m) { return m.parameters(); }

void report(const std::string& what, const test::GradCheck& g) {
  MESSAGE(what << ": relative error " << g.rel_error << " over " << g.entries << " entries");
  CHECK(g.entries > 0);
  CHECK(g.analytic_norm > 0.0);
  CHECK(g.rel_error < kTolerance);
}

}  // namespace

TEST_SUITE("gradient") {

TEST_CASE("L_AE with SSIM against finite differences") {
  std::mt19937_64 rng(1);
  const auto x = images(2, 1);
  auto x_hat = (images(2, 2) * 0.9).requires_grad_(true);
  const auto loss = recon::loss_ae(x, x_hat, 1.0);
  const auto g = torch::autograd::grad({loss}, {x_hat})[0];
  report("L_AE", test::finite_difference_check({x_hat}, {g}, [&] { return scalar(recon::loss_ae(x, x_hat, 1.0)); },
                                               128, rng));
}

TEST_CASE("L_REG against finite differences") {
  std::mt19937_64 rng(2);
  torch::manual_seed(2);
  auto mu = torch::randn({3, 2, 4, 4}, torch::kDouble).requires_grad_(true);
  auto logvar = (torch::randn({3, 2, 4, 4}, torch::kDouble) * 0.5).requires_grad_(true);
  auto sigma = torch::exp(0.5 * logvar.detach()).requires_grad_(true);
  const auto gl = torch::autograd::grad({recon::loss_reg_logvar(mu, logvar)}, {mu, logvar});
  report("L_REG(mu, logvar)",
         test::finite_difference_check({mu, logvar}, {gl[0], gl[1]},
                                       [&] { return scalar(recon::loss_reg_logvar(mu, logvar)); }, kEntries, rng));
  const auto gs = torch::autograd::grad({recon::loss_reg(mu, sigma)}, {sigma})[0];
  report("L_REG(sigma)",
         test::finite_difference_check({sigma}, {gs}, [&] { return scalar(recon::loss_reg(mu, sigma)); }, kEntries, rng));
}

TEST_CASE("VAE objective against finite differences") {
  std::mt19937_64 rng(3);
  torch::manual_seed(3);
  recon::ReconModel m(tiny_recon(), recon::TrainingMode::kVae, recon::ReconHyper{});
  m->to(torch::kDouble);
  const auto x = images(3, 4);
  const auto eps = torch::randn({3, 2, 4, 4}, torch::kDouble);
  const auto& h = m->hyper();
  const double s = h.effective_recon_scale(m->arch());
  const auto objective = [&] {
    torch::NoGradGuard ng;
    auto post = recon::encode(m, x);
    auto x_hat = recon::decode(m, recon::reparameterize(post.mu, post.sigma, eps));
    return scalar(h.vae_weight_ae * s * recon::loss_ae(x, x_hat, h.lambda_ssim) +
                  h.vae_weight_reg * recon::loss_reg_logvar(post.mu, post.logvar));
  };
  const auto g = recon::vae_gradients(m, x, eps);
  report("VAE encoder",
         test::finite_difference_check(params_of(*m->encoder), g.encoder, objective, kEntries, rng));
  report("VAE decoder",
         test::finite_difference_check(params_of(*m->decoder), g.decoder, objective, kEntries, rng));
}

TEST_CASE("introspective objectives against finite differences") {
  std::mt19937_64 rng(4);
  const auto x = images(3, 5);
  const auto eps = torch::randn({3, 2, 4, 4}, torch::kDouble);
  // A margin just above the starting L_REG(z') keeps the hinge active.
  recon::ReconHyper hyper;
  {
    torch::manual_seed(4);
    recon::ReconModel probe(tiny_recon(), recon::TrainingMode::kIntroVae, hyper);
    probe->to(torch::kDouble);
    hyper.margin = recon::introvae_gradients(probe, x, eps).report.l_reg_zprime + 1.0;
  }
  torch::manual_seed(4);
  recon::ReconModel m(tiny_recon(), recon::TrainingMode::kIntroVae, hyper);
  m->to(torch::kDouble);
  const auto& h = m->hyper();
  const double s = h.effective_recon_scale(m->arch());

  torch::Tensor z0, x_hat0;
  {
    torch::NoGradGuard ng;
    m->train();
    auto post = recon::encode(m, x);
    z0 = recon::reparameterize(post.mu, post.sigma, eps);
    x_hat0 = recon::decode(m, z0);
  }
  const auto g = recon::introvae_gradients(m, x, eps);
  REQUIRE(g.report.l_margin_zprime > 0.5);

  // Encoder: L_REG(E(x)) + alpha [m - L_REG(E(x_hat0))]^+ + beta s L_AE(x, D(z(theta_E))),
  // with the reconstruction fed back to E held at its starting value.
  const auto encoder_objective = [&] {
    torch::NoGradGuard ng;
    auto post = recon::encode(m, x);
    auto x_hat = recon::decode(m, recon::reparameterize(post.mu, post.sigma, eps));
    auto pp = recon::encode(m, x_hat0);
    return scalar(recon::loss_reg_logvar(post.mu, post.logvar) +
                  h.alpha * torch::relu(h.margin - recon::loss_reg_logvar(pp.mu, pp.logvar)) +
                  h.beta * s * recon::loss_ae(x, x_hat, h.lambda_ssim));
  };
  report("IntroVAE encoder",
         test::finite_difference_check(params_of(*m->encoder), g.encoder, encoder_objective, kEntries, rng));

  // Decoder: alpha L_REG(E(D(z0))) + beta s L_AE(x, D(z0)) with z0 fixed.
  const auto decoder_objective = [&] {
    torch::NoGradGuard ng;
    auto x_hat = recon::decode(m, z0);
    auto pp = recon::encode(m, x_hat);
    return scalar(h.alpha * recon::loss_reg_logvar(pp.mu, pp.logvar) +
                  h.beta * s * recon::loss_ae(x, x_hat, h.lambda_ssim));
  };
  report("IntroVAE decoder",
         test::finite_difference_check(params_of(*m->decoder), g.decoder, decoder_objective, kEntries, rng));
}

TEST_CASE("triplet loss against finite differences") {
  std::mt19937_64 rng(5);
  torch::manual_seed(5);
  disc::DiscArch a;
  a.patch_size = 8;
  a.filters = {3, 4};
  a.hidden = 8;
  a.embedding_dim = 4;
  disc::EmbeddingNet net(a);
  net->to(torch::kDouble);
  net->train();
  const auto patches = torch::rand({12, 1, 8, 8}, torch::kDouble) * 2.0 - 1.0;
  const auto loss_of = [&] {
    auto e = net->forward(patches);
    return disc::triplet_loss(e.slice(0, 0, 4), e.slice(0, 4, 8), e.slice(0, 8));
  };
  const auto loss = loss_of();
  REQUIRE(scalar(loss) > 0.0);
  const auto params = params_of(*net);
  const auto g = torch::autograd::grad({loss}, params, {}, false, false, true);
  report("triplet", test::finite_difference_check(params, g, [&] {
           torch::NoGradGuard ng;
           return scalar(loss_of());
         }, kEntries, rng));
}

TEST_CASE("soft Dice plus focal loss against finite differences") {
  std::mt19937_64 rng(6);
  torch::manual_seed(6);
  auto logits = (torch::randn({2, 4, 6, 6}, torch::kDouble) * 1.5).requires_grad_(true);
  const auto labels = torch::randint(0, 4, {2, 6, 6}, torch::kInt64);
  const fidelity::SegLossOptions opt;
  const auto g = torch::autograd::grad({fidelity::segmentation_loss(logits, labels, opt)}, {logits})[0];
  report("segmentation loss", test::finite_difference_check({logits}, {g}, [&] {
           return scalar(fidelity::segmentation_loss(logits, labels, opt));
         }, 144, rng));

  fidelity::SegArch sa;
  sa.image_size = 8;
  sa.filters = {3, 4};
  sa.num_classes = 3;
  fidelity::SegNet net(sa);
  net->to(torch::kDouble);
  net->train();
  const auto x = images(2, 7);
  const auto y = torch::randint(0, 3, {2, 8, 8}, torch::kInt64);
  const auto params = params_of(*net);
  const auto gn = torch::autograd::grad({fidelity::segmentation_loss(net->forward(x), y, opt)}, params, {}, false,
                                        false, true);
  report("segmentation network", test::finite_difference_check(params, gn, [&] {
           torch::NoGradGuard ng;
           return scalar(fidelity::segmentation_loss(net->forward(x), y, opt));
         }, kEntries, rng));
}

}  // TEST_SUITE gradient
