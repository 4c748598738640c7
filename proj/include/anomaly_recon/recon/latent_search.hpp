#pragma once

#include <vector>

#include <torch/torch.h>

#include "anomaly_recon/recon/model.hpp"

namespace anomaly_recon::recon {

struct LatentSearchOptions {
  int steps = 100;
  double lr = 1e-3;
  // A slice whose loss exceeds this multiple of its initial loss is treated
  // as diverged and rolled back to its best iterate.
  double divergence_factor = 10.0;
};

struct LatentSearchResult {
  torch::Tensor z;      // batch x C' x 4 x 4, detached
  torch::Tensor x_hat;  // decode(z), detached
  torch::Tensor mu;
  torch::Tensor sigma;
  std::vector<double> initial_loss;  // L_AE at z_1 = mu per slice
  std::vector<double> final_loss;    // L_AE at the returned z per slice
  std::vector<bool> diverged;
};

/// Moves z from the encoder mean towards lower L_AE(x, decode(z)) with Adam
/// on z alone; the model is put in eval mode and its parameters are never
/// written. Slices in the batch are optimised independently. steps = 0 returns
/// the plain encoded reconstruction.
LatentSearchResult latent_search(ReconModel& model, const torch::Tensor& x, const LatentSearchOptions& opt = {});

}  // namespace anomaly_recon::recon
