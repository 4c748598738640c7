#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "anomaly_recon/array.hpp"

namespace test {

inline anomaly_recon::Image random_image(std::int64_t rows, std::int64_t cols, std::mt19937_64& rng, double lo = -1.0,
                                         double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  anomaly_recon::Image img(rows, cols);
  for (auto& v : img.data) v = u(rng);
  return img;
}

struct GradCheck {
  double rel_error = 0.0;
  double analytic_norm = 0.0;
  std::size_t entries = 0;
};

// Compares analytic gradients of `f` with central differences on up to
// `per_tensor` entries of every tensor in `params` (double precision). The
// error is ||g_a - g_fd|| / max(||g_a||, ||g_fd||) over the sampled entries.
inline GradCheck finite_difference_check(const std::vector<torch::Tensor>& params,
                                         const std::vector<torch::Tensor>& analytic,
                                         const std::function<double()>& f, std::int64_t per_tensor,
                                         std::mt19937_64& rng, double h = 1e-6) {
  double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
  GradCheck out;
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto flat = params[t].detach().view({-1});
    const auto ga = analytic[t].defined() ? analytic[t].detach().reshape({-1}) : torch::zeros_like(flat);
    const std::int64_t n = flat.numel();
    std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(static_cast<std::size_t>(std::min(n, per_tensor)));
    for (auto i : idx) {
      const double orig = flat[i].item<double>();
      {
        torch::NoGradGuard ng;
        flat[i] = orig + h;
      }
      const double fp = f();
      {
        torch::NoGradGuard ng;
        flat[i] = orig - h;
      }
      const double fm = f();
      {
        torch::NoGradGuard ng;
        flat[i] = orig;
      }
      const double num = (fp - fm) / (2.0 * h);
      const double ana = ga[i].item<double>();
      diff2 += (num - ana) * (num - ana);
      a2 += ana * ana;
      n2 += num * num;
      ++out.entries;
    }
  }
  const double denom = std::max(std::sqrt(std::max(a2, n2)), 1e-300);
  out.rel_error = std::sqrt(diff2) / denom;
  out.analytic_norm = std::sqrt(a2);
  return out;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("ar_test_" + tag + "_" + std::to_string(rd()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace test
