#include "anomaly_recon/scoring/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

#include "anomaly_recon/error.hpp"

namespace anomaly_recon::scoring {

std::string to_string(Normalization n) { return n == Normalization::kRaw ? "raw" : "zscored"; }

Normalization normalization_from_string(const std::string& s) {
  if (s == "raw") return Normalization::kRaw;
  if (s == "zscored") return Normalization::kZScored;
  throw InvalidArgument("unknown normalization '" + s + "'");
}

ScoreMap ScoreMap::from_image(Image img, Normalization n, std::int64_t stride, std::int64_t index_k) {
  ScoreMap m;
  m.scores = Grid3(1, img.rows, img.cols);
  m.scores.data = std::move(img.data);
  m.normalization = n;
  m.stride = stride;
  m.index_k = index_k;
  return m;
}

Image ScoreMap::image() const {
  if (scores.depth() != 1) throw InvalidArgument("score map holds a volume, not a slice");
  return scores.slice(0);
}

std::vector<std::int64_t> stride_grid(std::int64_t n, std::int64_t stride) {
  if (n <= 0 || stride <= 0) throw InvalidArgument("stride grid needs positive extent and stride");
  std::vector<std::int64_t> g;
  for (std::int64_t c = 0; c < n; c += stride) g.push_back(c);
  if (g.back() != n - 1) g.push_back(n - 1);
  return g;
}

torch::Tensor images_to_tensor(const std::vector<const Image*>& images) {
  if (images.empty()) throw InvalidArgument("empty image batch");
  const auto rows = images.front()->rows, cols = images.front()->cols;
  auto out = torch::empty({static_cast<std::int64_t>(images.size()), 1, rows, cols}, torch::kFloat);
  auto* dst = out.data_ptr<float>();
  for (const Image* im : images) {
    if (im->rows != rows || im->cols != cols) throw InvalidArgument("image sizes differ within a batch");
    dst = std::transform(im->data.begin(), im->data.end(), dst, [](double v) { return static_cast<float>(v); });
  }
  return out;
}

std::vector<Image> tensor_to_images(const torch::Tensor& t) {
  if (t.dim() != 4 || t.size(1) != 1) throw InvalidArgument("expected batch x 1 x H x W tensor");
  auto c = t.detach().to(torch::kDouble).contiguous();
  std::vector<Image> out;
  const auto rows = c.size(2), cols = c.size(3);
  for (std::int64_t b = 0; b < c.size(0); ++b) {
    Image im(rows, cols);
    const double* src = c[b].data_ptr<double>();
    std::copy(src, src + rows * cols, im.data.begin());
    out.push_back(std::move(im));
  }
  return out;
}

namespace {

// Bilinear interpolation of node values (gi x gj) onto the full grid.
Image interpolate_nodes(const std::vector<double>& nodes, const std::vector<std::int64_t>& gi,
                        const std::vector<std::int64_t>& gj, std::int64_t rows, std::int64_t cols) {
  auto locate = [](const std::vector<std::int64_t>& g, std::int64_t x, std::size_t& lo, double& w) {
    auto it = std::upper_bound(g.begin(), g.end(), x);
    std::size_t hi = static_cast<std::size_t>(it - g.begin());
    if (hi >= g.size()) hi = g.size() - 1;
    lo = hi == 0 ? 0 : hi - 1;
    if (hi == lo) {
      w = 0.0;
      return;
    }
    w = static_cast<double>(x - g[lo]) / static_cast<double>(g[hi] - g[lo]);
  };
  const std::size_t nj = gj.size();
  Image out(rows, cols);
  for (std::int64_t i = 0; i < rows; ++i) {
    std::size_t a;
    double wi;
    locate(gi, i, a, wi);
    const std::size_t a1 = std::min(a + 1, gi.size() - 1);
    for (std::int64_t j = 0; j < cols; ++j) {
      std::size_t b;
      double wj;
      locate(gj, j, b, wj);
      const std::size_t b1 = std::min(b + 1, nj - 1);
      const double top = (1 - wj) * nodes[a * nj + b] + wj * nodes[a * nj + b1];
      const double bot = (1 - wj) * nodes[a1 * nj + b] + wj * nodes[a1 * nj + b1];
      out(i, j) = (1 - wi) * top + wi * bot;
    }
  }
  return out;
}

torch::Tensor grid_patches(const torch::Tensor& images, std::int64_t p, const torch::Tensor& gi,
                           const torch::Tensor& gj) {
  const std::int64_t half = p / 2;
  auto padded = torch::reflection_pad2d(images, {half, half, half, half});
  auto windows = padded.unfold(2, p, 1).unfold(3, p, 1);  // B x 1 x (H+1) x (W+1) x P x P
  windows = windows.index_select(2, gi).index_select(3, gj);
  return windows.permute({0, 2, 3, 1, 4, 5}).reshape({-1, 1, p, p}).contiguous();
}

torch::Tensor embed_chunked(disc::EmbeddingNet& net, const torch::Tensor& patches, std::int64_t chunk) {
  std::vector<torch::Tensor> parts;
  for (std::int64_t s = 0; s < patches.size(0); s += chunk) {
    parts.push_back(disc::embed(net, patches.slice(0, s, std::min(s + chunk, patches.size(0)))));
  }
  return torch::cat(parts);
}

}  // namespace

std::vector<Image> abnormality_maps(disc::EmbeddingNet& net, const torch::Tensor& x, const torch::Tensor& x_hat,
                                    std::int64_t stride, std::int64_t chunk) {
  if (net->trained_steps <= 0) throw InvalidArgument("abnormality map requires a trained discriminative network");
  if (!x.sizes().equals(x_hat.sizes()) || x.dim() != 4 || x.size(1) != 1) {
    throw InvalidArgument("abnormality map expects aligned batch x 1 x H x W inputs");
  }
  if (chunk <= 0) throw InvalidArgument("chunk size must be positive");
  const std::int64_t p = net->arch().patch_size;
  const std::int64_t rows = x.size(2), cols = x.size(3);
  if (p / 2 >= rows || p / 2 >= cols) throw InvalidArgument("patch size too large for reflective padding");
  const auto gi = stride_grid(rows, stride), gj = stride_grid(cols, stride);
  const auto ti = torch::tensor(gi, torch::kLong), tj = torch::tensor(gj, torch::kLong);

  const auto fx = embed_chunked(net, grid_patches(x.to(torch::kFloat), p, ti, tj), chunk);
  const auto fh = embed_chunked(net, grid_patches(x_hat.to(torch::kFloat), p, ti, tj), chunk);
  auto d = disc::embedding_distance(fx.to(torch::kDouble), fh.to(torch::kDouble)).contiguous();

  const auto per_image = static_cast<std::int64_t>(gi.size() * gj.size());
  std::vector<Image> out;
  const double* src = d.data_ptr<double>();
  for (std::int64_t b = 0; b < x.size(0); ++b) {
    std::vector<double> nodes(src + b * per_image, src + (b + 1) * per_image);
    out.push_back(interpolate_nodes(nodes, gi, gj, rows, cols));
  }
  return out;
}

ScoreMap abnormality_map(disc::EmbeddingNet& net, const Image& x, const Image& x_hat, std::int64_t stride) {
  auto maps = abnormality_maps(net, images_to_tensor({&x}), images_to_tensor({&x_hat}), stride);
  return ScoreMap::from_image(std::move(maps.front()), Normalization::kRaw, stride, 0);
}

Image l1_residual_map(const Image& x, const Image& x_hat) {
  if (!x.same_shape(x_hat)) throw InvalidArgument("L1 residual: shapes differ");
  Image out(x.rows, x.cols);
  for (std::size_t n = 0; n < x.data.size(); ++n) out.data[n] = std::abs(x.data[n] - x_hat.data[n]);
  return out;
}

Image zscore_normalize(const Image& scores, const std::optional<Mask2>& region) {
  if (region && !region->same_shape(Mask2(scores.rows, scores.cols))) {
    throw InvalidArgument("z-score region shape differs from the map");
  }
  auto inside = [&](std::size_t n) { return !region || region->data[n] != 0; };
  double sum = 0.0;
  std::int64_t count = 0;
  for (std::size_t n = 0; n < scores.data.size(); ++n) {
    if (!inside(n)) continue;
    if (!std::isfinite(scores.data[n])) throw InvalidArgument("non-finite score");
    sum += scores.data[n];
    ++count;
  }
  if (count < 2) throw DegenerateInput("z-score region needs at least two pixels");
  const double mean = sum / static_cast<double>(count);
  double ss = 0.0;
  for (std::size_t n = 0; n < scores.data.size(); ++n) {
    if (inside(n)) ss += (scores.data[n] - mean) * (scores.data[n] - mean);
  }
  const double sd = std::sqrt(ss / static_cast<double>(count));
  if (!(sd > 0.0)) throw DegenerateInput("z-score region has zero variance");
  Image out(scores.rows, scores.cols);
  double lowest = std::numeric_limits<double>::infinity();
  for (std::size_t n = 0; n < scores.data.size(); ++n) {
    if (!inside(n)) continue;
    out.data[n] = (scores.data[n] - mean) / sd;
    lowest = std::min(lowest, out.data[n]);
  }
  for (std::size_t n = 0; n < scores.data.size(); ++n) {
    if (!inside(n)) out.data[n] = lowest;
  }
  return out;
}

ScoreMap zscore_normalize(const ScoreMap& m, const std::optional<Mask2>& region) {
  auto out = ScoreMap::from_image(zscore_normalize(m.image(), region), Normalization::kZScored, m.stride, m.index_k);
  return out;
}

Mask3 body_mask(const data::Volume& v) {
  const Grid3& g = v.data;
  std::vector<double> nonzero;
  for (double x : g.data) if (x != 0.0) nonzero.push_back(x);
  if (nonzero.empty()) throw DegenerateInput("volume " + v.id + " has no nonzero voxels");
  const auto p5 = static_cast<std::ptrdiff_t>(0.05 * static_cast<double>(nonzero.size() - 1));
  std::nth_element(nonzero.begin(), nonzero.begin() + p5, nonzero.end());
  const double threshold = nonzero[static_cast<std::size_t>(p5)];

  const auto K = g.depth(), I = g.rows(), J = g.cols();
  std::vector<int> comp(g.data.size(), -1);
  std::vector<std::int64_t> sizes;
  std::deque<std::size_t> queue;
  for (std::size_t seed = 0; seed < g.data.size(); ++seed) {
    if (g.data[seed] <= threshold || comp[seed] >= 0) continue;
    const int id = static_cast<int>(sizes.size());
    sizes.push_back(0);
    comp[seed] = id;
    queue.push_back(seed);
    while (!queue.empty()) {
      const auto n = static_cast<std::int64_t>(queue.front());
      queue.pop_front();
      ++sizes.back();
      const std::int64_t k = n / (I * J), i = (n / J) % I, j = n % J;
      for (std::int64_t dk = -1; dk <= 1; ++dk)
        for (std::int64_t di = -1; di <= 1; ++di)
          for (std::int64_t dj = -1; dj <= 1; ++dj) {
            const auto kk = k + dk, ii = i + di, jj = j + dj;
            if (kk < 0 || kk >= K || ii < 0 || ii >= I || jj < 0 || jj >= J) continue;
            const std::size_t m = g.index(kk, ii, jj);
            if (comp[m] < 0 && g.data[m] > threshold) {
              comp[m] = id;
              queue.push_back(m);
            }
          }
    }
  }
  if (sizes.empty()) throw DegenerateInput("body mask of volume " + v.id + " is empty");
  const int largest = static_cast<int>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());

  Mask3 mask(K, I, J);
  for (std::size_t n = 0; n < mask.data.size(); ++n) mask.data[n] = comp[n] == largest ? 1 : 0;

  // Fill holes slice by slice: background not reachable from the border.
  for (std::int64_t k = 0; k < K; ++k) {
    std::vector<std::uint8_t> outside(static_cast<std::size_t>(I * J), 0);
    auto visit = [&](std::int64_t i, std::int64_t j) {
      const auto n = static_cast<std::size_t>(i * J + j);
      if (outside[n] || mask(k, i, j)) return;
      outside[n] = 1;
      queue.push_back(n);
    };
    for (std::int64_t i = 0; i < I; ++i) {
      visit(i, 0);
      visit(i, J - 1);
    }
    for (std::int64_t j = 0; j < J; ++j) {
      visit(0, j);
      visit(I - 1, j);
    }
    while (!queue.empty()) {
      const auto n = static_cast<std::int64_t>(queue.front());
      queue.pop_front();
      const std::int64_t i = n / J, j = n % J;
      if (i > 0) visit(i - 1, j);
      if (i + 1 < I) visit(i + 1, j);
      if (j > 0) visit(i, j - 1);
      if (j + 1 < J) visit(i, j + 1);
    }
    for (std::int64_t i = 0; i < I; ++i)
      for (std::int64_t j = 0; j < J; ++j)
        if (!outside[static_cast<std::size_t>(i * J + j)]) mask(k, i, j) = 1;
  }
  return mask;
}

ScoreMap volume_assemble(const std::vector<ScoreMap>& slices) {
  if (slices.empty()) throw InvalidArgument("no slices to assemble");
  const auto depth = static_cast<std::int64_t>(slices.size());
  const auto& first = slices.front().scores;
  ScoreMap out;
  out.scores = Grid3(depth, first.rows(), first.cols());
  out.normalization = slices.front().normalization;
  out.stride = slices.front().stride;
  std::vector<bool> seen(slices.size(), false);
  for (const auto& s : slices) {
    if (s.scores.depth() != 1 || s.scores.rows() != first.rows() || s.scores.cols() != first.cols()) {
      throw InvalidArgument("slice maps differ in shape");
    }
    if (s.index_k < 0 || s.index_k >= depth) {
      throw InvalidArgument("slice index " + std::to_string(s.index_k) + " outside 0.." + std::to_string(depth - 1));
    }
    if (seen[static_cast<std::size_t>(s.index_k)]) {
      throw InvalidArgument("duplicate slice index " + std::to_string(s.index_k));
    }
    seen[static_cast<std::size_t>(s.index_k)] = true;
    out.scores.set_slice(s.index_k, s.image());
  }
  return out;
}

}  // namespace anomaly_recon::scoring
