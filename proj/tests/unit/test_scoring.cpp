#include <algorithm>
#include <cmath>
#include <deque>
#include <random>

#include "anomaly_recon/data/phantom.hpp"
#include "anomaly_recon/scoring/scoring.hpp"
#include "helpers.hpp"

#include "doctest_torch.hpp"

using namespace anomaly_recon;
using namespace anomaly_recon::scoring;

namespace {

double region_mean(const Image& img, const Mask2* m) {
  double s = 0.0;
  std::int64_t n = 0;
  for (std::size_t k = 0; k < img.data.size(); ++k) {
    if (m && !m->data[k]) continue;
    s += img.data[k];
    ++n;
  }
  return s / static_cast<double>(n);
}

double region_std(const Image& img, const Mask2* m) {
  const double mu = region_mean(img, m);
  double s = 0.0;
  std::int64_t n = 0;
  for (std::size_t k = 0; k < img.data.size(); ++k) {
    if (m && !m->data[k]) continue;
    s += (img.data[k] - mu) * (img.data[k] - mu);
    ++n;
  }
  return std::sqrt(s / static_cast<double>(n));
}

// Number of 26-connected components of a 3D mask.
int components(const Mask3& m) {
  std::vector<int> seen(m.data.size(), 0);
  int count = 0;
  for (std::size_t s = 0; s < m.data.size(); ++s) {
    if (!m.data[s] || seen[s]) continue;
    ++count;
    std::deque<std::size_t> q{s};
    seen[s] = 1;
    while (!q.empty()) {
      const auto n = q.front();
      q.pop_front();
      const auto k = static_cast<std::int64_t>(n) / m.plane();
      const auto i = (static_cast<std::int64_t>(n) / m.cols()) % m.rows();
      const auto j = static_cast<std::int64_t>(n) % m.cols();
      for (int dk = -1; dk <= 1; ++dk) {
        for (int di = -1; di <= 1; ++di) {
          for (int dj = -1; dj <= 1; ++dj) {
            const auto a = k + dk, b = i + di, c = j + dj;
            if (a < 0 || b < 0 || c < 0 || a >= m.depth() || b >= m.rows() || c >= m.cols()) continue;
            const auto idx = m.index(a, b, c);
            if (m.data[idx] && !seen[idx]) {
              seen[idx] = 1;
              q.push_back(idx);
            }
          }
        }
      }
    }
  }
  return count;
}

// True when every background pixel of every slice reaches the slice border
// through 4-connected background.
bool slices_hole_free(const Mask3& m) {
  for (std::int64_t k = 0; k < m.depth(); ++k) {
    const auto s = m.slice(k);
    std::vector<int> seen(s.data.size(), 0);
    std::deque<std::int64_t> q;
    for (std::int64_t i = 0; i < s.rows; ++i) {
      for (std::int64_t j = 0; j < s.cols; ++j) {
        const bool border = i == 0 || j == 0 || i == s.rows - 1 || j == s.cols - 1;
        if (border && !s(i, j)) {
          seen[static_cast<std::size_t>(i * s.cols + j)] = 1;
          q.push_back(i * s.cols + j);
        }
      }
    }
    while (!q.empty()) {
      const auto n = q.front();
      q.pop_front();
      const auto i = n / s.cols, j = n % s.cols;
      const std::int64_t nb[4][2] = {{i - 1, j}, {i + 1, j}, {i, j - 1}, {i, j + 1}};
      for (const auto& p : nb) {
        if (p[0] < 0 || p[1] < 0 || p[0] >= s.rows || p[1] >= s.cols) continue;
        const auto idx = static_cast<std::size_t>(p[0] * s.cols + p[1]);
        if (!s.data[idx] && !seen[idx]) {
          seen[idx] = 1;
          q.push_back(p[0] * s.cols + p[1]);
        }
      }
    }
    for (std::size_t n = 0; n < s.data.size(); ++n) {
      if (!s.data[n] && !seen[n]) return false;
    }
  }
  return true;
}

disc::EmbeddingNet tiny_net() {
  disc::DiscArch a;
  a.patch_size = 8;
  a.filters = {4, 4};
  a.hidden = 16;
  a.embedding_dim = 6;
  disc::EmbeddingNet net(a);
  net->trained_steps = 1;
  return net;
}

}  // namespace

TEST_SUITE("oracle") {

TEST_CASE("z-score reference values") {
  Image s(1, 3);
  s.data = {1.0, 2.0, 3.0};
  const auto z = zscore_normalize(s);
  CHECK(z.data[0] == doctest::Approx(-1.2247).epsilon(1e-4));
  CHECK(z.data[1] == doctest::Approx(0.0));
  CHECK(z.data[2] == doctest::Approx(1.2247).epsilon(1e-4));

  Image u(1, 4);
  u.data = {-1.0, 1.0, -1.0, 1.0};
  const auto zu = zscore_normalize(u);
  for (std::size_t n = 0; n < 4; ++n) CHECK(std::abs(zu.data[n] - u.data[n]) < 1e-9);
}

TEST_CASE("z-scored maps have zero mean and unit std in the region") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 10; ++trial) {
    const auto img = test::random_image(17, 23, rng, 0.0, 5.0);
    const auto z = zscore_normalize(img);
    CHECK(std::abs(region_mean(z, nullptr)) < 1e-9);
    CHECK(std::abs(region_std(z, nullptr) - 1.0) < 1e-9);

    Mask2 region(17, 23, 0);
    std::bernoulli_distribution b(0.4);
    for (auto& v : region.data) v = b(rng) ? 1 : 0;
    const auto zr = zscore_normalize(img, region);
    CHECK(std::abs(region_mean(zr, &region)) < 1e-9);
    CHECK(std::abs(region_std(zr, &region) - 1.0) < 1e-9);
    double lowest = 1e300;
    for (std::size_t n = 0; n < region.data.size(); ++n) {
      if (region.data[n]) lowest = std::min(lowest, zr.data[n]);
    }
    for (std::size_t n = 0; n < region.data.size(); ++n) {
      if (!region.data[n]) CHECK(zr.data[n] == lowest);
    }
  }
}

}  // TEST_SUITE oracle

TEST_CASE("z-score rejects degenerate regions") {
  CHECK_THROWS_AS(zscore_normalize(Image(4, 4, 2.0)), DegenerateInput);
  Mask2 one(4, 4, 0);
  one(1, 1) = 1;
  std::mt19937_64 rng(1);
  CHECK_THROWS_AS(zscore_normalize(test::random_image(4, 4, rng), one), DegenerateInput);
}

TEST_CASE("stride grid covers both ends") {
  CHECK((stride_grid(10, 4) == std::vector<std::int64_t>{0, 4, 8, 9}));
  CHECK((stride_grid(9, 4) == std::vector<std::int64_t>{0, 4, 8}));
  CHECK((stride_grid(5, 1) == std::vector<std::int64_t>{0, 1, 2, 3, 4}));
}

TEST_CASE("abnormality map of a perfect reconstruction is exactly zero") {
  torch::manual_seed(2);
  auto net = tiny_net();
  auto x = torch::rand({2, 1, 20, 20}) * 2 - 1;
  for (std::int64_t stride : {1, 3}) {
    for (const auto& m : abnormality_maps(net, x, x, stride)) {
      for (double v : m.data) CHECK(v == 0.0);
    }
  }
  auto untrained = tiny_net();
  untrained->trained_steps = 0;
  CHECK_THROWS_AS(abnormality_maps(untrained, x, x, 1), InvalidArgument);
}

TEST_CASE("strided maps agree with dense maps at grid nodes") {
  torch::manual_seed(3);
  auto net = tiny_net();
  auto x = torch::rand({1, 1, 18, 18}) * 2 - 1;
  auto y = torch::rand({1, 1, 18, 18}) * 2 - 1;
  const auto dense = abnormality_maps(net, x, y, 1)[0];
  const auto sparse = abnormality_maps(net, x, y, 4)[0];
  for (auto i : stride_grid(18, 4)) {
    for (auto j : stride_grid(18, 4)) CHECK(sparse(i, j) == doctest::Approx(dense(i, j)).epsilon(1e-5));
  }
  CHECK(sparse(2, 2) >= std::min({dense(0, 0), dense(0, 4), dense(4, 0), dense(4, 4)}) - 1e-6);
  CHECK(sparse(2, 2) <= std::max({dense(0, 0), dense(0, 4), dense(4, 0), dense(4, 4)}) + 1e-6);
}

TEST_CASE("body mask recovers the generator's body region") {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    data::PhantomConfig cfg;
    cfg.seed = seed;
    const auto ph = data::generate_phantom(cfg, "p");
    const auto m = body_mask(ph.volume);
    std::int64_t inter = 0, uni = 0;
    for (std::size_t n = 0; n < m.data.size(); ++n) {
      inter += (m.data[n] && ph.body.data[n]) ? 1 : 0;
      uni += (m.data[n] || ph.body.data[n]) ? 1 : 0;
    }
    CHECK(static_cast<double>(inter) / static_cast<double>(uni) >= 0.98);
    CHECK(components(m) == 1);
    CHECK(slices_hole_free(m));
  }
  data::Volume empty{Grid3(4, 8, 8, 0.0), {1, 1, 1}, "empty"};
  CHECK_THROWS_AS(body_mask(empty), DegenerateInput);
}

TEST_CASE("volume assembly") {
  std::mt19937_64 rng(4);
  std::vector<ScoreMap> slices;
  Grid3 vol(5, 6, 7);
  for (std::int64_t k = 0; k < 5; ++k) {
    const auto img = test::random_image(6, 7, rng);
    vol.set_slice(k, img);
    slices.push_back(ScoreMap::from_image(img, Normalization::kZScored, 2, k));
  }
  CHECK(volume_assemble(slices).scores == vol);
  CHECK(volume_assemble({slices[0]}).scores == slices[0].scores);
  auto shuffled = slices;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  CHECK(volume_assemble(shuffled).scores == vol);
  auto dup = slices;
  dup[1].index_k = 0;
  CHECK_THROWS_AS(volume_assemble(dup), InvalidArgument);
  auto gap = slices;
  gap.pop_back();
  gap[0].index_k = 7;
  CHECK_THROWS_AS(volume_assemble(gap), InvalidArgument);
}
