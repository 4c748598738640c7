#include <algorithm>
#include <cmath>
#include <random>

#include "anomaly_recon/data/phantom.hpp"
#include "anomaly_recon/data/preprocess.hpp"
#include "helpers.hpp"

#include "doctest_torch.hpp"

using namespace anomaly_recon;
using namespace anomaly_recon::data;

namespace {

// Cubic interpolant evaluated directly at a source-space point: weighted sum
// over the 4x4x4 neighbourhood with edge-clamped indices.
double cubic_at(const Grid3& g, double zk, double zi, double zj) {
  const auto bk = static_cast<std::int64_t>(std::floor(zk));
  const auto bi = static_cast<std::int64_t>(std::floor(zi));
  const auto bj = static_cast<std::int64_t>(std::floor(zj));
  double acc = 0.0;
  for (std::int64_t a = bk - 1; a <= bk + 2; ++a) {
    for (std::int64_t b = bi - 1; b <= bi + 2; ++b) {
      for (std::int64_t c = bj - 1; c <= bj + 2; ++c) {
        const double w = cubic_kernel(zk - static_cast<double>(a)) * cubic_kernel(zi - static_cast<double>(b)) *
                         cubic_kernel(zj - static_cast<double>(c));
        acc += w * g(std::clamp<std::int64_t>(a, 0, g.depth() - 1), std::clamp<std::int64_t>(b, 0, g.rows() - 1),
                     std::clamp<std::int64_t>(c, 0, g.cols() - 1));
      }
    }
  }
  return acc;
}

PhantomConfig blob_config(std::uint64_t seed, int blobs) {
  PhantomConfig cfg;
  cfg.seed = seed;
  cfg.anomaly_radius = {5.0, 5.0};
  cfg.intensity_offset = {0.5, 0.5};
  if (blobs > 0) cfg.anomaly_counts["metastatic_tumor_analog"] = {blobs, blobs};
  return cfg;
}

}  // namespace

TEST_SUITE("oracle") {

TEST_CASE("cubic resampling of a ramp matches the direct interpolant") {
  Volume v{Grid3(8, 8, 8), {1.0, 1.0, 1.0}, "ramp"};
  for (std::int64_t k = 0; k < 8; ++k) {
    for (std::int64_t i = 0; i < 8; ++i) {
      for (std::int64_t j = 0; j < 8; ++j) v.data(k, i, j) = 0.5 * k + 0.25 * i - 0.75 * j + 3.0;
    }
  }
  const auto r = resample_volume(v, {0.5, 0.5, 0.5});
  CHECK((r.data.shape == std::array<std::int64_t, 3>{15, 15, 15}));
  for (std::int64_t k = 0; k < 15; ++k) {
    for (std::int64_t i = 0; i < 15; ++i) {
      for (std::int64_t j = 0; j < 15; ++j) {
        CHECK(std::abs(r.data(k, i, j) - cubic_at(v.data, 0.5 * k, 0.5 * i, 0.5 * j)) < 1e-6);
        if (k >= 2 && k <= 12 && i >= 2 && i <= 12 && j >= 2 && j <= 12) {
          // Keys' kernel reproduces linear functions away from the edges.
          CHECK(std::abs(r.data(k, i, j) - (0.25 * k + 0.125 * i - 0.375 * j + 3.0)) < 1e-9);
        }
      }
    }
  }
}

TEST_CASE("histogram matching reproduces the reference distribution") {
  PhantomConfig cfg;
  cfg.seed = 5;
  const auto ph = generate_phantom(cfg, "p");
  std::vector<double> ref_vals;
  std::mt19937_64 rng(3);
  std::gamma_distribution<double> gd(4.0, 0.1);
  for (int n = 0; n < 50000; ++n) ref_vals.push_back(std::min(gd(rng), 1.5));
  const auto ref = IntensityHistogram::from_values(ref_vals, 512, 0.0, 1.5);
  const auto out = histogram_match(ph.volume, ref, 0.0);

  std::vector<double> matched;
  for (std::size_t n = 0; n < ph.volume.data.data.size(); ++n) {
    if (ph.volume.data.data[n] > 0.0) matched.push_back(out.data.data[n]);
  }
  std::sort(matched.begin(), matched.end());
  // Empirical CDF of the output against the reference CDF at every sample.
  double sup = 0.0;
  for (std::size_t r = 0; r < matched.size(); ++r) {
    const double x = matched[r];
    const double lo = static_cast<double>(std::lower_bound(matched.begin(), matched.end(), x) - matched.begin());
    const double hi = static_cast<double>(std::upper_bound(matched.begin(), matched.end(), x) - matched.begin());
    const double n = static_cast<double>(matched.size());
    const double f = ref.cdf(x);
    sup = std::max({sup, std::abs(f - lo / n), std::abs(f - hi / n)});
  }
  CHECK(sup < 0.02);
}

TEST_CASE("renormalisation matches the affine formula") {
  std::mt19937_64 rng(8);
  const auto img = test::random_image(13, 11, rng, -3.0, 7.0);
  const auto [lo, hi] = std::minmax_element(img.data.begin(), img.data.end());
  const auto s = renormalize(img, "r", 2);
  for (std::size_t n = 0; n < img.data.size(); ++n) {
    CHECK(s.data.data[n] == doctest::Approx((img.data[n] - *lo) / (*hi - *lo) * 2.0 - 1.0).epsilon(1e-12));
  }
  CHECK(s.index_k == 2);
}

TEST_CASE("inserted blobs raise the local intensity by the requested offset") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto with = generate_phantom(blob_config(seed, 1), "a");
    const auto without = generate_phantom(blob_config(seed, 0), "b");
    const auto& m = with.labels.at("metastatic_tumor_analog");
    double diff = 0.0, inside = 0.0, ring = 0.0;
    std::int64_t n_in = 0, n_ring = 0;
    const auto& a = with.anomalies.at(0);
    for (std::int64_t k = 0; k < m.depth(); ++k) {
      for (std::int64_t i = 0; i < m.rows(); ++i) {
        for (std::int64_t j = 0; j < m.cols(); ++j) {
          const double r = std::sqrt(std::pow(k - a.center[0], 2) + std::pow(i - a.center[1], 2) +
                                     std::pow(j - a.center[2], 2));
          if (m(k, i, j)) {
            diff += with.volume.data(k, i, j) - without.volume.data(k, i, j);
            inside += with.volume.data(k, i, j);
            ++n_in;
          } else if (r <= 1.6 * a.radius && with.labels.at("brain_analog")(k, i, j)) {
            ring += with.volume.data(k, i, j);
            ++n_ring;
          }
        }
      }
    }
    REQUIRE(n_in > 0);
    REQUIRE(n_ring > 0);
    CHECK(diff / static_cast<double>(n_in) == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(std::abs(inside / static_cast<double>(n_in) - ring / static_cast<double>(n_ring) - 0.5) < 0.15);
  }
}

}  // TEST_SUITE oracle

TEST_CASE("resampling geometry") {
  std::mt19937_64 rng(1);
  Volume v{Grid3(5, 6, 7), {1.0, 1.0, 1.0}, "v"};
  for (auto& x : v.data.data) x = std::uniform_real_distribution<double>(0, 1)(rng);
  CHECK(resample_volume(v, {1.0, 1.0, 1.0}).data == v.data);
  Volume thick = v;
  thick.spacing = {2.0, 1.0, 1.0};
  const auto r = resample_volume(thick, {1.0, 1.0, 1.0});
  CHECK(std::abs(r.data.depth() - 2 * v.data.depth()) <= 1);
  CHECK_THROWS_AS(resample_volume(v, {0.0, 1.0, 1.0}), InvalidArgument);
}

TEST_CASE("histogram matching special cases") {
  std::mt19937_64 rng(2);
  Volume v{Grid3(4, 10, 10), {1, 1, 1}, "v"};
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto& x : v.data.data) x = u(rng);
  const auto self = IntensityHistogram::from_values(v.data.data, 1000, 0.0, 1.0);
  const auto out = histogram_match(v, self);
  for (std::size_t n = 0; n < v.data.data.size(); ++n) {
    CHECK(std::abs(out.data.data[n] - v.data.data[n]) <= self.bin_width() + 1e-12);
  }

  Volume two{Grid3(1, 2, 5), {1, 1, 1}, "two"};
  for (std::size_t n = 0; n < 10; ++n) two.data.data[n] = n % 2 ? 100.0 : 0.0;
  std::vector<double> uni;
  for (int n = 0; n <= 1000; ++n) uni.push_back(n / 1000.0);
  const auto m = histogram_match(two, IntensityHistogram::from_values(uni, 100, 0.0, 1.0));
  for (std::size_t n = 0; n < 10; ++n) CHECK(m.data.data[n] == doctest::Approx(n % 2 ? 1.0 : 0.0).epsilon(0.02));

  Volume flat{Grid3(2, 3, 3, 4.0), {1, 1, 1}, "flat"};
  CHECK_THROWS_AS(histogram_match(flat, self), DegenerateInput);
}

TEST_CASE("slice decomposition crops and pads about the centre") {
  std::mt19937_64 rng(3);
  Volume big{Grid3(1, 300, 300), {1, 1, 1}, "big"};
  for (auto& x : big.data.data) x = std::uniform_real_distribution<double>(0, 1)(rng);
  const auto s = decompose_and_crop(big, 256);
  REQUIRE(s.size() == 1);
  CHECK(s[0].data(0, 0) == big.data(0, 22, 22));
  CHECK(s[0].data(255, 255) == big.data(0, 277, 277));

  Volume small{Grid3(1, 200, 200, 1.0), {1, 1, 1}, "small"};
  const auto p = decompose_and_crop(small, 256)[0].data;
  CHECK(p(27, 27) == 0.0);
  CHECK(p(28, 28) == 1.0);
  CHECK(p(227, 227) == 1.0);
  CHECK(p(228, 228) == 0.0);

  Volume exact{Grid3(3, 256, 256), {1, 1, 1}, "exact"};
  for (auto& x : exact.data.data) x = std::uniform_real_distribution<double>(0, 1)(rng);
  const auto e = decompose_and_crop(exact, 256);
  REQUIRE(e.size() == 3);
  for (std::int64_t k = 0; k < 3; ++k) CHECK(e[static_cast<std::size_t>(k)].data == exact.data.slice(k));
}

TEST_CASE("renormalisation reference values") {
  Image a(1, 3);
  a.data = {0.0, 5.0, 10.0};
  CHECK((renormalize(a).data.data == std::vector<double>{-1.0, 0.0, 1.0}));
  Image b(1, 3);
  b.data = {-1.0, 0.25, 1.0};
  CHECK(renormalize(b).data.data == b.data);
  CHECK_THROWS_AS(renormalize(Image(3, 3, 0.5)), DegenerateInput);
}

TEST_CASE("augmentation") {
  std::mt19937_64 rng(4);
  const auto img = test::random_image(16, 16, rng);
  CHECK(apply_augment(img, AugmentParams{}) == img);
  AugmentParams flip;
  flip.flip = true;
  const auto f = apply_augment(img, flip);
  for (std::int64_t i = 0; i < 16; ++i) {
    for (std::int64_t j = 0; j < 16; ++j) CHECK(f(i, j) == doctest::Approx(img(i, 15 - j)).epsilon(1e-12));
  }
  const Slice s{img, "s", 0};
  std::mt19937_64 r1(9), r2(9);
  CHECK(augment(s, r1).data == augment(s, r2).data);
  AugmentRanges none{0.0, 1.0, 1.0, 0.0};
  CHECK(draw_augment(rng, none).is_identity());
}

TEST_CASE("phantom generation") {
  PhantomConfig cfg;
  cfg.seed = 11;
  const auto a = generate_phantom(cfg, "a");
  const auto b = generate_phantom(cfg, "a");
  CHECK(a.volume.data == b.volume.data);
  for (auto cls : kAbnormalityClasses) {
    for (auto v : a.labels.at(cls).data) REQUIRE(v == 0);
  }
  std::int64_t zeros = 0;
  for (std::size_t n = 0; n < a.body.data.size(); ++n) {
    if (!a.body.data[n]) {
      REQUIRE(a.volume.data.data[n] == 0.0);
      ++zeros;
    }
  }
  CHECK(zeros > 0);
  for (auto cls : kAnatomyClasses) CHECK(a.labels.has(cls));

  cfg.anomaly_counts["cavity_analog"] = {2, 2};
  cfg.anomaly_counts["metastatic_tumor_analog"] = {1, 1};
  const auto c = generate_phantom(cfg, "c");
  CHECK(std::count_if(c.anomalies.begin(), c.anomalies.end(), [](const auto& r) { return r.cls == "cavity_analog"; }) == 2);
  CHECK(std::count_if(c.anomalies.begin(), c.anomalies.end(),
                      [](const auto& r) { return r.cls == "metastatic_tumor_analog"; }) == 1);

  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    PhantomConfig lesions;
    lesions.seed = seed;
    lesions.anomaly_counts["cavity_analog"] = {1, 1};
    lesions.anomaly_counts["metastatic_tumor_analog"] = {2, 2};
    const auto ph = generate_phantom(lesions, "l");
    const auto& brain = ph.labels.at("brain_analog").data;
    for (auto cls : {"cavity_analog", "metastatic_tumor_analog"}) {
      const auto& m = ph.labels.at(cls).data;
      for (std::size_t n = 0; n < m.size(); ++n) {
        if (m[n]) REQUIRE(brain[n] == 1);
      }
    }
  }

  PhantomConfig too_big;
  too_big.anomaly_radius = {40.0, 40.0};
  too_big.anomaly_counts["cavity_analog"] = {1, 1};
  CHECK_THROWS_AS(generate_phantom(too_big, "x"), InvalidArgument);
}
