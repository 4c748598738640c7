#include <cmath>
#include <random>

#include "anomaly_recon/fidelity/fidelity.hpp"
#include "helpers.hpp"

#include "doctest_torch.hpp"

using namespace anomaly_recon;
using namespace anomaly_recon::fidelity;

namespace {

SegArch tiny_arch() {
  SegArch a;
  a.image_size = 8;
  a.filters = {3, 4};
  a.num_classes = 3;
  return a;
}

SoftmaxMap random_simplex(std::int64_t c, std::int64_t h, std::int64_t w, std::uint64_t seed) {
  torch::manual_seed(seed);
  auto logits = torch::randn({c, h, w}, torch::kDouble) * 2.0;
  return SoftmaxMap{torch::softmax(logits, 0)};
}

Array2<std::int32_t> labels_from(const std::vector<std::pair<int, int>>& pixels, std::int64_t n, std::int32_t cls) {
  Array2<std::int32_t> out(n, n, 0);
  for (auto [i, j] : pixels) out(i, j) = cls;
  return out;
}

}  // namespace

TEST_SUITE("oracle") {

TEST_CASE("entropy reference values") {
  auto onehot = torch::zeros({6, 16, 16}, torch::kDouble);
  onehot[2] = 1.0;
  CHECK(entropy(SoftmaxMap{onehot}) == doctest::Approx(0.0));
  auto uniform = torch::full({6, 256, 256}, 1.0 / 6.0, torch::kDouble);
  CHECK(entropy(SoftmaxMap{uniform}) == doctest::Approx(256.0 * 256.0 * std::log(6.0)).epsilon(1e-12));
  CHECK_THROWS_AS(entropy(SoftmaxMap{-uniform}), InvalidArgument);
}

TEST_CASE("entropy matches direct double-loop summation") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto m = random_simplex(6, 20, 17, seed);
    const auto acc = m.probs.accessor<double, 3>();
    double direct = 0.0;
    for (int c = 0; c < 6; ++c) {
      for (int i = 0; i < 20; ++i) {
        for (int j = 0; j < 17; ++j) {
          const double p = acc[c][i][j];
          if (p > 0.0) direct -= p * std::log(p);
        }
      }
    }
    CHECK(entropy(m) == doctest::Approx(direct).epsilon(1e-12));
    CHECK(std::abs(entropy(m) - direct) < 1e-8);
  }
}

TEST_CASE("Dice by pixel counting") {
  // Class-1 masks of 100 and 60 pixels sharing 40.
  std::vector<std::pair<int, int>> a_px, b_px;
  for (int n = 0; n < 100; ++n) a_px.push_back({n / 20, n % 20});          // rows 0-4
  for (int n = 60; n < 120; ++n) b_px.push_back({n / 20, n % 20});         // rows 3-5
  const auto a = labels_from(a_px, 20, 1), b = labels_from(b_px, 20, 1);
  CHECK(dice(a, b, 1) == doctest::Approx(2.0 * 40.0 / 160.0));
  CHECK(dice(a, b, 1) == doctest::Approx(0.5));
  CHECK(dice(a, a, 2) == 1.0);

  // Two classes: mean over the classes present in the reference.
  auto ref = a, other = b;
  ref(19, 19) = 2;
  ref(19, 18) = 2;
  other(19, 19) = 2;
  const double d2 = 2.0 * 1.0 / 3.0;
  CHECK(overlap_from_labels(ref, other, 3) == doctest::Approx((0.5 + d2) / 2.0));
}

TEST_CASE("overlap special cases") {
  std::vector<std::pair<int, int>> px{{1, 1}, {1, 2}, {2, 2}};
  const auto a = labels_from(px, 8, 1);
  CHECK(overlap_from_labels(a, a, 3) == 1.0);
  CHECK(overlap_from_labels(a, labels_from({{6, 6}}, 8, 2), 3) == 0.0);
  const Array2<std::int32_t> bg(8, 8, 0);
  CHECK(overlap_from_labels(bg, bg, 3) == 1.0);
  CHECK(overlap_from_labels(bg, a, 3) == 0.0);
}

TEST_CASE("soft Dice and focal loss match direct formulas") {
  torch::manual_seed(9);
  auto logits = torch::randn({2, 3, 5, 4}, torch::kDouble);
  auto labels = torch::randint(0, 3, {2, 5, 4}, torch::kLong);
  auto probs = torch::softmax(logits, 1);
  auto onehot = torch::one_hot(labels, 3).permute({0, 3, 1, 2}).to(torch::kDouble);
  const auto pa = probs.accessor<double, 4>();
  const auto ga = onehot.accessor<double, 4>();
  double dice_sum = 0.0;
  for (int c = 0; c < 3; ++c) {
    double inter = 0.0, sp = 0.0, sg = 0.0;
    for (int b = 0; b < 2; ++b) {
      for (int i = 0; i < 5; ++i) {
        for (int j = 0; j < 4; ++j) {
          inter += pa[b][c][i][j] * ga[b][c][i][j];
          sp += pa[b][c][i][j];
          sg += ga[b][c][i][j];
        }
      }
    }
    dice_sum += (2.0 * inter + 1e-5) / (sp + sg + 1e-5);
  }
  CHECK(soft_dice_loss(probs, onehot, 1e-5).item<double>() == doctest::Approx(1.0 - dice_sum / 3.0).epsilon(1e-12));

  const auto la = labels.accessor<std::int64_t, 3>();
  double focal = 0.0;
  for (int b = 0; b < 2; ++b) {
    for (int i = 0; i < 5; ++i) {
      for (int j = 0; j < 4; ++j) {
        const double pt = pa[b][la[b][i][j]][i][j];
        focal += -std::pow(1.0 - pt, 2.0) * std::log(pt);
      }
    }
  }
  CHECK(focal_loss(logits, labels, 2.0).item<double>() == doctest::Approx(focal / 40.0).epsilon(1e-12));
  CHECK(segmentation_loss(logits, labels).item<double>() ==
        doctest::Approx(1.0 - dice_sum / 3.0 + focal / 40.0).epsilon(1e-12));
}

}  // TEST_SUITE oracle

TEST_CASE("perfect prediction gives near-zero segmentation losses") {
  auto labels = torch::randint(0, 3, {2, 6, 6}, torch::kLong);
  auto logits = torch::one_hot(labels, 3).permute({0, 3, 1, 2}).to(torch::kDouble) * 40.0;
  auto probs = torch::softmax(logits, 1);
  auto onehot = torch::one_hot(labels, 3).permute({0, 3, 1, 2}).to(torch::kDouble);
  CHECK(soft_dice_loss(probs, onehot, 1e-5).item<double>() < 1e-9);
  CHECK(focal_loss(logits, labels, 2.0).item<double>() < 1e-9);
  CHECK_THROWS_AS(segmentation_loss(logits, labels + 3), InvalidArgument);
}

TEST_CASE("fidelity scores of a perfect reconstruction") {
  torch::manual_seed(10);
  SegNet net(tiny_arch());
  auto x = torch::rand({3, 1, 8, 8}) * 2 - 1;
  const auto f = fidelity_scores(net, x, x);
  for (double q : f.quality) CHECK(q == 0.0);
  for (double o : f.overlap) CHECK(o == 1.0);
}

TEST_CASE("zero learning rate leaves the segmentation net unchanged") {
  torch::manual_seed(11);
  SegNet net(tiny_arch());
  std::vector<torch::Tensor> before;
  for (const auto& p : net->parameters()) before.push_back(p.detach().clone());
  SegTrainer t(net, 0.0, 0.0);
  t.step(torch::rand({2, 1, 8, 8}), torch::randint(0, 3, {2, 8, 8}, torch::kLong));
  const auto after = net->parameters();
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(torch::equal(before[i], after[i]));
}
