#include "anomaly_recon/data/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace anomaly_recon::data {

double cubic_kernel(double t) {
  constexpr double a = -0.5;
  t = std::abs(t);
  if (t < 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
  if (t < 2.0) return ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a;
  return 0.0;
}

namespace {

std::int64_t resampled_extent(std::int64_t n, double s, double target) {
  if (n <= 1) return n;
  return static_cast<std::int64_t>(std::floor(static_cast<double>(n - 1) * s / target + 1e-9)) + 1;
}

// 1D cubic resample along `axis` of a C-order grid.
Grid3 resample_axis(const Grid3& in, int axis, double step) {
  const std::int64_t n = in.shape[static_cast<std::size_t>(axis)];
  const std::int64_t m = n <= 1 ? n : static_cast<std::int64_t>(std::floor(static_cast<double>(n - 1) / step + 1e-9)) + 1;
  auto shape = in.shape;
  shape[static_cast<std::size_t>(axis)] = m;
  Grid3 out(shape[0], shape[1], shape[2]);

  // Precompute taps per output coordinate.
  struct Taps {
    std::array<std::int64_t, 4> idx;
    std::array<double, 4> w;
  };
  std::vector<Taps> taps(static_cast<std::size_t>(m));
  for (std::int64_t o = 0; o < m; ++o) {
    const double x = static_cast<double>(o) * step;
    const auto base = static_cast<std::int64_t>(std::floor(x));
    Taps& t = taps[static_cast<std::size_t>(o)];
    for (int q = 0; q < 4; ++q) {
      const std::int64_t src = base - 1 + q;
      t.idx[static_cast<std::size_t>(q)] = std::clamp<std::int64_t>(src, 0, n - 1);
      t.w[static_cast<std::size_t>(q)] = cubic_kernel(x - static_cast<double>(src));
    }
  }

  for (std::int64_t k = 0; k < shape[0]; ++k) {
    for (std::int64_t i = 0; i < shape[1]; ++i) {
      for (std::int64_t j = 0; j < shape[2]; ++j) {
        std::array<std::int64_t, 3> pos{k, i, j};
        const Taps& t = taps[static_cast<std::size_t>(pos[static_cast<std::size_t>(axis)])];
        double acc = 0.0;
        for (int q = 0; q < 4; ++q) {
          pos[static_cast<std::size_t>(axis)] = t.idx[static_cast<std::size_t>(q)];
          acc += t.w[static_cast<std::size_t>(q)] * in(pos[0], pos[1], pos[2]);
        }
        out(k, i, j) = acc;
      }
    }
  }
  return out;
}

}  // namespace

Volume resample_volume(const Volume& v, const std::array<double, 3>& target_spacing) {
  v.validate();
  for (double s : target_spacing) {
    if (!(s > 0.0)) throw InvalidArgument("target spacing must be positive");
  }
  Volume out{v.data, target_spacing, v.id};
  for (int axis = 0; axis < 3; ++axis) {
    const double step = target_spacing[static_cast<std::size_t>(axis)] / v.spacing[static_cast<std::size_t>(axis)];
    if (step == 1.0) continue;
    out.data = resample_axis(out.data, axis, step);
  }
  return out;
}

Mask3 resample_mask(const Mask3& m, const std::array<double, 3>& spacing,
                    const std::array<double, 3>& target_spacing) {
  std::array<std::int64_t, 3> shape{};
  std::array<double, 3> step{};
  for (std::size_t a = 0; a < 3; ++a) {
    if (!(spacing[a] > 0.0) || !(target_spacing[a] > 0.0)) throw InvalidArgument("spacing must be positive");
    shape[a] = resampled_extent(m.shape[a], spacing[a], target_spacing[a]);
    step[a] = target_spacing[a] / spacing[a];
  }
  Mask3 out(shape[0], shape[1], shape[2]);
  auto nearest = [](std::int64_t o, double s, std::int64_t n) {
    return std::clamp<std::int64_t>(static_cast<std::int64_t>(std::lround(static_cast<double>(o) * s)), 0, n - 1);
  };
  for (std::int64_t k = 0; k < shape[0]; ++k) {
    const auto sk = nearest(k, step[0], m.shape[0]);
    for (std::int64_t i = 0; i < shape[1]; ++i) {
      const auto si = nearest(i, step[1], m.shape[1]);
      for (std::int64_t j = 0; j < shape[2]; ++j) out(k, i, j) = m(sk, si, nearest(j, step[2], m.shape[2]));
    }
  }
  return out;
}

// ---- histogram matching ---------------------------------------------------

IntensityHistogram IntensityHistogram::from_values(std::span<const double> values, std::size_t bins, double lo,
                                                   double hi) {
  if (bins == 0 || !(hi > lo)) throw InvalidArgument("histogram needs bins > 0 and hi > lo");
  IntensityHistogram h{lo, hi, std::vector<double>(bins, 0.0)};
  const double w = h.bin_width();
  for (double v : values) {
    auto b = static_cast<std::int64_t>(std::floor((v - lo) / w));
    b = std::clamp<std::int64_t>(b, 0, static_cast<std::int64_t>(bins) - 1);
    h.counts[static_cast<std::size_t>(b)] += 1.0;
  }
  return h;
}

double IntensityHistogram::total() const { return std::accumulate(counts.begin(), counts.end(), 0.0); }

double IntensityHistogram::cdf(double x) const {
  if (x <= lo) return 0.0;
  if (x >= hi) return 1.0;
  const double w = bin_width();
  const double pos = (x - lo) / w;
  const auto b = std::min(static_cast<std::size_t>(pos), counts.size() - 1);
  double below = 0.0;
  for (std::size_t n = 0; n < b; ++n) below += counts[n];
  return (below + counts[b] * (pos - static_cast<double>(b))) / total();
}

double IntensityHistogram::quantile(double t) const {
  const double tot = total();
  if (!(tot > 0.0)) throw DegenerateInput("empty reference histogram");
  t = std::clamp(t, 0.0, 1.0);
  const double target = t * tot;
  const double w = bin_width();
  // Quantile 0 and 1 are the edges of the occupied support.
  std::size_t first = 0;
  while (first < counts.size() && counts[first] == 0.0) ++first;
  std::size_t last = counts.size() - 1;
  while (last > first && counts[last] == 0.0) --last;
  if (target <= 0.0) return lo + w * static_cast<double>(first);
  double acc = 0.0;
  for (std::size_t b = first; b <= last; ++b) {
    if (counts[b] == 0.0) continue;
    if (acc + counts[b] >= target) {
      return lo + w * (static_cast<double>(b) + (target - acc) / counts[b]);
    }
    acc += counts[b];
  }
  return lo + w * static_cast<double>(last + 1);
}

double IntensityHistogram::mode() const {
  const auto it = std::max_element(counts.begin(), counts.end());
  return lo + bin_width() * (static_cast<double>(it - counts.begin()) + 0.5);
}

IntensityHistogram build_reference_histogram(const std::vector<const Volume*>& volumes,
                                             double foreground_threshold, std::size_t bins) {
  std::vector<double> pooled;
  for (const Volume* v : volumes) {
    for (double x : v->data.data) {
      if (x > foreground_threshold) pooled.push_back(x);
    }
  }
  if (pooled.size() < 2) throw DegenerateInput("no foreground voxels to build a reference histogram");
  const auto [mn_it, mx_it] = std::minmax_element(pooled.begin(), pooled.end());
  const double mn = *mn_it;
  const double mx = *mx_it;
  if (!(mx > mn)) throw DegenerateInput("constant foreground intensities");

  // Mode from a coarse histogram so texture noise does not pick a spurious spike.
  const IntensityHistogram coarse = IntensityHistogram::from_values(pooled, 64, mn, mx);
  const double peak = coarse.mode();

  std::vector<double> standardized(pooled.size());
  for (std::size_t n = 0; n < pooled.size(); ++n) {
    const double x = pooled[n];
    standardized[n] = x <= peak ? 0.5 * (x - mn) / (peak - mn) : 0.5 + 0.5 * (x - peak) / (mx - peak);
  }
  return IntensityHistogram::from_values(standardized, bins, 0.0, 1.0);
}

Volume histogram_match(const Volume& v, const IntensityHistogram& reference,
                       std::optional<double> foreground_threshold) {
  v.validate();
  std::vector<std::size_t> idx;
  idx.reserve(v.data.data.size());
  for (std::size_t n = 0; n < v.data.data.size(); ++n) {
    if (!foreground_threshold || v.data.data[n] > *foreground_threshold) idx.push_back(n);
  }
  if (idx.size() < 2) throw DegenerateInput("histogram_match needs at least two voxels");
  const auto& vals = v.data.data;
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return vals[a] < vals[b]; });
  if (vals[idx.front()] == vals[idx.back()]) throw DegenerateInput("constant-intensity volume");

  // Tied values share the midpoint of their rank interval; ranks are then
  // stretched so the lowest group maps to t = 0 and the highest to t = 1.
  struct Group {
    std::size_t begin, end;
    double mid;
  };
  std::vector<Group> groups;
  for (std::size_t a = 0; a < idx.size();) {
    std::size_t b = a;
    while (b + 1 < idx.size() && vals[idx[b + 1]] == vals[idx[a]]) ++b;
    groups.push_back({a, b + 1, 0.5 * static_cast<double>(a + b)});
    a = b + 1;
  }
  const double lo_mid = groups.front().mid;
  const double hi_mid = groups.back().mid;
  Volume out = v;
  for (const Group& g : groups) {
    const double t = (g.mid - lo_mid) / (hi_mid - lo_mid);
    const double mapped = reference.quantile(t);
    for (std::size_t r = g.begin; r < g.end; ++r) out.data.data[idx[r]] = mapped;
  }
  return out;
}

template <class T>
Array2<T> center_crop_or_pad(const Array2<T>& img, std::int64_t size, T pad_value) {
  if (size <= 0) throw InvalidArgument("crop size must be positive");
  Array2<T> out(size, size, pad_value);
  // Offsets of the output window in source coordinates (negative = padding).
  const std::int64_t oi = (img.rows - size) / 2 + ((img.rows - size) < 0 && (img.rows - size) % 2 ? -1 : 0);
  const std::int64_t oj = (img.cols - size) / 2 + ((img.cols - size) < 0 && (img.cols - size) % 2 ? -1 : 0);
  for (std::int64_t i = 0; i < size; ++i) {
    const std::int64_t si = i + oi;
    if (si < 0 || si >= img.rows) continue;
    for (std::int64_t j = 0; j < size; ++j) {
      const std::int64_t sj = j + oj;
      if (sj < 0 || sj >= img.cols) continue;
      out(i, j) = img(si, sj);
    }
  }
  return out;
}

template Array2<double> center_crop_or_pad(const Array2<double>&, std::int64_t, double);
template Array2<std::uint8_t> center_crop_or_pad(const Array2<std::uint8_t>&, std::int64_t, std::uint8_t);
template Array2<std::int32_t> center_crop_or_pad(const Array2<std::int32_t>&, std::int64_t, std::int32_t);

std::vector<Slice> decompose_and_crop(const Volume& v, std::int64_t size) {
  std::vector<Slice> out;
  out.reserve(static_cast<std::size_t>(v.data.depth()));
  for (std::int64_t k = 0; k < v.data.depth(); ++k) {
    out.push_back(Slice{center_crop_or_pad(v.data.slice(k), size, 0.0), v.id, k});
  }
  return out;
}

Slice renormalize(const Image& raw, std::string source_id, std::int64_t index_k) {
  if (raw.data.empty()) throw DegenerateInput("empty slice");
  double mn = raw.data.front();
  double mx = raw.data.front();
  for (double x : raw.data) {
    if (!std::isfinite(x)) throw InvalidArgument("non-finite value in slice");
    mn = std::min(mn, x);
    mx = std::max(mx, x);
  }
  if (!(mx > mn)) throw DegenerateInput("constant slice cannot be renormalized");
  Slice s{raw, std::move(source_id), index_k};
  const double range = mx - mn;
  for (double& x : s.data.data) x = std::clamp((x - mn) / range * 2.0 - 1.0, -1.0, 1.0);
  return s;
}

// ---- augmentation ---------------------------------------------------------

AugmentParams draw_augment(std::mt19937_64& rng, const AugmentRanges& ranges) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  AugmentParams p;
  p.flip = unit(rng) < ranges.flip_probability;
  p.scale = ranges.min_scale + (ranges.max_scale - ranges.min_scale) * unit(rng);
  p.rotation_deg = ranges.max_rotation_deg * (2.0 * unit(rng) - 1.0);
  return p;
}

namespace {

// Maps an output pixel to its source coordinate under the inverse transform.
struct InverseMap {
  double c, s, inv_scale, ci, cj;
  bool flip;
  std::int64_t cols;

  InverseMap(const AugmentParams& p, std::int64_t rows, std::int64_t cols_)
      : c(std::cos(p.rotation_deg * std::numbers::pi / 180.0)),
        s(std::sin(p.rotation_deg * std::numbers::pi / 180.0)),
        inv_scale(1.0 / p.scale),
        ci(0.5 * static_cast<double>(rows - 1)),
        cj(0.5 * static_cast<double>(cols_ - 1)),
        flip(p.flip),
        cols(cols_) {}

  std::pair<double, double> operator()(std::int64_t i, std::int64_t j) const {
    const double di = static_cast<double>(i) - ci;
    const double dj = static_cast<double>(j) - cj;
    const double si = (c * di + s * dj) * inv_scale + ci;
    double sj = (-s * di + c * dj) * inv_scale + cj;
    if (flip) sj = static_cast<double>(cols - 1) - sj;
    return {si, sj};
  }
};

}  // namespace

Image apply_augment(const Image& img, const AugmentParams& p, double fill) {
  if (p.is_identity()) return img;
  Image out(img.rows, img.cols);
  const InverseMap map(p, img.rows, img.cols);
  auto sample = [&](std::int64_t i, std::int64_t j) {
    return (i < 0 || j < 0 || i >= img.rows || j >= img.cols) ? fill : img(i, j);
  };
  for (std::int64_t i = 0; i < img.rows; ++i) {
    for (std::int64_t j = 0; j < img.cols; ++j) {
      const auto [si, sj] = map(i, j);
      const double fi = std::floor(si);
      const double fj = std::floor(sj);
      const double ai = si - fi;
      const double aj = sj - fj;
      const auto i0 = static_cast<std::int64_t>(fi);
      const auto j0 = static_cast<std::int64_t>(fj);
      double v = (1 - ai) * ((1 - aj) * sample(i0, j0) + aj * sample(i0, j0 + 1)) +
                 ai * ((1 - aj) * sample(i0 + 1, j0) + aj * sample(i0 + 1, j0 + 1));
      // Weights of exactly zero must not pull in the fill value.
      if (ai == 0.0 && aj == 0.0) v = sample(i0, j0);
      out(i, j) = std::clamp(v, -1.0, 1.0);
    }
  }
  return out;
}

Array2<std::int32_t> apply_augment_labels(const Array2<std::int32_t>& labels, const AugmentParams& p) {
  if (p.is_identity()) return labels;
  Array2<std::int32_t> out(labels.rows, labels.cols, 0);
  const InverseMap map(p, labels.rows, labels.cols);
  for (std::int64_t i = 0; i < labels.rows; ++i) {
    for (std::int64_t j = 0; j < labels.cols; ++j) {
      const auto [si, sj] = map(i, j);
      const auto ni = static_cast<std::int64_t>(std::lround(si));
      const auto nj = static_cast<std::int64_t>(std::lround(sj));
      if (ni >= 0 && nj >= 0 && ni < labels.rows && nj < labels.cols) out(i, j) = labels(ni, nj);
    }
  }
  return out;
}

Slice augment(const Slice& s, std::mt19937_64& rng, const AugmentRanges& ranges) {
  const AugmentParams p = draw_augment(rng, ranges);
  return Slice{apply_augment(s.data, p, -1.0), s.source_id, s.index_k};
}

}  // namespace anomaly_recon::data
