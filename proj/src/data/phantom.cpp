#include "anomaly_recon/data/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace anomaly_recon::data {

using nlohmann::json;

namespace {

constexpr double kWhite = 0.55;
constexpr double kGray = 0.38;
constexpr double kSkull = 0.9;
constexpr double kCsf = 0.12;
constexpr double kEye = 0.3;
constexpr double kCavity = 0.1;
constexpr double kExtracranialBase = 0.7;
constexpr double kCortexThickness = 0.12;

enum Anatomy : std::int32_t { kBackground = 0, kSkullCls, kBrainCls, kVentricleCls, kEyeLeftCls, kEyeRightCls };

struct Vec3 {
  double k, i, j;
};

double norm(const Vec3& v) { return std::sqrt(v.k * v.k + v.i * v.i + v.j * v.j); }

struct TextureMode {
  Vec3 dir;
  double wavelength;
  double phase;
};

struct Deformation {
  Vec3 center;
  double amplitude;
  double width;

  Vec3 displacement(const Vec3& q) const {
    const Vec3 d{q.k - center.k, q.i - center.i, q.j - center.j};
    const double r = norm(d);
    if (r < 1e-9) return {0, 0, 0};
    const double mag = amplitude * std::exp(-r * r / (2.0 * width * width)) * std::min(1.0, r / width);
    return {mag * d.k / r, mag * d.i / r, mag * d.j / r};
  }
};

// Per-subject anatomy, evaluated at continuous voxel coordinates.
struct Subject {
  Vec3 center;
  double ak, ai, aj;
  double cos_t, sin_t;
  double skull;
  int folds;
  double fold_phase;
  double fold_depth;
  double ventricle_scale;
  double gain;
  std::vector<TextureMode> texture;
  double texture_amplitude;

  Vec3 to_frame(const Vec3& q) const {
    const double di = q.i - center.i;
    const double dj = q.j - center.j;
    return {q.k - center.k, cos_t * di + sin_t * dj, -sin_t * di + cos_t * dj};
  }

  double rho(const Vec3& u) const {
    return std::sqrt((u.k / ak) * (u.k / ak) + (u.i / ai) * (u.i / ai) + (u.j / aj) * (u.j / aj));
  }

  double brain_boundary(const Vec3& u) const {
    const double theta = std::atan2(u.i, u.j);
    return (1.0 - skull) * (1.0 + fold_depth * std::sin(folds * theta + fold_phase));
  }

  bool in_ellipsoid(const Vec3& u, const Vec3& c, const Vec3& axes) const {
    const double a = (u.k - c.k) / axes.k, b = (u.i - c.i) / axes.i, d = (u.j - c.j) / axes.j;
    return a * a + b * b + d * d <= 1.0;
  }

  double texture_at(const Vec3& u) const {
    double t = 0.0;
    for (const auto& m : texture) {
      t += std::cos(2.0 * std::numbers::pi * (m.dir.k * u.k + m.dir.i * u.i + m.dir.j * u.j) / m.wavelength + m.phase);
    }
    return texture_amplitude * t / std::sqrt(0.5 * static_cast<double>(texture.size()));
  }

  std::pair<std::int32_t, double> eval(const Vec3& q) const {
    const Vec3 u = to_frame(q);
    const double r = rho(u);
    // Eyes sit in the anterior-inferior part of the head (small i, small k).
    const double eye_r = 0.17 * std::min(ai, aj);
    for (int side = 0; side < 2; ++side) {
      const Vec3 c{-0.55 * ak, -0.72 * ai, (side == 0 ? -1.0 : 1.0) * 0.42 * aj};
      if (in_ellipsoid(u, c, {eye_r, eye_r, eye_r})) {
        return {side == 0 ? kEyeLeftCls : kEyeRightCls, gain * kEye};
      }
    }
    if (r > 1.0) return {kBackground, 0.0};
    const double tex = texture_at(u);
    const double rb = brain_boundary(u);
    if (r > rb) return {kSkullCls, gain * (kSkull + 0.5 * tex)};
    const Vec3 vaxes{0.35 * ak * ventricle_scale, 0.28 * ai * ventricle_scale, 0.09 * aj * ventricle_scale};
    for (double side : {-1.0, 1.0}) {
      if (in_ellipsoid(u, {0.0, 0.05 * ai, side * 0.17 * aj}, vaxes)) return {kVentricleCls, gain * kCsf};
    }
    const double base = r > rb - kCortexThickness ? kGray : kWhite;
    return {kBrainCls, gain * (base + tex)};
  }
};

double uniform(std::mt19937_64& rng, const Range& r) {
  return std::uniform_real_distribution<double>(r.min, r.max)(rng);
}

Subject draw_subject(const PhantomConfig& cfg, std::mt19937_64& rng) {
  Subject s;
  const double size = static_cast<double>(cfg.size);
  const double depth = static_cast<double>(cfg.depth);
  std::uniform_real_distribution<double> shift(-1.5, 1.5);
  s.center = {0.5 * (depth - 1.0), 0.5 * (size - 1.0) + shift(rng), 0.5 * (size - 1.0) + shift(rng)};
  s.ai = uniform(rng, cfg.head_axis_rows) * size;
  s.aj = uniform(rng, cfg.head_axis_cols) * size;
  s.ak = uniform(rng, cfg.head_axis_depth) * depth;
  const double tilt = std::uniform_real_distribution<double>(-cfg.max_tilt_deg, cfg.max_tilt_deg)(rng);
  s.cos_t = std::cos(tilt * std::numbers::pi / 180.0);
  s.sin_t = std::sin(tilt * std::numbers::pi / 180.0);
  s.skull = cfg.skull_thickness;
  s.folds = std::uniform_int_distribution<int>(7, 10)(rng);
  s.fold_phase = std::uniform_real_distribution<double>(0.0, 2.0 * std::numbers::pi)(rng);
  s.fold_depth = std::uniform_real_distribution<double>(0.02, 0.05)(rng);
  s.ventricle_scale = std::uniform_real_distribution<double>(0.85, 1.15)(rng);
  s.gain = uniform(rng, cfg.intensity_gain);
  s.texture_amplitude = cfg.texture_amplitude;
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int m = 0; m < 6; ++m) {
    Vec3 d{gauss(rng), gauss(rng), gauss(rng)};
    const double n = std::max(norm(d), 1e-9);
    s.texture.push_back({{d.k / n, d.i / n, d.j / n},
                         cfg.texture_wavelength * std::uniform_real_distribution<double>(0.7, 1.5)(rng),
                         std::uniform_real_distribution<double>(0.0, 2.0 * std::numbers::pi)(rng)});
  }
  return s;
}

bool is_brain(std::int32_t cls) { return cls == kBrainCls || cls == kVentricleCls; }

// Fibonacci-sphere directions used to test that a ball fits a region.
std::vector<Vec3> sphere_directions(int n) {
  std::vector<Vec3> dirs;
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  for (int m = 0; m < n; ++m) {
    const double y = 1.0 - 2.0 * (m + 0.5) / n;
    const double r = std::sqrt(1.0 - y * y);
    dirs.push_back({r * std::cos(golden * m), y, r * std::sin(golden * m)});
  }
  return dirs;
}

}  // namespace

void PhantomConfig::validate() const {
  auto check = [](bool ok, const char* what) {
    if (!ok) throw InvalidArgument(std::string("phantom config: ") + what);
  };
  check(size >= 16 && depth >= 1, "size >= 16 and depth >= 1 required");
  for (double s : spacing) check(s > 0.0, "spacing must be positive");
  for (const Range* r : {&head_axis_rows, &head_axis_cols, &head_axis_depth, &intensity_gain, &anomaly_radius,
                         &intensity_offset}) {
    check(r->min <= r->max, "empty range");
  }
  check(head_axis_rows.min > 0.0 && head_axis_rows.max < 0.5, "head rows axis must lie in (0, 0.5)");
  check(head_axis_cols.min > 0.0 && head_axis_cols.max < 0.5, "head cols axis must lie in (0, 0.5)");
  check(head_axis_depth.min > 0.0, "head depth axis must be positive");
  check(skull_thickness > 0.0 && skull_thickness < 0.5, "skull thickness must lie in (0, 0.5)");
  check(anomaly_radius.min > 0.0, "anomaly radius must be positive");
  check(texture_wavelength > 0.0, "texture wavelength must be positive");
  for (const auto& [cls, c] : anomaly_counts) {
    check(std::find(kAbnormalityClasses.begin(), kAbnormalityClasses.end(), cls) != kAbnormalityClasses.end(),
          "unknown abnormality class");
    check(c.min >= 0 && c.min <= c.max, "empty anomaly count range");
  }
}

json PhantomConfig::to_json() const {
  json counts = json::object();
  for (const auto& [cls, c] : anomaly_counts) counts[cls] = {c.min, c.max};
  auto range = [](const Range& r) { return json::array({r.min, r.max}); };
  return json{{"size", size},
              {"depth", depth},
              {"spacing", spacing},
              {"head_axis_rows", range(head_axis_rows)},
              {"head_axis_cols", range(head_axis_cols)},
              {"head_axis_depth", range(head_axis_depth)},
              {"max_tilt_deg", max_tilt_deg},
              {"skull_thickness", skull_thickness},
              {"texture_amplitude", texture_amplitude},
              {"texture_wavelength", texture_wavelength},
              {"intensity_gain", range(intensity_gain)},
              {"anomaly_counts", counts},
              {"anomaly_radius", range(anomaly_radius)},
              {"intensity_offset", range(intensity_offset)},
              {"deformation_amplitude", deformation_amplitude},
              {"seed", seed}};
}

PhantomConfig PhantomConfig::from_json(const json& j) {
  PhantomConfig c;
  auto range = [&](const char* key, Range& r) {
    if (j.contains(key)) {
      auto v = j.at(key).get<std::vector<double>>();
      if (v.size() != 2) throw InvalidArgument(std::string("phantom config: ") + key + " must be [min, max]");
      r = {v[0], v[1]};
    }
  };
  c.size = j.value("size", c.size);
  c.depth = j.value("depth", c.depth);
  if (j.contains("spacing")) c.spacing = j.at("spacing").get<std::array<double, 3>>();
  range("head_axis_rows", c.head_axis_rows);
  range("head_axis_cols", c.head_axis_cols);
  range("head_axis_depth", c.head_axis_depth);
  c.max_tilt_deg = j.value("max_tilt_deg", c.max_tilt_deg);
  c.skull_thickness = j.value("skull_thickness", c.skull_thickness);
  c.texture_amplitude = j.value("texture_amplitude", c.texture_amplitude);
  c.texture_wavelength = j.value("texture_wavelength", c.texture_wavelength);
  range("intensity_gain", c.intensity_gain);
  if (j.contains("anomaly_counts")) {
    for (const auto& [cls, v] : j.at("anomaly_counts").items()) {
      auto mm = v.get<std::vector<int>>();
      if (mm.size() != 2) throw InvalidArgument("phantom config: anomaly count must be [min, max]");
      c.anomaly_counts[cls] = {mm[0], mm[1]};
    }
  }
  range("anomaly_radius", c.anomaly_radius);
  range("intensity_offset", c.intensity_offset);
  c.deformation_amplitude = j.value("deformation_amplitude", c.deformation_amplitude);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

Phantom generate_phantom(const PhantomConfig& cfg, const std::string& id) {
  cfg.validate();
  // Anatomy and anomalies use separate streams so a phantom with and without
  // anomalies shares identical anatomy.
  std::mt19937_64 rng(cfg.seed);
  std::mt19937_64 anomaly_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  const Subject subj = draw_subject(cfg, rng);

  const std::int64_t K = cfg.depth, N = cfg.size;
  const double brain_extent = (1.0 - cfg.skull_thickness) * std::min({subj.ai, subj.aj, subj.ak});
  if (cfg.anomaly_radius.max >= brain_extent) {
    throw InvalidArgument("anomaly radius exceeds the brain region");
  }

  struct Planned {
    std::string cls;
    Vec3 center;
    double radius;
    double offset;
  };
  std::vector<Planned> planned;
  const auto dirs = sphere_directions(48);
  std::uniform_real_distribution<double> uk(0.0, static_cast<double>(K - 1));
  std::uniform_real_distribution<double> un(0.0, static_cast<double>(N - 1));

  auto fits = [&](const std::string& cls, const Vec3& c, double radius) {
    const Vec3 u = subj.to_frame(c);
    if (cls == "extracranial_tumor_analog") {
      return subj.eval(c).first == kSkullCls && subj.rho(u) > subj.brain_boundary(u);
    }
    if (!is_brain(subj.eval(c).first)) return false;
    // Ball (with a small margin) must stay inside the brain.
    for (const auto& d : dirs) {
      const Vec3 p{c.k + d.k * radius * 1.2, c.i + d.i * radius * 1.2, c.j + d.j * radius * 1.2};
      const Vec3 pu = subj.to_frame(p);
      if (subj.rho(pu) > subj.brain_boundary(pu) - 0.02) return false;
    }
    if (cls == "structural_change_analog") return true;
    // Lesions sit in parenchyma, clear of the ventricles.
    if (subj.eval(c).first != kBrainCls) return false;
    for (double f : {0.5, 1.0, 1.3}) {
      for (const auto& d : dirs) {
        const Vec3 p{c.k + d.k * radius * f, c.i + d.i * radius * f, c.j + d.j * radius * f};
        if (subj.eval(p).first != kBrainCls) return false;
      }
    }
    return true;
  };

  for (auto cls_view : kAbnormalityClasses) {
    const std::string cls(cls_view);
    auto it = cfg.anomaly_counts.find(cls);
    if (it == cfg.anomaly_counts.end()) continue;
    const int count = std::uniform_int_distribution<int>(it->second.min, it->second.max)(anomaly_rng);
    for (int n = 0; n < count; ++n) {
      const double radius = uniform(anomaly_rng, cfg.anomaly_radius);
      const double offset = uniform(anomaly_rng, cfg.intensity_offset);
      bool placed = false;
      for (int attempt = 0; attempt < 4000 && !placed; ++attempt) {
        const Vec3 c{uk(anomaly_rng), un(anomaly_rng), un(anomaly_rng)};
        if (fits(cls, c, radius)) {
          planned.push_back({cls, c, radius, offset});
          placed = true;
        }
      }
      if (!placed) throw InvalidArgument("could not place a " + cls + " inside the brain region");
    }
  }

  std::vector<Deformation> deformations;
  for (const auto& p : planned) {
    if (p.cls == "structural_change_analog") {
      deformations.push_back({p.center, cfg.deformation_amplitude, 1.5 * p.radius});
    }
  }

  Phantom out;
  out.volume = Volume{Grid3(K, N, N), cfg.spacing, id};
  Array3<std::int32_t> anatomy(K, N, N, 0);
  for (auto cls : kAbnormalityClasses) out.labels.masks[std::string(cls)] = Mask3(K, N, N);
  Mask3& deform_mask = out.labels.masks["structural_change_analog"];

  for (std::int64_t k = 0; k < K; ++k) {
    for (std::int64_t i = 0; i < N; ++i) {
      for (std::int64_t j = 0; j < N; ++j) {
        Vec3 q{static_cast<double>(k), static_cast<double>(i), static_cast<double>(j)};
        double disp = 0.0;
        for (const auto& d : deformations) {
          const Vec3 dv = d.displacement(q);
          q = {q.k - dv.k, q.i - dv.i, q.j - dv.j};
          disp = std::max(disp, norm(dv));
        }
        const auto [cls, value] = subj.eval(q);
        anatomy(k, i, j) = cls;
        out.volume.data(k, i, j) = value;
        if (disp > 0.5 && is_brain(cls)) deform_mask(k, i, j) = 1;
      }
    }
  }

  for (const auto& p : planned) {
    if (p.cls == "structural_change_analog") {
      out.anomalies.push_back({p.cls, {p.center.k, p.center.i, p.center.j}, p.radius, 0.0});
      continue;
    }
    Mask3& mask = out.labels.masks[p.cls];
    const auto lo = [](double c, double r) { return static_cast<std::int64_t>(std::floor(c - r)); };
    const auto hi = [](double c, double r) { return static_cast<std::int64_t>(std::ceil(c + r)); };
    for (std::int64_t k = std::max<std::int64_t>(0, lo(p.center.k, p.radius));
         k <= std::min<std::int64_t>(K - 1, hi(p.center.k, p.radius)); ++k) {
      for (std::int64_t i = std::max<std::int64_t>(0, lo(p.center.i, p.radius));
           i <= std::min<std::int64_t>(N - 1, hi(p.center.i, p.radius)); ++i) {
        for (std::int64_t j = std::max<std::int64_t>(0, lo(p.center.j, p.radius));
             j <= std::min<std::int64_t>(N - 1, hi(p.center.j, p.radius)); ++j) {
          const Vec3 d{static_cast<double>(k) - p.center.k, static_cast<double>(i) - p.center.i,
                       static_cast<double>(j) - p.center.j};
          if (norm(d) > p.radius) continue;
          double& v = out.volume.data(k, i, j);
          if (p.cls == "cavity_analog") {
            v = subj.gain * kCavity;
          } else if (anatomy(k, i, j) == kBackground) {
            v = subj.gain * kExtracranialBase + p.offset;
          } else {
            v += p.offset;
          }
          mask(k, i, j) = 1;
        }
      }
    }
    out.anomalies.push_back({p.cls, {p.center.k, p.center.i, p.center.j}, p.radius,
                             p.cls == "cavity_analog" ? 0.0 : p.offset});
  }

  for (int c = 0; c < kNumAnatomyClasses; ++c) {
    Mask3 m(K, N, N);
    for (std::size_t n = 0; n < m.data.size(); ++n) m.data[n] = anatomy.data[n] == c ? 1 : 0;
    out.labels.masks[std::string(kAnatomyClasses[static_cast<std::size_t>(c)])] = std::move(m);
  }
  out.body = Mask3(K, N, N);
  const Mask3& extracranial = out.labels.masks["extracranial_tumor_analog"];
  for (std::size_t n = 0; n < out.body.data.size(); ++n) {
    out.body.data[n] = (anatomy.data[n] != kBackground || extracranial.data[n]) ? 1 : 0;
  }
  return out;
}

}  // namespace anomaly_recon::data
