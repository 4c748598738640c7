#include "anomaly_recon/scoring/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "anomaly_recon/error.hpp"

namespace anomaly_recon::scoring {

using nlohmann::json;

double trapezoid_auc(const std::vector<double>& fpr, const std::vector<double>& tpr) {
  if (fpr.size() != tpr.size()) throw InvalidArgument("AUC: fpr/tpr lengths differ");
  std::vector<std::pair<double, double>> pts{{0.0, 0.0}, {1.0, 1.0}};
  for (std::size_t n = 0; n < fpr.size(); ++n) pts.emplace_back(fpr[n], tpr[n]);
  std::sort(pts.begin(), pts.end());
  double area = 0.0;
  for (std::size_t n = 1; n < pts.size(); ++n) {
    area += (pts[n].first - pts[n - 1].first) * (pts[n].second + pts[n - 1].second) / 2.0;
  }
  return area;
}

RocResult evaluate_detection(const Grid3& scores, const data::LabelVolume& labels, const Mask3* mask,
                             const std::vector<std::string>& classes) {
  if (mask && mask->shape != scores.shape) throw InvalidArgument("mask shape differs from the score volume");
  std::vector<const Mask3*> class_masks;
  for (const auto& c : classes) {
    const Mask3& m = labels.at(c);
    if (m.shape != scores.shape) throw InvalidArgument("label '" + c + "' shape differs from the score volume");
    class_masks.push_back(&m);
  }
  const std::size_t nc = classes.size();

  // Region voxels sorted by score with their class membership.
  struct Voxel {
    double s;
    std::uint32_t bits;
  };
  std::vector<Voxel> vox;
  for (std::size_t n = 0; n < scores.data.size(); ++n) {
    if (mask && !mask->data[n]) continue;
    if (!std::isfinite(scores.data[n])) throw InvalidArgument("non-finite score in evaluation");
    std::uint32_t bits = 0;
    for (std::size_t c = 0; c < nc; ++c) {
      if (class_masks[c]->data[n]) bits |= 1u << c;
    }
    vox.push_back({scores.data[n], bits});
  }
  if (vox.empty()) throw DegenerateInput("evaluation region is empty");
  std::sort(vox.begin(), vox.end(), [](const Voxel& a, const Voxel& b) { return a.s < b.s; });

  // above[c][i]: voxels of class c (nc = negatives, nc + 1 = any) at sorted position >= i.
  const std::size_t nv = vox.size();
  std::vector<std::vector<std::int64_t>> above(nc + 2, std::vector<std::int64_t>(nv + 1, 0));
  for (std::size_t i = nv; i-- > 0;) {
    for (std::size_t c = 0; c < nc + 2; ++c) above[c][i] = above[c][i + 1];
    const auto bits = vox[i].bits;
    for (std::size_t c = 0; c < nc; ++c) above[c][i] += (bits >> c) & 1u;
    if (bits == 0) ++above[nc][i];
    else ++above[nc + 1][i];
  }

  RocResult r;
  r.negatives = above[nc][0];
  const std::int64_t any_pos = above[nc + 1][0];
  if (r.negatives == 0) throw DegenerateInput("evaluation region has no negative voxels");
  if (any_pos == 0) throw DegenerateInput("evaluation region has no abnormal voxels");

  std::vector<std::size_t> first_above;  // sorted index of the first voxel with s > t
  for (std::size_t q = 0; q < kNumThresholds; ++q) {
    const auto pos = static_cast<std::size_t>(std::floor(static_cast<double>(q) * static_cast<double>(nv - 1) /
                                                         static_cast<double>(kNumThresholds - 1)));
    const double t = vox[pos].s;
    r.thresholds.push_back(t);
    const auto it = std::upper_bound(vox.begin(), vox.end(), t, [](double v, const Voxel& x) { return v < x.s; });
    first_above.push_back(static_cast<std::size_t>(it - vox.begin()));
    r.fpr.push_back(static_cast<double>(above[nc][first_above.back()]) / static_cast<double>(r.negatives));
  }

  auto build = [&](std::size_t c, std::int64_t positives) {
    ClassRoc cr;
    cr.positives = positives;
    cr.present = positives > 0;
    if (!cr.present) return cr;
    double best_j = -std::numeric_limits<double>::infinity();
    for (std::size_t q = 0; q < kNumThresholds; ++q) {
      const std::int64_t tp = above[c][first_above[q]];
      const std::int64_t fp = above[nc][first_above[q]];
      const double tpr = static_cast<double>(tp) / static_cast<double>(positives);
      cr.tpr.push_back(tpr);
      const double spec = 1.0 - r.fpr[q];
      if (tpr + spec - 1.0 > best_j) {
        best_j = tpr + spec - 1.0;
        cr.youden.threshold = r.thresholds[q];
        cr.youden.sensitivity = tpr;
        cr.youden.specificity = spec;
        cr.youden.precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
        const double pr = cr.youden.precision;
        cr.youden.f1 = pr + tpr > 0 ? 2.0 * pr * tpr / (pr + tpr) : 0.0;
      }
    }
    cr.auc = trapezoid_auc(r.fpr, cr.tpr);
    return cr;
  };
  for (std::size_t c = 0; c < nc; ++c) r.classes[classes[c]] = build(c, above[c][0]);
  r.classes[kAnyClass] = build(nc + 1, any_pos);
  return r;
}

json RocResult::to_json(bool include_curves) const {
  json j;
  j["negatives"] = negatives;
  for (const auto& [name, c] : classes) {
    json cj{{"present", c.present}, {"positives", c.positives}};
    if (c.present) {
      cj["auc"] = c.auc;
      cj["operating_point"] = {{"threshold", c.youden.threshold},     {"sensitivity", c.youden.sensitivity},
                               {"specificity", c.youden.specificity}, {"precision", c.youden.precision},
                               {"f1", c.youden.f1}};
      if (include_curves) cj["tpr"] = c.tpr;
    }
    j["classes"][name] = cj;
  }
  if (include_curves) {
    j["thresholds"] = thresholds;
    j["fpr"] = fpr;
  }
  return j;
}

MeanStd mean_std(const std::vector<double>& values) {
  MeanStd m;
  m.n = static_cast<std::int64_t>(values.size());
  if (values.empty()) return m;
  m.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  if (values.size() < 2) return m;
  double ss = 0.0;
  for (double v : values) ss += (v - m.mean) * (v - m.mean);
  m.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  return m;
}

void write_roc_svg(const std::filesystem::path& path, const std::string& title, const std::vector<NamedCurve>& curves) {
  static const char* kColours[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  constexpr double kSize = 360.0, kPad = 50.0;
  auto px = [&](double f) { return kPad + f * kSize; };
  auto py = [&](double t) { return kPad + (1.0 - t) * kSize; };
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(2);
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kSize + 2 * kPad + 160 << "\" height=\""
    << kSize + 2 * kPad << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s << "<rect x=\"" << kPad << "\" y=\"" << kPad << "\" width=\"" << kSize << "\" height=\"" << kSize
    << "\" fill=\"none\" stroke=\"#000\"/>\n";
  s << "<line x1=\"" << px(0) << "\" y1=\"" << py(0) << "\" x2=\"" << px(1) << "\" y2=\"" << py(1)
    << "\" stroke=\"#bbb\" stroke-dasharray=\"4 4\"/>\n";
  s << "<text x=\"" << kPad << "\" y=\"" << kPad - 15 << "\">" << title << "</text>\n";
  s << "<text x=\"" << kPad + kSize / 2 - 60 << "\" y=\"" << kPad + kSize + 35 << "\">false positive rate</text>\n";
  s << "<text transform=\"translate(" << kPad - 30 << "," << kPad + kSize / 2 + 50
    << ") rotate(-90)\">true positive rate</text>\n";
  for (std::size_t c = 0; c < curves.size(); ++c) {
    const auto& cv = curves[c];
    std::vector<std::pair<double, double>> pts{{0.0, 0.0}, {1.0, 1.0}};
    for (std::size_t n = 0; n < cv.fpr.size() && n < cv.tpr.size(); ++n) pts.emplace_back(cv.fpr[n], cv.tpr[n]);
    std::sort(pts.begin(), pts.end());
    const char* colour = kColours[c % std::size(kColours)];
    s << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"1.5\" points=\"";
    for (const auto& [f, t] : pts) s << px(f) << "," << py(t) << " ";
    s << "\"/>\n";
    const double ly = kPad + 15.0 + 18.0 * static_cast<double>(c);
    s << "<line x1=\"" << kPad + kSize + 10 << "\" y1=\"" << ly << "\" x2=\"" << kPad + kSize + 30 << "\" y2=\"" << ly
      << "\" stroke=\"" << colour << "\" stroke-width=\"2\"/>\n";
    s << "<text x=\"" << kPad + kSize + 35 << "\" y=\"" << ly + 4 << "\">" << cv.name << "</text>\n";
  }
  s << "</svg>\n";
  std::ofstream f(path);
  if (!f) throw Error("cannot write " + path.string());
  f << s.str();
}

}  // namespace anomaly_recon::scoring
