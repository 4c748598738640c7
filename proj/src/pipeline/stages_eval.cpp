#include <algorithm>
#include <cmath>

#include "anomaly_recon/error.hpp"
#include "anomaly_recon/fidelity/fidelity.hpp"
#include "anomaly_recon/io/checkpoint.hpp"
#include "anomaly_recon/io/hash.hpp"
#include "anomaly_recon/io/json_schema.hpp"
#include "anomaly_recon/pipeline/stages.hpp"
#include "anomaly_recon/recon/latent_search.hpp"
#include "anomaly_recon/scoring/evaluation.hpp"
#include "anomaly_recon/scoring/scoring.hpp"
#include "common.hpp"

namespace anomaly_recon::pipeline {

using nlohmann::json;
using namespace detail;

namespace {

const std::vector<Variant> kVariants{Variant::kVae, Variant::kIntroVae, Variant::kIntroVaeLatSearch};

std::string recon_stage(Variant v) { return v == Variant::kVae ? "recon-vae" : "recon-introvae"; }
std::string score_stage(Variant v) { return "score/" + to_string(v); }
std::string score_dir(Variant v) { return "scores/" + to_string(v); }
std::string recon_dir(Variant v) { return "recon/" + to_string(v); }

recon::ReconModel load_recon(const fs::path& path, recon::TrainingMode expected) {
  const auto c = io::read_checkpoint(path);
  if (c.meta.value("kind", "") != "recon") throw Error(path.string() + " is not a reconstruction checkpoint");
  const auto mode = recon::training_mode_from_string(c.meta.at("mode"));
  if (mode != expected) {
    throw Error("checkpoint " + path.string() + " was trained as " + recon::to_string(mode) + ", expected " +
                recon::to_string(expected));
  }
  recon::ReconModel m(recon::ReconArch::from_json(c.meta.at("arch")), mode, recon::ReconHyper::from_json(c.meta.at("hyper")));
  io::load_module_tensors(*m, c);
  m->eval();
  return m;
}

disc::EmbeddingNet load_disc(const fs::path& path) {
  const auto c = io::read_checkpoint(path);
  if (c.meta.value("kind", "") != "disc") throw Error(path.string() + " is not a discriminative checkpoint");
  disc::EmbeddingNet net(disc::DiscArch::from_json(c.meta.at("arch")));
  io::load_module_tensors(*net, c);
  net->trained_steps = c.meta.at("step");
  net->eval();
  return net;
}

fidelity::SegNet load_seg(const fs::path& path) {
  const auto c = io::read_checkpoint(path);
  if (c.meta.value("kind", "") != "seg") throw Error(path.string() + " is not a segmentation checkpoint");
  fidelity::SegNet net(fidelity::SegArch::from_json(c.meta.at("arch")));
  io::load_module_tensors(*net, c);
  net->trained_steps = c.meta.at("step");
  net->eval();
  return net;
}

std::vector<PrepEntry> test_entries(const fs::path& root) {
  auto out = prep_entries(root, "test_abnormal");
  const auto normal = prep_entries(root, "test_normal");
  out.insert(out.end(), normal.begin(), normal.end());
  return out;
}

Grid3 images_to_grid(const std::vector<Image>& imgs) {
  Grid3 g(static_cast<std::int64_t>(imgs.size()), imgs.front().rows, imgs.front().cols);
  for (std::size_t k = 0; k < imgs.size(); ++k) g.set_slice(static_cast<std::int64_t>(k), imgs[k]);
  return g;
}

Mask2 slice_mask(const Mask3& m, std::int64_t k) { return m.slice(k); }

}  // namespace

void Pipeline::score(Variant variant) {
  const std::string stage = score_stage(variant);
  json section{{"scoring", cfg_.to_json()["scoring"]}};
  if (variant == Variant::kIntroVaeLatSearch) section["latent_search"] = cfg_.to_json()["latent_search"];
  const std::string input_hash =
      io::sha256_hex(stage + section.dump() + digest("preprocess") + digest(recon_stage(variant)) + digest("disc"));
  if (skip_if_current(stage, input_hash)) return;

  const auto expected = variant == Variant::kVae ? recon::TrainingMode::kVae : recon::TrainingMode::kIntroVae;
  auto model = load_recon(root() / ("checkpoints/" + recon_stage(variant) + ".ckpt"), expected);
  auto net = load_disc(root() / "checkpoints/disc.ckpt");
  const auto sdir = root() / score_dir(variant);
  const auto rdir = root() / recon_dir(variant);
  fs::remove_all(sdir);
  fs::remove_all(rdir);

  json search_log = json::array();
  for (const auto& e : test_entries(root())) {
    const auto p = load_prep(root(), e, false);
    const auto ks = all_slices(p.image);
    const auto x = slices_tensor(p.image, ks);
    torch::Tensor x_hat;
    if (variant == Variant::kIntroVaeLatSearch) {
      const auto r = recon::latent_search(model, x, cfg_.latent_search);
      x_hat = r.x_hat;
      for (std::size_t k = 0; k < ks.size(); ++k) {
        search_log.push_back({{"volume", e.id},
                              {"k", ks[k]},
                              {"empty", p.is_empty(ks[k])},
                              {"initial_loss", r.initial_loss[k]},
                              {"final_loss", r.final_loss[k]},
                              {"diverged", static_cast<bool>(r.diverged[k])}});
      }
    } else {
      torch::NoGradGuard ng;
      x_hat = recon::decode(model, recon::encode(model, x).mu);
    }
    const auto raw = scoring::abnormality_maps(net, x, x_hat, cfg_.scoring.stride);
    std::vector<Image> z(raw.size());
    std::vector<bool> degenerate(raw.size(), false);
    double lowest = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < raw.size(); ++k) {
      std::optional<Mask2> region;
      if (cfg_.scoring.zscore_region == "body") region = slice_mask(p.body, ks[k]);
      try {
        z[k] = scoring::zscore_normalize(raw[k], region);
        lowest = std::min(lowest, *std::min_element(z[k].data.begin(), z[k].data.end()));
      } catch (const DegenerateInput&) {
        degenerate[k] = true;
      }
    }
    if (!std::isfinite(lowest)) lowest = 0.0;
    // Slices without variation (no anatomy) take the volume's lowest score.
    for (std::size_t k = 0; k < raw.size(); ++k) {
      if (degenerate[k]) z[k] = Image(raw[k].rows, raw[k].cols, lowest);
    }
    const json meta{{"variant", to_string(variant)}, {"stride", cfg_.scoring.stride}, {"source", e.id}};
    auto zm = meta;
    zm["normalization"] = "zscored";
    zm["zscore_region"] = cfg_.scoring.zscore_region;
    auto rm = meta;
    rm["normalization"] = "raw";
    write_grid(sdir / (e.id + "_zscored"), images_to_grid(z), zm);
    write_grid(sdir / (e.id + "_raw"), images_to_grid(raw), rm);
    write_grid(rdir / e.id, images_to_grid(scoring::tensor_to_images(x_hat)), meta);
  }
  if (variant == Variant::kIntroVaeLatSearch) {
    write_json(sdir / "latent_search.json", {{"steps", cfg_.latent_search.steps}, {"lr", cfg_.latent_search.lr}, {"slices", search_log}});
  }
  auto outputs = list_outputs(root(), score_dir(variant));
  const auto recon_out = list_outputs(root(), recon_dir(variant));
  outputs.insert(outputs.end(), recon_out.begin(), recon_out.end());
  manifest_.complete(stage, input_hash, outputs, {{"volumes", test_entries(root()).size()}});
  info(stage + ": scored " + std::to_string(test_entries(root()).size()) + " volumes");
}

namespace {

json mean_std_json(const std::vector<double>& v) {
  const auto m = scoring::mean_std(v);
  return {{"mean", m.mean}, {"std", m.std}, {"n", m.n}, {"se", m.n > 0 ? m.std / std::sqrt(static_cast<double>(m.n)) : 0.0}};
}

// Mean of `a` over voxels where `in` is set, divided by its mean where
// `out` is set.
double region_ratio(const Image& a, const Mask2& in, const Mask2& out) {
  double si = 0.0, so = 0.0;
  std::int64_t ni = 0, no = 0;
  for (std::size_t n = 0; n < a.data.size(); ++n) {
    if (in.data[n]) {
      si += a.data[n];
      ++ni;
    } else if (out.data[n]) {
      so += a.data[n];
      ++no;
    }
  }
  if (ni == 0 || no == 0 || so <= 0.0) return std::numeric_limits<double>::quiet_NaN();
  return (si / static_cast<double>(ni)) / (so / static_cast<double>(no));
}

json paper_reference() {
  return {{"quality_score", {{"vae", -1645.1}, {"introvae", -655.8}, {"introvae+latsearch", -617.0}}},
          {"overlap_score", {{"vae", 0.56}, {"introvae", 0.558}, {"introvae+latsearch", 0.59}}}};
}

}  // namespace

void Pipeline::evaluate() {
  const std::string stage = "evaluate";
  std::string inputs = stage + cfg_.to_json()["evaluation"].dump() + digest("preprocess") + digest("seg");
  for (auto v : kVariants) inputs += digest(score_stage(v));
  const std::string input_hash = io::sha256_hex(inputs);
  if (skip_if_current(stage, input_hash)) return;

  auto seg = load_seg(root() / "checkpoints/seg.ckpt");
  const auto& classes = cfg_.evaluation_classes;
  const auto entries = test_entries(root());
  std::vector<PrepVolume> volumes;
  for (const auto& e : entries) volumes.push_back(load_prep(root(), e, true));
  std::size_t abnormal_volumes = 0;
  for (const auto& v : volumes) abnormal_volumes += v.abnormal_slices.empty() ? 0 : 1;
  if (abnormal_volumes == 0) throw Error("test split holds no abnormal volumes; nothing to evaluate");

  json report{{"format_version", 1},
              {"profile", cfg_.profile},
              {"seed", cfg_.seed},
              {"config_hash", manifest_.config_hash()},
              {"classes", classes},
              {"thresholds", scoring::kNumThresholds},
              {"paper_reference", paper_reference()}};
  const fs::path reports = root() / "reports";
  fs::create_directories(reports);
  std::vector<std::string> outputs{"reports/evaluation.json"};
  std::map<std::string, std::vector<scoring::NamedCurve>> plot_curves;

  for (auto variant : kVariants) {
    const std::string vname = to_string(variant);
    json vr;
    std::map<std::string, std::vector<double>> auc_body, auc_all, sens, spec, prec, f1;
    json per_volume = json::array();
    // Pooled volume for the plotted curves.
    std::vector<const PrepVolume*> pooled_src;
    std::vector<Grid3> pooled_scores;

    std::vector<double> quality, overlap, snr_emb, snr_l1;
    std::int64_t snr_slices = 0, snr_wins = 0;
    for (const auto& pv : volumes) {
      const auto zs = data::read_raw_grid(root() / score_dir(variant) / (pv.id + "_zscored")).grid;
      const auto raw = data::read_raw_grid(root() / score_dir(variant) / (pv.id + "_raw")).grid;
      const auto rec = data::read_raw_grid(root() / recon_dir(variant) / pv.id).grid;

      // Fidelity on every non-empty slice.
      std::vector<std::int64_t> ks;
      for (std::int64_t k = 0; k < pv.image.depth(); ++k) {
        if (!pv.is_empty(k)) ks.push_back(k);
      }
      if (!ks.empty()) {
        const auto fs_ = fidelity::fidelity_scores(seg, slices_tensor(pv.image, ks), slices_tensor(rec, ks));
        quality.insert(quality.end(), fs_.quality.begin(), fs_.quality.end());
        overlap.insert(overlap.end(), fs_.overlap.begin(), fs_.overlap.end());
      }

      if (pv.abnormal_slices.empty()) continue;
      // Embedding vs L1 contrast on slices holding bright-blob lesions.
      const Mask3 any = pv.labels.any_abnormality();
      const auto& blob = pv.labels.at("metastatic_tumor_analog");
      for (std::int64_t k = 0; k < pv.image.depth(); ++k) {
        Mask2 in = blob.slice(k), out = pv.body.slice(k);
        const Mask2 anyk = any.slice(k);
        bool has = false;
        for (std::size_t n = 0; n < in.data.size(); ++n) {
          in.data[n] = in.data[n] && out.data[n];
          has = has || in.data[n];
          if (anyk.data[n]) out.data[n] = 0;
        }
        if (!has) continue;
        const double re = region_ratio(raw.slice(k), in, out);
        const double rl = region_ratio(scoring::l1_residual_map(pv.image.slice(k), rec.slice(k)), in, out);
        if (!std::isfinite(re) || !std::isfinite(rl)) continue;
        ++snr_slices;
        snr_wins += re > rl ? 1 : 0;
        snr_emb.push_back(re);
        snr_l1.push_back(rl);
      }

      const auto body_roc = scoring::evaluate_detection(zs, pv.labels, &pv.body, classes);
      const auto all_roc = scoring::evaluate_detection(zs, pv.labels, nullptr, classes);
      json vj{{"id", pv.id}, {"rectified", json::object()}, {"all_voxels", json::object()}};
      for (const auto& [cls, c] : body_roc.classes) {
        if (!c.present) {
          vj["rectified"][cls] = nullptr;
          continue;
        }
        vj["rectified"][cls] = c.auc;
        auc_body[cls].push_back(c.auc);
        sens[cls].push_back(c.youden.sensitivity);
        spec[cls].push_back(c.youden.specificity);
        prec[cls].push_back(c.youden.precision);
        f1[cls].push_back(c.youden.f1);
      }
      for (const auto& [cls, c] : all_roc.classes) {
        vj["all_voxels"][cls] = c.present ? json(c.auc) : json();
        if (c.present) auc_all[cls].push_back(c.auc);
      }
      per_volume.push_back(vj);
      pooled_src.push_back(&pv);
      pooled_scores.push_back(zs);
    }

    json detection = json::object();
    auto class_names = classes;
    class_names.push_back(scoring::kAnyClass);
    for (const auto& cls : class_names) {
      if (auc_body[cls].empty()) {
        detection[cls] = {{"present", false}};
        continue;
      }
      detection[cls] = {{"present", true},
                        {"volumes", auc_body[cls].size()},
                        {"auc", mean_std_json(auc_body[cls])},
                        {"auc_all_voxels", mean_std_json(auc_all[cls])},
                        {"sensitivity", mean_std_json(sens[cls])},
                        {"specificity", mean_std_json(spec[cls])},
                        {"precision", mean_std_json(prec[cls])},
                        {"f1", mean_std_json(f1[cls])}};
    }

    // Pooled ROC over all abnormal test volumes (body voxels) for plotting.
    {
      const auto& first = pooled_scores.front();
      std::int64_t depth = 0;
      for (const auto& g : pooled_scores) depth += g.depth();
      Grid3 scores(depth, first.rows(), first.cols());
      Mask3 mask(depth, first.rows(), first.cols());
      data::LabelVolume labels;
      for (const auto& cls : classes) labels.masks[cls] = Mask3(depth, first.rows(), first.cols());
      std::int64_t k0 = 0;
      for (std::size_t n = 0; n < pooled_scores.size(); ++n) {
        const auto& g = pooled_scores[n];
        const auto off = static_cast<std::ptrdiff_t>(k0 * first.plane());
        std::copy(g.data.begin(), g.data.end(), scores.data.begin() + off);
        std::copy(pooled_src[n]->body.data.begin(), pooled_src[n]->body.data.end(), mask.data.begin() + off);
        for (const auto& cls : classes) {
          const auto& src = pooled_src[n]->labels.at(cls).data;
          std::copy(src.begin(), src.end(), labels.masks[cls].data.begin() + off);
        }
        k0 += g.depth();
      }
      const auto pooled = scoring::evaluate_detection(scores, labels, &mask, classes);
      json pj = json::object();
      for (const auto& [cls, c] : pooled.classes) {
        pj[cls] = c.present ? json(c.auc) : json();
        if (c.present) plot_curves[cls].push_back({vname + " (AUC " + std::to_string(c.auc).substr(0, 5) + ")", pooled.fpr, c.tpr});
      }
      vr["pooled_auc"] = pj;
    }

    vr["detection"] = detection;
    vr["per_volume"] = per_volume;
    vr["fidelity"] = {{"slices", quality.size()}, {"quality", mean_std_json(quality)}, {"overlap", mean_std_json(overlap)}};
    vr["signal_to_noise"] = {{"slices", snr_slices},
                             {"embedding_exceeds_l1", snr_wins},
                             {"fraction", snr_slices > 0 ? static_cast<double>(snr_wins) / static_cast<double>(snr_slices) : 0.0},
                             {"embedding_ratio", mean_std_json(snr_emb)},
                             {"l1_ratio", mean_std_json(snr_l1)}};
    report["variants"][vname] = vr;
  }

  // Latent-search outcome per non-empty test slice.
  {
    const json log = read_json(root() / score_dir(Variant::kIntroVaeLatSearch) / "latent_search.json");
    std::int64_t n = 0, improved = 0, diverged = 0;
    std::vector<double> reduction;
    for (const auto& s : log.at("slices")) {
      if (s.at("empty").get<bool>()) continue;
      const double a = s.at("initial_loss"), b = s.at("final_loss");
      ++n;
      improved += b <= a ? 1 : 0;
      diverged += s.at("diverged").get<bool>() ? 1 : 0;
      reduction.push_back(a - b);
    }
    report["latent_search"] = {{"steps", log.at("steps")},
                               {"lr", log.at("lr")},
                               {"slices", n},
                               {"not_worse", improved},
                               {"fraction_not_worse", n > 0 ? static_cast<double>(improved) / static_cast<double>(n) : 0.0},
                               {"diverged", diverged},
                               {"reduction", mean_std_json(reduction)}};
  }

  for (const auto& [cls, curves] : plot_curves) {
    const std::string rel = "reports/roc_" + cls + ".svg";
    scoring::write_roc_svg(root() / rel, "ROC (body voxels): " + cls, curves);
    outputs.push_back(rel);
  }

  const auto errors = io::validate_json(report, report_schema());
  if (!errors.empty()) {
    std::string msg = "evaluation report violates its schema:";
    for (const auto& e : errors) msg += "\n  " + e;
    throw Error(msg);
  }
  write_json(reports / "evaluation.json", report);
  manifest_.complete(stage, input_hash, outputs, {{"abnormal_volumes", abnormal_volumes}});
  info(stage + ": wrote " + (reports / "evaluation.json").string());
}

}  // namespace anomaly_recon::pipeline
