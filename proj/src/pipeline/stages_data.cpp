#include <algorithm>
#include <iostream>

#include "anomaly_recon/data/phantom.hpp"
#include "anomaly_recon/data/preprocess.hpp"
#include "anomaly_recon/error.hpp"
#include "anomaly_recon/io/hash.hpp"
#include "anomaly_recon/pipeline/stages.hpp"
#include "anomaly_recon/scoring/scoring.hpp"
#include "common.hpp"

namespace anomaly_recon::pipeline {

using nlohmann::json;
using namespace detail;

std::string to_string(TrainStage s) {
  switch (s) {
    case TrainStage::kReconVae: return "recon-vae";
    case TrainStage::kReconIntroVae: return "recon-introvae";
    case TrainStage::kDisc: return "disc";
    case TrainStage::kSeg: return "seg";
  }
  return "?";
}

TrainStage train_stage_from_string(const std::string& s) {
  for (auto t : {TrainStage::kReconVae, TrainStage::kReconIntroVae, TrainStage::kDisc, TrainStage::kSeg}) {
    if (to_string(t) == s) return t;
  }
  throw ConfigError("unknown training stage '" + s + "' (expected recon-vae, recon-introvae, disc or seg)");
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::kVae: return "vae";
    case Variant::kIntroVae: return "introvae";
    case Variant::kIntroVaeLatSearch: return "introvae+latsearch";
  }
  return "?";
}

Variant variant_from_string(const std::string& s) {
  for (auto v : {Variant::kVae, Variant::kIntroVae, Variant::kIntroVaeLatSearch}) {
    if (to_string(v) == s) return v;
  }
  throw ConfigError("unknown variant '" + s + "' (expected vae, introvae or introvae+latsearch)");
}

Pipeline::Pipeline(ExperimentConfig cfg, RunOptions opt)
    : cfg_(std::move(cfg)),
      opt_(opt),
      lock_(cfg_.output_dir),
      manifest_(RunManifest::open(cfg_.output_dir, cfg_, opt.force)) {
  torch::set_num_threads(1);
  manifest_.save();
}

void Pipeline::info(const std::string& msg) const {
  if (!opt_.quiet) std::cerr << "[anomaly-recon] " << msg << std::endl;
}

std::string Pipeline::digest(const std::string& stage) const {
  return io::sha256_hex(manifest_.stage(stage).at("outputs").dump());
}

bool Pipeline::skip_if_current(const std::string& stage, const std::string& input_hash) {
  if (opt_.force || !manifest_.up_to_date(stage, input_hash)) return false;
  info(stage + ": up to date, nothing to do");
  return true;
}

void Pipeline::reproduce() {
  gen_phantom();
  preprocess();
  for (auto s : {TrainStage::kReconVae, TrainStage::kReconIntroVae, TrainStage::kDisc, TrainStage::kSeg}) train(s);
  for (auto v : {Variant::kVae, Variant::kIntroVae, Variant::kIntroVaeLatSearch}) score(v);
  evaluate();
}

namespace {

struct VolumePlan {
  std::string id;
  std::string split;
  bool abnormal = false;
  std::uint64_t seed = 0;
};

std::vector<VolumePlan> plan_volumes(const ExperimentConfig& cfg) {
  std::vector<VolumePlan> plan;
  auto add = [&](const std::string& split, int n, bool abnormal) {
    for (int i = 0; i < n; ++i) {
      char id[64];
      std::snprintf(id, sizeof id, "%s_%03d", split.c_str(), i);
      plan.push_back({id, split, abnormal, io::derive_seed(cfg.seed, "phantom/" + split, static_cast<std::uint64_t>(i))});
    }
  };
  add("train", cfg.dataset.train_volumes, false);
  add("seg", cfg.dataset.seg_volumes, false);
  add("test_normal", cfg.dataset.test_normal_volumes, false);
  add("test_abnormal", cfg.dataset.test_abnormal_volumes, true);
  return plan;
}

std::vector<std::int64_t> abnormal_slices(const data::LabelVolume& labels) {
  std::vector<std::int64_t> ks;
  bool any_class = false;
  for (auto cls : data::kAbnormalityClasses) any_class = any_class || labels.has(cls);
  if (!any_class) return ks;
  const Mask3 any = labels.any_abnormality();
  for (std::int64_t k = 0; k < any.depth(); ++k) {
    const auto b = any.data.begin() + static_cast<std::ptrdiff_t>(k * any.plane());
    if (std::any_of(b, b + static_cast<std::ptrdiff_t>(any.plane()), [](std::uint8_t v) { return v != 0; })) {
      ks.push_back(k);
    }
  }
  return ks;
}

}  // namespace

void Pipeline::gen_phantom() {
  const std::string stage = "gen-phantom";
  json inputs = cfg_.to_json()["dataset"];
  inputs["seed"] = cfg_.seed;
  const std::string input_hash = io::sha256_hex(stage + inputs.dump());
  if (skip_if_current(stage, input_hash)) return;

  const auto raw = root() / kRawDir;
  if (fs::exists(raw) && !fs::is_empty(raw)) {
    if (!opt_.force) {
      throw Error("dataset directory " + raw.string() + " already holds data; pass --force to regenerate");
    }
    fs::remove_all(raw);
  }
  fs::create_directories(raw);

  json volumes = json::array();
  std::map<std::string, int> per_split;
  std::map<std::string, int> anomaly_totals;
  std::int64_t train_abnormal = 0;
  for (const auto& v : plan_volumes(cfg_)) {
    data::PhantomConfig pc = cfg_.dataset.phantom;
    pc.seed = v.seed;
    pc.anomaly_counts = v.abnormal ? cfg_.dataset.test_anomaly_counts : std::map<std::string, data::CountRange>{};
    const data::Phantom ph = data::generate_phantom(pc, v.id);
    data::write_volume(raw, ph.volume);
    data::write_labels(raw, v.id, ph.labels, ph.volume.spacing);
    data::write_raw_grid(raw / (v.id + "_body"), data::to_grid(ph.body), ph.volume.spacing);

    const auto ks = abnormal_slices(ph.labels);
    if (v.split == "train") train_abnormal += static_cast<std::int64_t>(ks.size());
    json anomalies = json::array();
    for (const auto& a : ph.anomalies) {
      anomalies.push_back({{"class", a.cls}, {"center", a.center}, {"radius", a.radius}});
      ++anomaly_totals[a.cls];
    }
    volumes.push_back({{"id", v.id},
                       {"split", v.split},
                       {"seed", v.seed},
                       {"anomalies", anomalies},
                       {"abnormal_slices", ks}});
    ++per_split[v.split];
  }
  if (train_abnormal != 0) throw Error("training split contains abnormal slices");
  const json manifest{{"volumes", volumes},
                      {"volumes_per_split", per_split},
                      {"anomalies_per_class", anomaly_totals},
                      {"train_abnormal_slices", train_abnormal}};
  write_json(root() / kDataManifest, manifest);
  auto outputs = list_outputs(root(), kRawDir);
  outputs.push_back(kDataManifest);
  manifest_.complete(stage, input_hash, outputs, {{"volumes_per_split", per_split}, {"anomalies_per_class", anomaly_totals}});
  info(stage + ": wrote " + std::to_string(volumes.size()) + " volumes");
}

void Pipeline::preprocess() {
  const std::string stage = "preprocess";
  const std::string input_hash =
      io::sha256_hex(stage + cfg_.to_json()["preprocess"].dump() + digest("gen-phantom"));
  if (skip_if_current(stage, input_hash)) return;

  const auto raw = root() / kRawDir;
  const auto prep = root() / kPrepDir;
  fs::remove_all(prep);
  fs::create_directories(prep);
  const json data_manifest = read_json(root() / kDataManifest);
  const auto& pp = cfg_.preprocess;

  std::vector<std::string> label_classes(data::kAbnormalityClasses.begin(), data::kAbnormalityClasses.end());
  label_classes.insert(label_classes.end(), data::kAnatomyClasses.begin(), data::kAnatomyClasses.end());

  // Reference intensity template from the resampled training volumes.
  std::vector<data::Volume> train;
  for (const auto& v : data_manifest.at("volumes")) {
    if (v.at("split") == "train") {
      train.push_back(data::resample_volume(data::read_volume(raw, v.at("id")), pp.target_spacing));
    }
  }
  if (train.empty()) throw MissingArtifact("no training volumes in " + (root() / kDataManifest).string());
  std::vector<const data::Volume*> train_ptrs;
  for (const auto& v : train) train_ptrs.push_back(&v);
  const auto reference = data::build_reference_histogram(train_ptrs, pp.foreground_threshold, pp.histogram_bins);

  json index = json::array();
  std::int64_t empty_total = 0;
  for (const auto& entry : data_manifest.at("volumes")) {
    const std::string id = entry.at("id");
    const data::Volume raw_v = data::read_volume(raw, id);
    const data::Volume res = data::resample_volume(raw_v, pp.target_spacing);
    const data::Volume matched = data::histogram_match(res, reference, pp.foreground_threshold);
    const auto slices = data::decompose_and_crop(matched, pp.image_size);
    const Mask3 body = scoring::body_mask(matched);

    const auto K = static_cast<std::int64_t>(slices.size());
    Grid3 image(K, pp.image_size, pp.image_size);
    std::vector<std::int64_t> empty;
    for (std::int64_t k = 0; k < K; ++k) {
      const auto& s = slices[static_cast<std::size_t>(k)];
      try {
        image.set_slice(k, data::renormalize(s.data, id, k).data);
      } catch (const DegenerateInput&) {
        image.set_slice(k, Image(pp.image_size, pp.image_size, -1.0));
        empty.push_back(k);
      }
    }
    empty_total += static_cast<std::int64_t>(empty.size());

    auto crop_mask = [&](const Mask3& m) {
      Mask3 out(K, pp.image_size, pp.image_size);
      for (std::int64_t k = 0; k < K; ++k) {
        out.set_slice(k, data::center_crop_or_pad<std::uint8_t>(m.slice(k), pp.image_size, 0));
      }
      return out;
    };
    data::LabelVolume labels;
    for (const auto& cls : label_classes) {
      const auto stem = raw / (id + "_" + cls);
      const auto m = data::to_mask(data::read_raw_grid(stem).grid);
      labels.masks[cls] = crop_mask(data::resample_mask(m, raw_v.spacing, pp.target_spacing));
    }
    const auto ks = abnormal_slices(labels);
    write_grid(prep / (id + "_image"), image,
               json{{"empty_slices", empty}, {"abnormal_slices", ks}, {"source", id}});
    write_grid(prep / (id + "_body"), data::to_grid(crop_mask(body)));
    data::write_labels(prep, id, labels, {1.0, 1.0, 1.0});
    index.push_back({{"id", id}, {"split", entry.at("split")}, {"depth", K}, {"empty_slices", empty}, {"abnormal_slices", ks}});
  }
  write_json(root() / kPrepIndex,
             {{"volumes", index},
              {"image_size", pp.image_size},
              {"reference_histogram", {{"lo", reference.lo}, {"hi", reference.hi}, {"bins", reference.counts.size()}}}});
  manifest_.complete(stage, input_hash, list_outputs(root(), kPrepDir),
                     {{"volumes", index.size()}, {"empty_slices", empty_total}});
  info(stage + ": prepared " + std::to_string(index.size()) + " volumes");
}

}  // namespace anomaly_recon::pipeline
