#include "anomaly_recon/pipeline/config.hpp"

#include <cstdlib>
#include <fstream>

#include "anomaly_recon/error.hpp"
#include "anomaly_recon/io/json_schema.hpp"
#include "embedded_resources.hpp"

namespace anomaly_recon::pipeline {

using nlohmann::json;

namespace {

json counts_to_json(const std::map<std::string, data::CountRange>& m) {
  json j = json::object();
  for (const auto& [k, v] : m) j[k] = {v.min, v.max};
  return j;
}

std::map<std::string, data::CountRange> counts_from_json(const json& j) {
  std::map<std::string, data::CountRange> m;
  for (const auto& [k, v] : j.items()) m[k] = {v.at(0).get<int>(), v.at(1).get<int>()};
  return m;
}

json parse_embedded(const char* text, const char* what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw Error(std::string("embedded ") + what + " is malformed: " + e.what());
  }
}

}  // namespace

json ExperimentConfig::to_json() const {
  json phantom = dataset.phantom.to_json();
  phantom.erase("seed");
  phantom.erase("anomaly_counts");
  return {
      {"profile", profile},
      {"seed", seed},
      {"output_dir", output_dir.string()},
      {"dataset",
       {{"train_volumes", dataset.train_volumes},
        {"seg_volumes", dataset.seg_volumes},
        {"test_normal_volumes", dataset.test_normal_volumes},
        {"test_abnormal_volumes", dataset.test_abnormal_volumes},
        {"seg_split", dataset.seg_split},
        {"phantom", phantom},
        {"test_anomaly_counts", counts_to_json(dataset.test_anomaly_counts)}}},
      {"preprocess",
       {{"image_size", preprocess.image_size},
        {"target_spacing", preprocess.target_spacing},
        {"foreground_threshold", preprocess.foreground_threshold},
        {"histogram_bins", preprocess.histogram_bins}}},
      {"augment",
       {{"flip_probability", augment.flip_probability},
        {"min_scale", augment.min_scale},
        {"max_scale", augment.max_scale},
        {"max_rotation_deg", augment.max_rotation_deg}}},
      {"recon",
       {{"arch", recon.arch.to_json()},
        {"hyper", recon.hyper.to_json()},
        {"batch_size", recon.batch_size},
        {"epochs", recon.epochs},
        {"vae_warmup_epochs", recon.vae_warmup_epochs},
        {"augment", recon.augment}}},
      {"latent_search",
       {{"steps", latent_search.steps}, {"lr", latent_search.lr}, {"divergence_factor", latent_search.divergence_factor}}},
      {"disc",
       {{"arch", disc.arch.to_json()},
        {"triplet", disc.triplet.to_json()},
        {"lr", disc.lr},
        {"batch_size", disc.batch_size},
        {"steps", disc.steps}}},
      {"seg",
       {{"arch", seg.arch.to_json()},
        {"focal_gamma", seg.loss.focal_gamma},
        {"dice_eps", seg.loss.dice_eps},
        {"lr", seg.lr},
        {"weight_decay", seg.weight_decay},
        {"batch_size", seg.batch_size},
        {"epochs", seg.epochs},
        {"max_rotation_deg", seg.max_rotation_deg}}},
      {"scoring", {{"stride", scoring.stride}, {"zscore_region", scoring.zscore_region}}},
      {"evaluation", {{"classes", evaluation_classes}}},
  };
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  ExperimentConfig c;
  c.profile = j.at("profile");
  c.seed = j.at("seed");
  c.output_dir = j.at("output_dir").get<std::string>();

  const auto& d = j.at("dataset");
  c.dataset.train_volumes = d.at("train_volumes");
  c.dataset.seg_volumes = d.at("seg_volumes");
  c.dataset.test_normal_volumes = d.at("test_normal_volumes");
  c.dataset.test_abnormal_volumes = d.at("test_abnormal_volumes");
  c.dataset.seg_split = d.at("seg_split");
  c.dataset.phantom = data::PhantomConfig::from_json(d.at("phantom"));
  c.dataset.test_anomaly_counts = counts_from_json(d.at("test_anomaly_counts"));

  const auto& p = j.at("preprocess");
  c.preprocess.image_size = p.at("image_size");
  c.preprocess.target_spacing = p.at("target_spacing");
  c.preprocess.foreground_threshold = p.at("foreground_threshold");
  c.preprocess.histogram_bins = p.at("histogram_bins");

  const auto& a = j.at("augment");
  c.augment.flip_probability = a.at("flip_probability");
  c.augment.min_scale = a.at("min_scale");
  c.augment.max_scale = a.at("max_scale");
  c.augment.max_rotation_deg = a.at("max_rotation_deg");

  const auto& r = j.at("recon");
  c.recon.arch = recon::ReconArch::from_json(r.at("arch"));
  c.recon.hyper = recon::ReconHyper::from_json(r.at("hyper"));
  c.recon.batch_size = r.at("batch_size");
  c.recon.epochs = r.at("epochs");
  c.recon.vae_warmup_epochs = r.at("vae_warmup_epochs");
  c.recon.augment = r.at("augment");

  const auto& ls = j.at("latent_search");
  c.latent_search.steps = ls.at("steps");
  c.latent_search.lr = ls.at("lr");
  c.latent_search.divergence_factor = ls.at("divergence_factor");

  const auto& ds = j.at("disc");
  c.disc.arch = disc::DiscArch::from_json(ds.at("arch"));
  c.disc.triplet = disc::TripletOptions::from_json(ds.at("triplet"));
  c.disc.lr = ds.at("lr");
  c.disc.batch_size = ds.at("batch_size");
  c.disc.steps = ds.at("steps");

  const auto& s = j.at("seg");
  c.seg.arch = fidelity::SegArch::from_json(s.at("arch"));
  c.seg.loss.focal_gamma = s.at("focal_gamma");
  c.seg.loss.dice_eps = s.at("dice_eps");
  c.seg.lr = s.at("lr");
  c.seg.weight_decay = s.at("weight_decay");
  c.seg.batch_size = s.at("batch_size");
  c.seg.epochs = s.at("epochs");
  c.seg.max_rotation_deg = s.at("max_rotation_deg");

  c.scoring.stride = j.at("scoring").at("stride");
  c.scoring.zscore_region = j.at("scoring").at("zscore_region");
  c.evaluation_classes = j.at("evaluation").at("classes").get<std::vector<std::string>>();
  return c;
}

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("config: " + m); };
  const auto s = preprocess.image_size;
  if (recon.arch.image_size != s) fail("recon.arch.image_size must equal preprocess.image_size");
  if (seg.arch.image_size != s) fail("seg.arch.image_size must equal preprocess.image_size");
  if (seg.arch.num_classes != data::kNumAnatomyClasses) {
    fail("seg.arch.num_classes must be " + std::to_string(data::kNumAnatomyClasses));
  }
  if (disc.triplet.patch_size != disc.arch.patch_size) fail("disc.triplet.patch_size must equal disc.arch.patch_size");
  if (disc.arch.patch_size / 2 >= s) fail("disc patch size too large for the image size");
  if (augment.min_scale > augment.max_scale) fail("augment.min_scale exceeds augment.max_scale");
  if (recon.vae_warmup_epochs > recon.epochs) fail("recon.vae_warmup_epochs exceeds recon.epochs");
  double split = 0.0;
  for (double f : dataset.seg_split) split += f;
  if (std::abs(split - 1.0) > 1e-9) fail("dataset.seg_split must sum to 1");
  for (const auto& [cls, range] : dataset.test_anomaly_counts) {
    if (std::find(data::kAbnormalityClasses.begin(), data::kAbnormalityClasses.end(), cls) ==
        data::kAbnormalityClasses.end()) {
      fail("unknown abnormality class '" + cls + "'");
    }
    if (range.min > range.max) fail("anomaly count range for " + cls + " is reversed");
  }
  for (const auto& cls : evaluation_classes) {
    if (std::find(data::kAbnormalityClasses.begin(), data::kAbnormalityClasses.end(), cls) ==
        data::kAbnormalityClasses.end()) {
      fail("unknown evaluation class '" + cls + "'");
    }
  }
  try {
    auto ph = dataset.phantom;
    ph.anomaly_counts = dataset.test_anomaly_counts;
    ph.validate();
  } catch (const InvalidArgument& e) {
    fail(e.what());
  }
}

json profile_defaults(const std::string& profile) {
  if (profile == "desk") return parse_embedded(resources::kDeskConfig, "desk profile");
  if (profile == "paper") return parse_embedded(resources::kPaperConfig, "paper profile");
  throw ConfigError("unknown profile '" + profile + "' (expected desk or paper)");
}

const json& config_schema() {
  static const json s = parse_embedded(resources::kConfigSchema, "config schema");
  return s;
}

const json& report_schema() {
  static const json s = parse_embedded(resources::kReportSchema, "report schema");
  return s;
}

json merge_json(json base, const json& overlay) {
  if (!base.is_object() || !overlay.is_object()) return overlay;
  for (const auto& [k, v] : overlay.items()) {
    base[k] = base.contains(k) ? merge_json(base[k], v) : v;
  }
  return base;
}

ExperimentConfig load_config(const std::optional<std::filesystem::path>& path, const ConfigOverrides& overrides) {
  json user = json::object();
  if (path) {
    std::ifstream f(*path);
    if (!f) throw ConfigError("cannot read config file " + path->string());
    try {
      user = json::parse(f);
    } catch (const json::exception& e) {
      throw ConfigError("config file " + path->string() + " is not valid JSON: " + e.what());
    }
    if (!user.is_object()) throw ConfigError("config file must hold a JSON object");
  }
  std::string profile = overrides.profile.value_or(user.value("profile", std::string("desk")));
  json merged = merge_json(profile_defaults(profile), user);
  merged["profile"] = profile;
  if (overrides.seed) merged["seed"] = *overrides.seed;

  const auto errors = io::validate_json(merged, config_schema());
  if (!errors.empty()) {
    std::string msg = "config does not match the schema:";
    for (const auto& e : errors) msg += "\n  " + e;
    throw ConfigError(msg);
  }
  ExperimentConfig c;
  try {
    c = ExperimentConfig::from_json(merged);
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (c.output_dir.is_relative()) {
    const char* cache = std::getenv("ANOMALY_RECON_CACHE");
    const std::filesystem::path root = cache && *cache ? std::filesystem::path(cache) : std::filesystem::current_path();
    c.output_dir = root / c.output_dir;
  }
  c.validate();
  return c;
}

}  // namespace anomaly_recon::pipeline
