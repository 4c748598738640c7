#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "anomaly_recon/data/phantom.hpp"
#include "anomaly_recon/data/preprocess.hpp"
#include "anomaly_recon/discriminative/embedding.hpp"
#include "anomaly_recon/fidelity/fidelity.hpp"
#include "anomaly_recon/recon/latent_search.hpp"
#include "anomaly_recon/recon/model.hpp"

namespace anomaly_recon::pipeline {

struct DatasetConfig {
  int train_volumes = 40;
  int seg_volumes = 20;
  int test_normal_volumes = 4;
  int test_abnormal_volumes = 12;
  std::array<double, 3> seg_split{0.70, 0.15, 0.15};  // train / validation / test
  data::PhantomConfig phantom;                         // anatomy settings shared by all volumes
  std::map<std::string, data::CountRange> test_anomaly_counts;
};

struct PreprocessConfig {
  std::int64_t image_size = 64;
  std::array<double, 3> target_spacing{1.0, 1.0, 1.0};
  double foreground_threshold = 0.0;
  std::size_t histogram_bins = 1024;
};

struct ReconTrainConfig {
  recon::ReconArch arch;
  recon::ReconHyper hyper;
  int batch_size = 120;
  int epochs = 200;
  // IntroVAE runs plain VAE steps for this many initial epochs.
  int vae_warmup_epochs = 0;
  bool augment = true;
};

struct DiscTrainConfig {
  disc::DiscArch arch;
  disc::TripletOptions triplet;
  double lr = 1e-4;
  int batch_size = 64;
  int steps = 2000;
};

struct SegTrainConfig {
  fidelity::SegArch arch;
  fidelity::SegLossOptions loss;
  double lr = 1e-5;
  double weight_decay = 1e-5;
  int batch_size = 100;
  int epochs = 1000;
  double max_rotation_deg = 10.0;
};

struct ScoringConfig {
  std::int64_t stride = 4;
  std::string zscore_region = "image";  // "image" | "body"
};

struct ExperimentConfig {
  std::string profile = "desk";
  std::uint64_t seed = 0;
  std::filesystem::path output_dir;
  DatasetConfig dataset;
  PreprocessConfig preprocess;
  data::AugmentRanges augment;
  ReconTrainConfig recon;
  recon::LatentSearchOptions latent_search;
  DiscTrainConfig disc;
  SegTrainConfig seg;
  ScoringConfig scoring;
  std::vector<std::string> evaluation_classes{data::kAbnormalityClasses.begin(), data::kAbnormalityClasses.end()};

  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
  /// Cross-field checks (image sizes agree between modules, ranges ordered).
  void validate() const;
};

/// Built-in defaults for a named profile ("desk" or "paper") as JSON.
nlohmann::json profile_defaults(const std::string& profile);

/// The published configuration schema.
const nlohmann::json& config_schema();
/// The published evaluation-report schema.
const nlohmann::json& report_schema();

/// Recursive merge: objects merge key by key, everything else is replaced.
nlohmann::json merge_json(nlohmann::json base, const nlohmann::json& overlay);

struct ConfigOverrides {
  std::optional<std::string> profile;
  std::optional<std::uint64_t> seed;
};

/// Loads profile defaults, overlays the optional config file and the command
/// line overrides, validates against the schema and the cross-field rules,
/// and resolves a relative output directory against ANOMALY_RECON_CACHE (or
/// the working directory). Throws ConfigError with every violation listed.
ExperimentConfig load_config(const std::optional<std::filesystem::path>& path, const ConfigOverrides& overrides);

}  // namespace anomaly_recon::pipeline
