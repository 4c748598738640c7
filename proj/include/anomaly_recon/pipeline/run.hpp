#pragma once

#include <filesystem>
#include <map>
#include <string>

#include <json.hpp>

#include "anomaly_recon/pipeline/config.hpp"

namespace anomaly_recon::pipeline {

/// Exclusive advisory lock on <dir>/.lock held for the object's lifetime.
/// Throws Error when another process owns the directory.
class RunLock {
 public:
  explicit RunLock(const std::filesystem::path& dir);
  ~RunLock();
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  int fd_ = -1;
};

/// Stage bookkeeping persisted as <output_dir>/run_manifest.json. Stage
/// records are replaced as stages rerun; the event log only grows.
class RunManifest {
 public:
  RunManifest(std::filesystem::path root, std::string config_hash, nlohmann::json config);

  /// Loads the manifest of `root` or starts a new one. Throws ConfigError
  /// when the stored config hash differs, unless `adopt` is set. Stage
  /// records are kept either way; stage input hashes decide what reruns.
  static RunManifest open(const std::filesystem::path& root, const ExperimentConfig& cfg, bool adopt);

  /// True when `stage` completed with `input_hash` and every recorded output
  /// still has its recorded content hash.
  bool up_to_date(const std::string& stage, const std::string& input_hash) const;

  /// Records a completed stage; output paths are relative to the root.
  void complete(const std::string& stage, const std::string& input_hash, const std::vector<std::string>& outputs,
                const nlohmann::json& metrics);
  void log(const std::string& stage, const std::string& event);

  const nlohmann::json& stage(const std::string& name) const;
  std::string output_hash(const std::string& stage, const std::string& rel) const;
  const std::string& config_hash() const { return config_hash_; }
  void save() const;

 private:
  std::filesystem::path root_;
  std::string config_hash_;
  nlohmann::json doc_;
};

/// Hash of the configuration with the machine-specific output directory
/// removed, so that identical experiments hash identically anywhere.
std::string config_hash(const ExperimentConfig& cfg);

}  // namespace anomaly_recon::pipeline
