#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "anomaly_recon/pipeline/config.hpp"
#include "anomaly_recon/pipeline/run.hpp"

namespace anomaly_recon::pipeline {

enum class TrainStage { kReconVae, kReconIntroVae, kDisc, kSeg };
enum class Variant { kVae, kIntroVae, kIntroVaeLatSearch };

std::string to_string(TrainStage s);
TrainStage train_stage_from_string(const std::string& s);
std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);

struct RunOptions {
  bool force = false;
  // Training stops after this many epochs (or step blocks) in this
  // invocation, leaving a resumable checkpoint behind.
  std::optional<int> stop_after;
  bool quiet = false;
};

/// One experiment rooted at cfg.output_dir. Every stage is skipped when its
/// inputs and outputs are unchanged since it last completed.
class Pipeline {
 public:
  Pipeline(ExperimentConfig cfg, RunOptions opt);

  void gen_phantom();
  void preprocess();
  void train(TrainStage stage);
  void score(Variant variant);
  void evaluate();
  /// gen-phantom, preprocess, the four trainings, the three scorings and
  /// evaluate, in that order.
  void reproduce();

  const std::filesystem::path& root() const { return cfg_.output_dir; }
  const ExperimentConfig& config() const { return cfg_; }

 private:
  void info(const std::string& msg) const;
  std::string digest(const std::string& stage) const;
  bool skip_if_current(const std::string& stage, const std::string& input_hash);

  void train_recon(TrainStage stage);
  void train_disc();
  void train_seg();

  ExperimentConfig cfg_;
  RunOptions opt_;
  RunLock lock_;
  RunManifest manifest_;
};

}  // namespace anomaly_recon::pipeline
