#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "anomaly_recon/error.hpp"
#include "anomaly_recon/pipeline/config.hpp"
#include "anomaly_recon/pipeline/stages.hpp"

namespace {

using namespace anomaly_recon;
using namespace anomaly_recon::pipeline;

struct CommonOptions {
  std::optional<std::string> config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> profile;
  std::optional<std::string> output_dir;
  bool force = false;
  bool quiet = false;
  std::optional<int> stop_after;
};

void add_common(CLI::App* cmd, CommonOptions& o, bool with_stop_after) {
  cmd->add_option("--config", o.config, "Experiment configuration (JSON); profile defaults fill the rest")
      ->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "Override the experiment seed");
  cmd->add_option("--profile", o.profile, "Scale profile")->check(CLI::IsMember({"desk", "paper"}));
  cmd->add_option("--output-dir", o.output_dir, "Override the output directory");
  cmd->add_flag("--force", o.force, "Overwrite existing outputs and rerun stages");
  cmd->add_flag("--quiet", o.quiet, "Suppress progress messages");
  if (with_stop_after) {
    cmd->add_option("--stop-after", o.stop_after, "Stop after this many epochs or step blocks, leaving a checkpoint")
        ->check(CLI::PositiveNumber);
  }
}

Pipeline make_pipeline(const CommonOptions& o) {
  ConfigOverrides ov{o.profile, o.seed};
  std::optional<std::filesystem::path> path;
  if (o.config) path = *o.config;
  auto cfg = load_config(path, ov);
  if (o.output_dir) cfg.output_dir = std::filesystem::absolute(*o.output_dir);
  return Pipeline(std::move(cfg), RunOptions{o.force, o.stop_after, o.quiet});
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reconstruction-based anomaly detection on synthetic head phantoms"};
  app.require_subcommand(1);
  CommonOptions opt;
  std::string stage_name, variant_name;

  auto* gen = app.add_subcommand("gen-phantom", "Generate the phantom dataset");
  add_common(gen, opt, false);
  auto* prep = app.add_subcommand("preprocess", "Resample, standardise, crop and renormalise the dataset");
  add_common(prep, opt, false);
  auto* train = app.add_subcommand("train", "Train one network");
  add_common(train, opt, true);
  train->add_option("--stage", stage_name, "Network to train")
      ->required()
      ->check(CLI::IsMember({"recon-vae", "recon-introvae", "disc", "seg"}));
  auto* score = app.add_subcommand("score", "Compute abnormality maps for the test volumes");
  add_common(score, opt, false);
  score->add_option("--variant", variant_name, "Reconstruction variant")
      ->required()
      ->check(CLI::IsMember({"vae", "introvae", "introvae+latsearch"}));
  auto* eval = app.add_subcommand("evaluate", "Write the detection and fidelity report");
  add_common(eval, opt, false);
  auto* repro = app.add_subcommand("reproduce-desk", "Run every stage with the desk profile");
  add_common(repro, opt, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ExitCode::kConfig);
  }

  try {
    if (repro->parsed()) {
      if (opt.profile && *opt.profile != "desk") throw ConfigError("reproduce-desk runs the desk profile only");
      opt.profile = "desk";
    }
    Pipeline p = make_pipeline(opt);
    if (gen->parsed()) p.gen_phantom();
    if (prep->parsed()) p.preprocess();
    if (train->parsed()) p.train(train_stage_from_string(stage_name));
    if (score->parsed()) p.score(variant_from_string(variant_name));
    if (eval->parsed()) p.evaluate();
    if (repro->parsed()) p.reproduce();
  } catch (const Error& e) {
    std::cerr << "anomaly-recon: " << e.what() << "\n";
    return static_cast<int>(e.code());
  } catch (const c10::Error& e) {
    std::cerr << "anomaly-recon: torch error: " << e.what_without_backtrace() << "\n";
    return static_cast<int>(ExitCode::kNumeric);
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "anomaly-recon: malformed JSON artifact: " << e.what() << "\n";
    return static_cast<int>(ExitCode::kFailure);
  } catch (const std::exception& e) {
    std::cerr << "anomaly-recon: " << e.what() << "\n";
    return static_cast<int>(ExitCode::kFailure);
  }
  return 0;
}
