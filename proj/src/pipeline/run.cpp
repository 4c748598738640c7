#include "anomaly_recon/pipeline/run.hpp"

#include <chrono>
#include <ctime>
#include <fstream>

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include "anomaly_recon/error.hpp"
#include "anomaly_recon/io/hash.hpp"

namespace anomaly_recon::pipeline {

using nlohmann::json;
namespace fs = std::filesystem;

RunLock::RunLock(const fs::path& dir) {
  fs::create_directories(dir);
  const auto path = dir / ".lock";
  fd_ = ::open(path.c_str(), O_RDWR | O_CREAT, 0644);
  if (fd_ < 0) throw Error("cannot open lock file " + path.string());
  if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
    ::close(fd_);
    fd_ = -1;
    throw Error("output directory " + dir.string() + " is in use by another run");
  }
}

RunLock::~RunLock() {
  if (fd_ >= 0) {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
}

namespace {

std::string now_utc() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

std::string config_hash(const ExperimentConfig& cfg) {
  json j = cfg.to_json();
  j.erase("output_dir");
  return io::sha256_hex(j.dump());
}

RunManifest::RunManifest(fs::path root, std::string hash, json config)
    : root_(std::move(root)), config_hash_(std::move(hash)) {
  doc_ = {{"config_hash", config_hash_},
          {"config", std::move(config)},
          {"stages", json::object()},
          {"events", json::array()}};
}

RunManifest RunManifest::open(const fs::path& root, const ExperimentConfig& cfg, bool adopt) {
  json stored_cfg = cfg.to_json();
  stored_cfg.erase("output_dir");
  RunManifest m(root, pipeline::config_hash(cfg), stored_cfg);
  const auto path = root / "run_manifest.json";
  if (!fs::exists(path)) return m;
  json existing;
  {
    std::ifstream f(path);
    try {
      existing = json::parse(f);
    } catch (const json::exception& e) {
      throw Error("corrupt run manifest " + path.string() + ": " + e.what());
    }
  }
  const bool same = existing.value("config_hash", "") == m.config_hash_;
  if (!same && !adopt) {
    throw ConfigError("output directory " + root.string() +
                      " belongs to a different configuration; use --force to adopt the new one");
  }
  m.doc_["events"] = existing.value("events", json::array());
  // Stage records survive a configuration change; their input hashes decide
  // which stages are stale under the new configuration.
  m.doc_["stages"] = existing.value("stages", json::object());
  if (!same) m.log("*", "adopted a new configuration");
  return m;
}

bool RunManifest::up_to_date(const std::string& stage, const std::string& input_hash) const {
  const auto& stages = doc_["stages"];
  if (!stages.contains(stage)) return false;
  const auto& s = stages[stage];
  if (!s.value("completed", false) || s.value("input_hash", "") != input_hash) return false;
  for (const auto& [rel, sha] : s["outputs"].items()) {
    const auto p = root_ / rel;
    if (!fs::exists(p) || io::sha256_file(p) != sha.get<std::string>()) return false;
  }
  return true;
}

void RunManifest::complete(const std::string& stage, const std::string& input_hash,
                           const std::vector<std::string>& outputs, const json& metrics) {
  json out = json::object();
  for (const auto& rel : outputs) out[rel] = io::sha256_file(root_ / rel);
  doc_["stages"][stage] = {{"completed", true},
                           {"input_hash", input_hash},
                           {"outputs", out},
                           {"metrics", metrics},
                           {"completed_at", now_utc()}};
  log(stage, "completed");
}

void RunManifest::log(const std::string& stage, const std::string& event) {
  doc_["events"].push_back({{"time", now_utc()}, {"stage", stage}, {"event", event}});
  save();
}

const json& RunManifest::stage(const std::string& name) const {
  const auto& stages = doc_["stages"];
  if (!stages.contains(name)) throw MissingArtifact("stage '" + name + "' has not been run");
  return stages[name];
}

std::string RunManifest::output_hash(const std::string& stage_name, const std::string& rel) const {
  const auto& s = stage(stage_name);
  if (!s["outputs"].contains(rel)) throw MissingArtifact("stage '" + stage_name + "' did not produce " + rel);
  return s["outputs"][rel];
}

void RunManifest::save() const {
  fs::create_directories(root_);
  const auto path = root_ / "run_manifest.json";
  const auto tmp = root_ / "run_manifest.json.tmp";
  {
    std::ofstream f(tmp);
    if (!f) throw Error("cannot write " + tmp.string());
    f << doc_.dump(2) << '\n';
  }
  fs::rename(tmp, path);
}

}  // namespace anomaly_recon::pipeline
