// Acceptance suite: one PASS/FAIL line per criterion.
//
//   acceptance [--work-dir DIR] [--reuse]
//
// Runs the oracle and gradient unit suites, then `reproduce-desk` twice into
// separate directories and checks the evaluation reports. With --reuse an
// existing report in DIR/run_a and DIR/run_b is checked without rerunning.
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kOracleBudgetSeconds = 120.0;
constexpr double kGradientBudgetSeconds = 300.0;
constexpr double kDeskBudgetSeconds = 12.0 * 3600.0;
constexpr std::int64_t kMinSearchSlices = 200;
constexpr double kMinNotWorse = 0.95;
constexpr std::int64_t kMinFidelitySlices = 100;
constexpr double kMinBlobAuc = 0.80;
constexpr double kMinCavityAuc = 0.85;
constexpr double kMinSnrFraction = 0.80;
constexpr double kAucSlack = 1e-12;

const std::string kBlob = "metastatic_tumor_analog";
const std::string kCavity = "cavity_analog";
const std::string kLatSearch = "introvae+latsearch";

struct Timed {
  int status = -1;
  double seconds = 0.0;
};

Timed run(const std::string& cmd, const fs::path& log) {
  const auto t0 = std::chrono::steady_clock::now();
  const int rc = std::system((cmd + " > \"" + log.string() + "\" 2>&1").c_str());
  const auto t1 = std::chrono::steady_clock::now();
  return {rc, std::chrono::duration<double>(t1 - t0).count()};
}

std::string fmt(double v, int prec = 4) {
  std::ostringstream s;
  s.precision(prec);
  s << v;
  return s.str();
}

int failures = 0;

void verdict(int id, bool pass, const std::string& name, const std::string& detail) {
  if (!pass) ++failures;
  std::cout << "criterion " << id << " " << (pass ? "PASS" : "FAIL") << "  " << name << ": " << detail << std::endl;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

double mean_of(const json& stat) { return stat.at("mean").get<double>(); }
double se_of(const json& stat) { return stat.at("se").get<double>(); }

void check_unit_suite(int id, const std::string& name, const std::string& suite, double budget, const fs::path& work) {
  const auto r = run("\"" UNIT_TESTS_PATH "\" -ts=" + suite, work / (suite + ".log"));
  const bool ok = r.status == 0;
  verdict(id, ok && r.seconds < budget, name,
          std::string(ok ? "all cases passed" : "failures, see " + (work / (suite + ".log")).string()) + " in " +
              fmt(r.seconds, 3) + " s (budget " + fmt(budget, 3) + " s)");
}

void check_search(const json& rep) {
  const auto& ls = rep.at("latent_search");
  const auto n = ls.at("slices").get<std::int64_t>();
  const double frac = ls.at("fraction_not_worse");
  const double red = mean_of(ls.at("reduction"));
  verdict(3, n >= kMinSearchSlices && frac >= kMinNotWorse && red > 0.0, "latent search does not worsen L_AE",
          std::to_string(n) + " slices, not worse on " + fmt(100.0 * frac) + "%, mean reduction " + fmt(red));
}

void check_fidelity(const json& rep) {
  const auto& v = rep.at("variants");
  bool ok = true;
  std::string detail;
  for (const char* metric : {"quality", "overlap"}) {
    const auto& a = v.at(kLatSearch).at("fidelity");
    const auto& b = v.at("introvae").at("fidelity");
    const auto& c = v.at("vae").at("fidelity");
    const auto n = std::min({a.at("slices").get<std::int64_t>(), b.at("slices").get<std::int64_t>(),
                             c.at("slices").get<std::int64_t>()});
    const double ma = mean_of(a.at(metric)), mb = mean_of(b.at(metric)), mc = mean_of(c.at(metric));
    // Standard error of a difference of two independent means.
    const double se_ab = std::hypot(se_of(a.at(metric)), se_of(b.at(metric)));
    const double se_bc = std::hypot(se_of(b.at(metric)), se_of(c.at(metric)));
    const bool m_ok = n >= kMinFidelitySlices && ma - mb >= 0.0 && ma - mb > se_ab && mb - mc > se_bc;
    ok = ok && m_ok;
    detail += std::string(detail.empty() ? "" : "; ") + metric + " " + fmt(ma) + " / " + fmt(mb) + " / " + fmt(mc) +
              " (gaps " + fmt(ma - mb) + " vs SE " + fmt(se_ab) + ", " + fmt(mb - mc) + " vs SE " + fmt(se_bc) +
              ", n=" + std::to_string(n) + ")";
  }
  verdict(4, ok, "fidelity ordering LatSearch >= IntroVAE > VAE", detail);
}

void check_detection(const json& rep, double wall_seconds) {
  const auto& v = rep.at("variants");
  const auto auc = [&](const std::string& variant, const std::string& cls) {
    const auto& d = v.at(variant).at("detection").at(cls);
    return d.at("present").get<bool>() ? mean_of(d.at("auc")) : std::nan("");
  };
  const double blob_ls = auc(kLatSearch, kBlob), blob_vae = auc("vae", kBlob);
  const double cav_ls = auc(kLatSearch, kCavity), cav_vae = auc("vae", kCavity);
  const bool ok = blob_ls >= blob_vae && cav_ls >= cav_vae && blob_ls >= kMinBlobAuc && cav_ls >= kMinCavityAuc &&
                  wall_seconds <= kDeskBudgetSeconds;
  verdict(5, ok, "detection directionality",
          "blob AUC " + fmt(blob_ls) + " (VAE " + fmt(blob_vae) + ", need >= " + fmt(kMinBlobAuc) + "), cavity AUC " +
              fmt(cav_ls) + " (VAE " + fmt(cav_vae) + ", need >= " + fmt(kMinCavityAuc) + "), wall time " +
              fmt(wall_seconds / 60.0, 3) + " min");
}

void check_snr(const json& rep) {
  const auto& s = rep.at("variants").at(kLatSearch).at("signal_to_noise");
  const auto n = s.at("slices").get<std::int64_t>();
  const double frac = s.at("fraction");
  verdict(6, n > 0 && frac >= kMinSnrFraction, "embedding map beats L1 in/out ratio",
          std::to_string(s.at("embedding_exceeds_l1").get<std::int64_t>()) + " of " + std::to_string(n) +
              " blob slices (" + fmt(100.0 * frac) + "%), mean ratios " + fmt(mean_of(s.at("embedding_ratio"))) +
              " vs " + fmt(mean_of(s.at("l1_ratio"))));
}

void check_rectification(const json& rep) {
  std::int64_t pairs = 0, violations = 0;
  double worst = 0.0;
  for (const auto& [name, variant] : rep.at("variants").items()) {
    for (const auto& vol : variant.at("per_volume")) {
      for (const auto& [cls, body] : vol.at("rectified").items()) {
        if (body.is_null()) continue;
        const double all = vol.at("all_voxels").at(cls);
        ++pairs;
        if (all + kAucSlack < body.get<double>()) {
          ++violations;
          worst = std::max(worst, body.get<double>() - all);
        }
      }
    }
  }
  verdict(7, pairs > 0 && violations == 0, "all-voxel AUC >= body AUC per volume",
          std::to_string(pairs - violations) + " of " + std::to_string(pairs) +
              " (variant, volume, class) pairs hold" + (violations ? ", worst shortfall " + fmt(worst) : ""));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  fs::path work = ACCEPTANCE_WORK_DIR;
  bool reuse = false;
  app.add_option("--work-dir", work, "Scratch directory for the reproduction runs");
  app.add_flag("--reuse", reuse, "Check existing reports instead of rerunning");
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(work);

  check_unit_suite(1, "math oracles", "oracle", kOracleBudgetSeconds, work);
  check_unit_suite(2, "finite-difference gradients", "gradient", kGradientBudgetSeconds, work);

  const fs::path dirs[2] = {work / "run_a", work / "run_b"};
  double wall = std::nan("");
  bool runs_ok = true;
  for (int i = 0; i < 2; ++i) {
    const auto report = dirs[i] / "reports/evaluation.json";
    if (reuse && fs::exists(report)) continue;
    fs::remove_all(dirs[i]);
    const auto r = run("\"" CLI_PATH "\" reproduce-desk --output-dir \"" + dirs[i].string() + "\"",
                       work / ("reproduce_" + std::to_string(i) + ".log"));
    if (i == 0) {
      wall = r.seconds;
      std::ofstream(work / "reproduce_0.seconds") << fmt(wall, 10) << "\n";
    }
    if (r.status != 0) {
      runs_ok = false;
      std::cout << "reproduce-desk run " << i << " failed; see " << (work / ("reproduce_" + std::to_string(i) + ".log"))
                << std::endl;
    }
  }
  if (std::isnan(wall)) {
    // Reused run: take the wall time recorded when it was produced.
    std::ifstream in(work / "reproduce_0.seconds");
    if (!(in >> wall)) wall = std::nan("");
  }

  json rep;
  if (runs_ok) {
    std::ifstream in(dirs[0] / "reports/evaluation.json");
    rep = json::parse(in, nullptr, false);
  }
  if (!runs_ok || rep.is_discarded()) {
    for (int id = 3; id <= 8; ++id) verdict(id, false, "desk reproduction", "no evaluation report");
  } else {
    check_search(rep);
    check_fidelity(rep);
    check_detection(rep, wall);
    check_snr(rep);
    check_rectification(rep);
    const auto a = read_file(dirs[0] / "reports/evaluation.json");
    const auto b = read_file(dirs[1] / "reports/evaluation.json");
    verdict(8, !a.empty() && a == b, "byte-identical reports from two runs",
            std::to_string(a.size()) + " bytes, " + (a == b ? "identical" : "different"));
  }
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criterion/criteria failed")
            << std::endl;
  return failures == 0 ? 0 : 1;
}
