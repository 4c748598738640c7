#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "anomaly_recon/data/preprocess.hpp"
#include "anomaly_recon/discriminative/embedding.hpp"
#include "anomaly_recon/error.hpp"
#include "anomaly_recon/fidelity/fidelity.hpp"
#include "anomaly_recon/io/checkpoint.hpp"
#include "anomaly_recon/io/hash.hpp"
#include "anomaly_recon/pipeline/stages.hpp"
#include "anomaly_recon/recon/trainer.hpp"
#include "common.hpp"

namespace anomaly_recon::pipeline {

using nlohmann::json;
using namespace detail;

namespace {

std::string ckpt_rel(const std::string& stage) { return "checkpoints/" + stage + ".ckpt"; }
std::string curve_rel(const std::string& stage) { return "curves/" + stage + ".csv"; }

// Keeps the header and the rows whose leading step column is <= `max_step`.
void truncate_curve(const fs::path& path, std::int64_t max_step) {
  if (!fs::exists(path)) return;
  std::ifstream in(path);
  std::vector<std::string> keep;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (header) {
      keep.push_back(line);
      header = false;
      continue;
    }
    if (std::stoll(line.substr(0, line.find(','))) <= max_step) keep.push_back(line);
  }
  in.close();
  std::ofstream out(path, std::ios::trunc);
  for (const auto& l : keep) out << l << '\n';
}

void append_rows(const fs::path& path, const std::string& header, const std::vector<std::string>& rows) {
  fs::create_directories(path.parent_path());
  const bool fresh = !fs::exists(path);
  std::ofstream out(path, std::ios::app);
  if (!out) throw Error("cannot write " + path.string());
  if (fresh) out << header << '\n';
  for (const auto& r : rows) out << r << '\n';
}

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(9);
  s << v;
  return s.str();
}

struct TrainSlices {
  std::vector<Image> images;
  std::vector<Array2<std::int32_t>> labels;  // anatomy labels, filled on request
};

// Non-empty slices of `split` volumes; abnormal slices are excluded.
TrainSlices gather(const fs::path& root, const std::string& split, bool with_labels, std::size_t first = 0,
                   std::size_t count = static_cast<std::size_t>(-1)) {
  TrainSlices out;
  const auto entries = prep_entries(root, split);
  for (std::size_t n = first; n < entries.size() && n - first < count; ++n) {
    const auto p = load_prep(root, entries[n], with_labels);
    Array3<std::int32_t> anatomy;
    if (with_labels) anatomy = p.labels.anatomy_labels();
    for (std::int64_t k = 0; k < p.image.depth(); ++k) {
      if (p.is_empty(k) || p.is_abnormal(k)) continue;
      out.images.push_back(p.image.slice(k));
      if (with_labels) out.labels.push_back(anatomy.slice(k));
    }
  }
  return out;
}

torch::Tensor stack(const std::vector<const Image*>& imgs) {
  auto t = torch::empty({static_cast<std::int64_t>(imgs.size()), 1, imgs.front()->rows, imgs.front()->cols},
                        torch::kFloat);
  float* dst = t.data_ptr<float>();
  for (const Image* im : imgs) {
    dst = std::transform(im->data.begin(), im->data.end(), dst, [](double v) { return static_cast<float>(v); });
  }
  return t;
}

std::vector<std::size_t> permutation(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

// Batches of `size` over a permutation; a trailing batch of one is dropped
// because batch normalisation cannot train on it.
std::vector<std::vector<std::size_t>> batches(const std::vector<std::size_t>& perm, std::size_t size) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t s = 0; s < perm.size(); s += size) {
    std::vector<std::size_t> b(perm.begin() + static_cast<std::ptrdiff_t>(s),
                               perm.begin() + static_cast<std::ptrdiff_t>(std::min(perm.size(), s + size)));
    if (b.size() >= 2) out.push_back(std::move(b));
  }
  return out;
}

}  // namespace

void Pipeline::train(TrainStage stage) {
  switch (stage) {
    case TrainStage::kReconVae:
    case TrainStage::kReconIntroVae: train_recon(stage); break;
    case TrainStage::kDisc: train_disc(); break;
    case TrainStage::kSeg: train_seg(); break;
  }
}

void Pipeline::train_recon(TrainStage stage) {
  const std::string name = to_string(stage);
  const auto mode = stage == TrainStage::kReconVae ? recon::TrainingMode::kVae : recon::TrainingMode::kIntroVae;
  const auto& rc = cfg_.recon;
  const json section{{"recon", cfg_.to_json()["recon"]}, {"augment", cfg_.to_json()["augment"]}, {"seed", cfg_.seed}};
  const std::string input_hash = io::sha256_hex(name + section.dump() + digest("preprocess"));
  if (skip_if_current(name, input_hash)) return;

  const auto data = gather(root(), "train", false);
  if (data.images.size() < 2) throw MissingArtifact("too few training slices for " + name);

  torch::manual_seed(io::derive_seed(cfg_.seed, name + "/init"));
  recon::ReconModel model(rc.arch, mode, rc.hyper);
  recon::ReconTrainer trainer(model);
  const auto ckpt_path = root() / ckpt_rel(name);
  const auto curve_path = root() / curve_rel(name);

  int epoch = 0;
  std::int64_t step = 0;
  if (fs::exists(ckpt_path)) {
    const auto c = io::read_checkpoint(ckpt_path);
    if (!opt_.force && c.meta.value("input_hash", "") == input_hash) {
      io::load_module_tensors(*model, c);
      io::load_adam_state(trainer.encoder_optimizer(), "adam/encoder", c.meta.at("adam_encoder_steps"), c);
      io::load_adam_state(trainer.decoder_optimizer(), "adam/decoder", c.meta.at("adam_decoder_steps"), c);
      epoch = c.meta.at("epoch");
      step = c.meta.at("step");
      truncate_curve(curve_path, step);
      info(name + ": resuming after epoch " + std::to_string(epoch));
    } else {
      fs::remove(ckpt_path);
      fs::remove(curve_path);
    }
  } else {
    fs::remove(curve_path);
  }

  const std::string header = "step,epoch,l_ae,l_reg_z,l_reg_zprime,l_margin_zprime,l_encoder,l_decoder";
  json last_epoch = json::object();
  int ran = 0;
  while (epoch < rc.epochs) {
    if (opt_.stop_after && ran >= *opt_.stop_after) {
      info(name + ": stopping after " + std::to_string(ran) + " epoch(s); rerun to resume");
      return;
    }
    std::mt19937_64 rng(io::derive_seed(cfg_.seed, name + "/epoch", static_cast<std::uint64_t>(epoch)));
    torch::manual_seed(io::derive_seed(cfg_.seed, name + "/noise", static_cast<std::uint64_t>(epoch)));
    const bool vae_step = mode == recon::TrainingMode::kVae || epoch < rc.vae_warmup_epochs;
    std::vector<std::string> rows;
    double sum_ae = 0.0, sum_reg = 0.0, sum_regp = 0.0;
    int nb = 0;
    for (const auto& b : batches(permutation(data.images.size(), rng), static_cast<std::size_t>(rc.batch_size))) {
      std::vector<Image> aug;
      aug.reserve(b.size());
      for (auto i : b) {
        aug.push_back(rc.augment ? data::apply_augment(data.images[i], data::draw_augment(rng, cfg_.augment))
                                 : data.images[i]);
      }
      std::vector<const Image*> ptrs;
      for (const auto& im : aug) ptrs.push_back(&im);
      const auto batch = stack(ptrs);
      const auto r = vae_step ? trainer.train_vae_step(batch) : trainer.train_introvae_step(batch);
      ++step;
      rows.push_back(std::to_string(step) + "," + std::to_string(epoch) + "," + fmt(r.l_ae) + "," + fmt(r.l_reg_z) +
                     "," + fmt(r.l_reg_zprime) + "," + fmt(r.l_margin_zprime) + "," + fmt(r.l_encoder) + "," +
                     fmt(r.l_decoder));
      sum_ae += r.l_ae;
      sum_reg += r.l_reg_z;
      sum_regp += r.l_reg_zprime;
      ++nb;
    }
    ++epoch;
    ++ran;
    append_rows(curve_path, header, rows);
    last_epoch = {{"l_ae", sum_ae / nb}, {"l_reg_z", sum_reg / nb}, {"l_reg_zprime", sum_regp / nb}};

    std::vector<io::NamedTensor> tensors = io::module_tensors(*model);
    json meta{{"kind", "recon"},
              {"mode", recon::to_string(mode)},
              {"arch", rc.arch.to_json()},
              {"hyper", rc.hyper.to_json()},
              {"epoch", epoch},
              {"step", step},
              {"input_hash", input_hash}};
    meta["adam_encoder_steps"] = io::adam_state(trainer.encoder_optimizer(), "adam/encoder", tensors);
    meta["adam_decoder_steps"] = io::adam_state(trainer.decoder_optimizer(), "adam/decoder", tensors);
    fs::create_directories(ckpt_path.parent_path());
    io::write_checkpoint(ckpt_path, meta, tensors);
    info(name + ": epoch " + std::to_string(epoch) + "/" + std::to_string(rc.epochs) + " L_AE " +
         fmt(last_epoch["l_ae"]) + " L_REG(z) " + fmt(last_epoch["l_reg_z"]) +
         (vae_step ? std::string() : " L_REG(z') " + fmt(last_epoch["l_reg_zprime"])));
  }
  manifest_.complete(name, input_hash, {ckpt_rel(name), curve_rel(name)},
                     {{"epochs", epoch}, {"steps", step}, {"train_slices", data.images.size()}, {"last_epoch", last_epoch}});
}

void Pipeline::train_disc() {
  const std::string name = "disc";
  const auto& dc = cfg_.disc;
  const json section{{"disc", cfg_.to_json()["disc"]}, {"seed", cfg_.seed}};
  const std::string input_hash = io::sha256_hex(name + section.dump() + digest("preprocess"));
  if (skip_if_current(name, input_hash)) return;

  const auto data = gather(root(), "train", false);
  std::vector<data::Slice> slices;
  std::vector<std::vector<std::int64_t>> centres;
  for (std::size_t n = 0; n < data.images.size(); ++n) {
    auto c = disc::valid_centres(data.images[n], dc.triplet);
    if (c.empty()) continue;
    slices.push_back({data.images[n], "train", static_cast<std::int64_t>(n)});
    centres.push_back(std::move(c));
  }
  if (slices.empty()) throw MissingArtifact("no training slices with a body region for the discriminative network");

  torch::manual_seed(io::derive_seed(cfg_.seed, "disc/init"));
  disc::EmbeddingNet net(dc.arch);
  disc::DiscTrainer trainer(net, dc.lr);
  const auto ckpt_path = root() / ckpt_rel(name);
  const auto curve_path = root() / curve_rel(name);
  constexpr int kBlock = 100;  // steps per checkpoint
  constexpr std::size_t kHeldOutTriplets = 1024;
  const int blocks = (dc.steps + kBlock - 1) / kBlock;

  int block = 0;
  std::int64_t step = 0;
  if (fs::exists(ckpt_path)) {
    const auto c = io::read_checkpoint(ckpt_path);
    if (!opt_.force && c.meta.value("input_hash", "") == input_hash) {
      io::load_module_tensors(*net, c);
      io::load_adam_state(trainer.optimizer(), "adam", c.meta.at("adam_steps"), c);
      block = c.meta.at("block");
      step = c.meta.at("step");
      net->trained_steps = step;
      truncate_curve(curve_path, step);
      info(name + ": resuming after step " + std::to_string(step));
    } else {
      fs::remove(ckpt_path);
      fs::remove(curve_path);
    }
  } else {
    fs::remove(curve_path);
  }

  std::uniform_int_distribution<std::size_t> pick(0, slices.size() - 1);
  double last_mean = 0.0;
  int ran = 0;
  while (block < blocks) {
    if (opt_.stop_after && ran >= *opt_.stop_after) {
      info(name + ": stopping after " + std::to_string(ran) + " block(s); rerun to resume");
      return;
    }
    std::mt19937_64 rng(io::derive_seed(cfg_.seed, "disc/block", static_cast<std::uint64_t>(block)));
    std::vector<std::string> rows;
    double sum = 0.0;
    const int n_steps = std::min(kBlock, dc.steps - block * kBlock);
    for (int s = 0; s < n_steps; ++s) {
      std::vector<disc::Triplet> ts;
      for (int b = 0; b < dc.batch_size; ++b) {
        const auto i = pick(rng);
        ts.push_back(disc::sample_triplet(slices[i], centres[i], rng, dc.triplet));
      }
      std::vector<const Image*> a, p, n;
      for (const auto& t : ts) {
        a.push_back(&t.anchor.data);
        p.push_back(&t.positive.data);
        n.push_back(&t.negative.data);
      }
      const double loss = trainer.step(disc::to_tensor(a), disc::to_tensor(p), disc::to_tensor(n));
      ++step;
      rows.push_back(std::to_string(step) + "," + std::to_string(block) + "," + fmt(loss));
      sum += loss;
    }
    ++block;
    ++ran;
    last_mean = sum / n_steps;
    append_rows(curve_path, "step,block,triplet_loss", rows);
    std::vector<io::NamedTensor> tensors = io::module_tensors(*net);
    json meta{{"kind", "disc"}, {"arch", dc.arch.to_json()}, {"block", block}, {"step", step}, {"input_hash", input_hash}};
    meta["adam_steps"] = io::adam_state(trainer.optimizer(), "adam", tensors);
    fs::create_directories(ckpt_path.parent_path());
    io::write_checkpoint(ckpt_path, meta, tensors);
    if (block % 5 == 0 || block == blocks) {
      info(name + ": step " + std::to_string(step) + "/" + std::to_string(dc.steps) + " triplet loss " + fmt(last_mean));
    }
  }
  // Held-out triplets from normal volumes the network never saw.
  const auto held = gather(root(), "seg", false);
  std::vector<disc::Triplet> held_triplets;
  std::mt19937_64 held_rng(io::derive_seed(cfg_.seed, "disc/held_out"));
  for (std::size_t n = 0; n < held.images.size() && held_triplets.size() < kHeldOutTriplets; ++n) {
    const data::Slice s{held.images[n], "seg", static_cast<std::int64_t>(n)};
    const auto c = disc::valid_centres(s.data, dc.triplet);
    if (c.empty()) continue;
    for (int t = 0; t < 8; ++t) held_triplets.push_back(disc::sample_triplet(s, c, held_rng, dc.triplet));
  }
  json metrics{{"steps", step}, {"train_slices", slices.size()}, {"last_block_loss", last_mean}};
  if (!held_triplets.empty()) {
    const double acc = disc::triplet_accuracy(net, held_triplets);
    metrics["held_out_triplets"] = held_triplets.size();
    metrics["held_out_accuracy"] = acc;
    info(name + ": held-out triplet accuracy " + fmt(acc) + " on " + std::to_string(held_triplets.size()) + " triplets");
  }
  manifest_.complete(name, input_hash, {ckpt_rel(name), curve_rel(name)}, metrics);
}

void Pipeline::train_seg() {
  const std::string name = "seg";
  const auto& sc = cfg_.seg;
  const json section{{"seg", cfg_.to_json()["seg"]}, {"split", cfg_.dataset.seg_split}, {"seed", cfg_.seed}};
  const std::string input_hash = io::sha256_hex(name + section.dump() + digest("preprocess"));
  if (skip_if_current(name, input_hash)) return;

  const auto n_vol = prep_entries(root(), "seg").size();
  const auto n_train = static_cast<std::size_t>(std::round(cfg_.dataset.seg_split[0] * static_cast<double>(n_vol)));
  const auto n_val = static_cast<std::size_t>(std::round(cfg_.dataset.seg_split[1] * static_cast<double>(n_vol)));
  const auto train = gather(root(), "seg", true, 0, n_train);
  const auto val = gather(root(), "seg", true, n_train, n_val);
  const auto test = gather(root(), "seg", true, n_train + n_val);
  if (train.images.size() < 2 || test.images.empty()) throw MissingArtifact("segmentation split is too small");

  torch::manual_seed(io::derive_seed(cfg_.seed, "seg/init"));
  fidelity::SegNet net(sc.arch);
  fidelity::SegTrainer trainer(net, sc.lr, sc.weight_decay, sc.loss);
  const auto ckpt_path = root() / ckpt_rel(name);
  const auto curve_path = root() / curve_rel(name);

  int epoch = 0;
  std::int64_t step = 0;
  if (fs::exists(ckpt_path)) {
    const auto c = io::read_checkpoint(ckpt_path);
    if (!opt_.force && c.meta.value("input_hash", "") == input_hash) {
      io::load_module_tensors(*net, c);
      io::load_adam_state(trainer.optimizer(), "adam", c.meta.at("adam_steps"), c);
      epoch = c.meta.at("epoch");
      step = c.meta.at("step");
      net->trained_steps = step;
      truncate_curve(curve_path, step);
      info(name + ": resuming after epoch " + std::to_string(epoch));
    } else {
      fs::remove(ckpt_path);
      fs::remove(curve_path);
    }
  } else {
    fs::remove(curve_path);
  }

  // Rotation only: flips would swap the left/right eye classes.
  data::AugmentRanges ranges{0.0, 1.0, 1.0, sc.max_rotation_deg};
  auto label_tensor = [](const std::vector<const Array2<std::int32_t>*>& ls) {
    auto t = torch::empty({static_cast<std::int64_t>(ls.size()), ls.front()->rows, ls.front()->cols}, torch::kLong);
    auto* dst = t.data_ptr<std::int64_t>();
    for (const auto* l : ls) dst = std::copy(l->data.begin(), l->data.end(), dst);
    return t;
  };
  int ran = 0;
  double last_mean = 0.0;
  while (epoch < sc.epochs) {
    if (opt_.stop_after && ran >= *opt_.stop_after) {
      info(name + ": stopping after " + std::to_string(ran) + " epoch(s); rerun to resume");
      return;
    }
    std::mt19937_64 rng(io::derive_seed(cfg_.seed, "seg/epoch", static_cast<std::uint64_t>(epoch)));
    std::vector<std::string> rows;
    double sum = 0.0;
    int nb = 0;
    for (const auto& b : batches(permutation(train.images.size(), rng), static_cast<std::size_t>(sc.batch_size))) {
      std::vector<Image> imgs;
      std::vector<Array2<std::int32_t>> labs;
      for (auto i : b) {
        const auto p = data::draw_augment(rng, ranges);
        imgs.push_back(data::apply_augment(train.images[i], p));
        labs.push_back(data::apply_augment_labels(train.labels[i], p));
      }
      std::vector<const Image*> ip;
      std::vector<const Array2<std::int32_t>*> lp;
      for (std::size_t n = 0; n < imgs.size(); ++n) {
        ip.push_back(&imgs[n]);
        lp.push_back(&labs[n]);
      }
      const double loss = trainer.step(stack(ip), label_tensor(lp));
      ++step;
      rows.push_back(std::to_string(step) + "," + std::to_string(epoch) + "," + fmt(loss));
      sum += loss;
      ++nb;
    }
    ++epoch;
    ++ran;
    last_mean = sum / nb;
    append_rows(curve_path, "step,epoch,loss", rows);
    std::vector<io::NamedTensor> tensors = io::module_tensors(*net);
    json meta{{"kind", "seg"}, {"arch", sc.arch.to_json()}, {"epoch", epoch}, {"step", step}, {"input_hash", input_hash}};
    meta["adam_steps"] = io::adam_state(trainer.optimizer(), "adam", tensors);
    fs::create_directories(ckpt_path.parent_path());
    io::write_checkpoint(ckpt_path, meta, tensors);
    if (epoch % 5 == 0 || epoch == sc.epochs) {
      info(name + ": epoch " + std::to_string(epoch) + "/" + std::to_string(sc.epochs) + " loss " + fmt(last_mean));
    }
  }

  // Held-out Dice per anatomy class, pooled over slices.
  auto pooled_dice = [&](const TrainSlices& set) {
    const auto classes = sc.arch.num_classes;
    std::vector<std::int64_t> inter(static_cast<std::size_t>(classes), 0), total(static_cast<std::size_t>(classes), 0);
    for (std::size_t s = 0; s < set.images.size(); s += 32) {
      std::vector<const Image*> ip;
      for (std::size_t n = s; n < std::min(set.images.size(), s + 32); ++n) ip.push_back(&set.images[n]);
      const auto maps = fidelity::segment(net, stack(ip));
      for (std::size_t n = 0; n < maps.size(); ++n) {
        const auto pred = maps[n].argmax();
        const auto& gt = set.labels[s + n];
        for (std::size_t v = 0; v < pred.data.size(); ++v) {
          const auto pc = static_cast<std::size_t>(pred.data[v]), gc = static_cast<std::size_t>(gt.data[v]);
          ++total[pc];
          ++total[gc];
          if (pc == gc) inter[pc] += 2;
        }
      }
    }
    json per_class = json::object();
    double sum = 0.0;
    int n = 0;
    for (std::int64_t c = 1; c < classes; ++c) {
      const auto uc = static_cast<std::size_t>(c);
      if (total[uc] == 0) continue;
      const double d = static_cast<double>(inter[uc]) / static_cast<double>(total[uc]);
      per_class[std::string(data::kAnatomyClasses[uc])] = d;
      sum += d;
      ++n;
    }
    return json{{"per_class", per_class}, {"mean_foreground", n ? sum / n : 0.0}};
  };
  const json metrics{{"epochs", epoch},
                     {"steps", step},
                     {"train_slices", train.images.size()},
                     {"last_epoch_loss", last_mean},
                     {"validation_dice", val.images.empty() ? json() : pooled_dice(val)},
                     {"test_dice", pooled_dice(test)}};
  write_json(root() / "reports/segmentation.json", metrics);
  manifest_.complete(name, input_hash, {ckpt_rel(name), curve_rel(name), "reports/segmentation.json"}, metrics);
  info(name + ": held-out mean foreground Dice " + fmt(metrics["test_dice"]["mean_foreground"]));
}

}  // namespace anomaly_recon::pipeline
