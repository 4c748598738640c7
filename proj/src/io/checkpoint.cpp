#include "anomaly_recon/io/checkpoint.hpp"

#include <array>
#include <cstring>
#include <fstream>

#include "anomaly_recon/error.hpp"

namespace anomaly_recon::io {

using nlohmann::json;

namespace {

constexpr std::array<char, 8> kMagic = {'A', 'R', 'C', 'K', 'P', 'T', '\0', '\0'};

std::string dtype_name(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat: return "f32";
    case torch::kDouble: return "f64";
    case torch::kLong: return "i64";
    default: throw InvalidArgument("checkpoint: unsupported tensor dtype");
  }
}

torch::ScalarType dtype_from(const std::string& s) {
  if (s == "f32") return torch::kFloat;
  if (s == "f64") return torch::kDouble;
  if (s == "i64") return torch::kLong;
  throw Error("checkpoint: unknown dtype '" + s + "'");
}

template <class T>
void write_pod(std::ostream& o, T v) {
  o.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& i) {
  T v{};
  i.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const json& meta, const std::vector<NamedTensor>& tensors) {
  json table = json::array();
  std::vector<torch::Tensor> payload;
  std::uint64_t offset = 0;
  for (const auto& nt : tensors) {
    auto t = nt.tensor.detach().cpu().contiguous();
    const auto nbytes = static_cast<std::uint64_t>(t.numel() * t.element_size());
    table.push_back({{"name", nt.name},
                     {"dtype", dtype_name(t.scalar_type())},
                     {"shape", t.sizes().vec()},
                     {"offset", offset},
                     {"nbytes", nbytes}});
    offset += nbytes;
    payload.push_back(t);
  }
  const std::string header = json{{"meta", meta}, {"tensors", table}}.dump();

  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream o(tmp, std::ios::binary);
    if (!o) throw Error("cannot write checkpoint " + path.string());
    o.write(kMagic.data(), kMagic.size());
    write_pod<std::uint32_t>(o, kCheckpointVersion);
    write_pod<std::uint64_t>(o, header.size());
    o.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const auto& t : payload) {
      o.write(static_cast<const char*>(t.data_ptr()), static_cast<std::streamsize>(t.numel() * t.element_size()));
    }
    if (!o) throw Error("short write on checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

const torch::Tensor& Checkpoint::at(const std::string& name) const {
  for (const auto& nt : tensors) {
    if (nt.name == name) return nt.tensor;
  }
  throw MissingArtifact("checkpoint has no tensor '" + name + "'");
}

bool Checkpoint::has(const std::string& name) const {
  for (const auto& nt : tensors) {
    if (nt.name == name) return true;
  }
  return false;
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream i(path, std::ios::binary);
  if (!i) throw MissingArtifact("checkpoint not found: " + path.string());
  std::array<char, 8> magic{};
  i.read(magic.data(), magic.size());
  if (magic != kMagic) throw Error(path.string() + " is not a checkpoint");
  const auto version = read_pod<std::uint32_t>(i);
  if (version > kCheckpointVersion) {
    throw Error("checkpoint version " + std::to_string(version) + " is newer than supported");
  }
  const auto header_len = read_pod<std::uint64_t>(i);
  std::string header(header_len, '\0');
  i.read(header.data(), static_cast<std::streamsize>(header_len));
  if (!i) throw Error("truncated checkpoint header in " + path.string());
  const json h = json::parse(header);
  const auto payload_start = i.tellg();

  Checkpoint c;
  c.meta = h.at("meta");
  for (const auto& e : h.at("tensors")) {
    const auto shape = e.at("shape").get<std::vector<std::int64_t>>();
    auto t = torch::empty(shape, torch::TensorOptions().dtype(dtype_from(e.at("dtype"))));
    const auto nbytes = e.at("nbytes").get<std::uint64_t>();
    if (nbytes != static_cast<std::uint64_t>(t.numel() * t.element_size())) {
      throw Error("checkpoint tensor '" + e.at("name").get<std::string>() + "' has inconsistent size");
    }
    i.seekg(payload_start + static_cast<std::streamoff>(e.at("offset").get<std::uint64_t>()));
    i.read(static_cast<char*>(t.data_ptr()), static_cast<std::streamsize>(nbytes));
    if (!i) throw Error("truncated checkpoint payload in " + path.string());
    c.tensors.push_back({e.at("name"), t});
  }
  return c;
}

std::vector<NamedTensor> module_tensors(const torch::nn::Module& module) {
  std::vector<NamedTensor> out;
  for (const auto& p : module.named_parameters()) out.push_back({"param/" + p.key(), p.value()});
  for (const auto& b : module.named_buffers()) out.push_back({"buffer/" + b.key(), b.value()});
  return out;
}

void load_module_tensors(torch::nn::Module& module, const Checkpoint& ckpt) {
  torch::NoGradGuard ng;
  auto copy = [&](const std::string& name, torch::Tensor dst) {
    const auto& src = ckpt.at(name);
    if (!src.sizes().equals(dst.sizes())) throw Error("checkpoint tensor '" + name + "' has the wrong shape");
    dst.copy_(src);
  };
  for (auto& p : module.named_parameters()) copy("param/" + p.key(), p.value());
  for (auto& b : module.named_buffers()) copy("buffer/" + b.key(), b.value());
}

json adam_state(const torch::optim::Adam& opt, const std::string& prefix, std::vector<NamedTensor>& out) {
  json steps = json::array();
  std::size_t index = 0;
  for (const auto& group : opt.param_groups()) {
    for (const auto& p : group.params()) {
      auto it = opt.state().find(p.unsafeGetTensorImpl());
      if (it == opt.state().end()) {
        steps.push_back(0);
      } else {
        const auto& s = static_cast<const torch::optim::AdamParamState&>(*it->second);
        steps.push_back(s.step());
        const auto base = prefix + "/" + std::to_string(index);
        out.push_back({base + "/exp_avg", s.exp_avg()});
        out.push_back({base + "/exp_avg_sq", s.exp_avg_sq()});
      }
      ++index;
    }
  }
  return steps;
}

void load_adam_state(torch::optim::Adam& opt, const std::string& prefix, const json& steps, const Checkpoint& ckpt) {
  std::size_t index = 0;
  for (auto& group : opt.param_groups()) {
    for (auto& p : group.params()) {
      if (index >= steps.size()) throw Error("optimizer state has fewer entries than parameters");
      const auto step = steps[index].get<std::int64_t>();
      if (step > 0) {
        const auto base = prefix + "/" + std::to_string(index);
        auto s = std::make_unique<torch::optim::AdamParamState>();
        s->step(step);
        s->exp_avg(ckpt.at(base + "/exp_avg").clone());
        s->exp_avg_sq(ckpt.at(base + "/exp_avg_sq").clone());
        opt.state()[p.unsafeGetTensorImpl()] = std::move(s);
      }
      ++index;
    }
  }
}

}  // namespace anomaly_recon::io
