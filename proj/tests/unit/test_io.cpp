#include <fstream>
#include <set>

#include "anomaly_recon/error.hpp"
#include "anomaly_recon/io/checkpoint.hpp"
#include "anomaly_recon/io/hash.hpp"
#include "anomaly_recon/io/json_schema.hpp"
#include "anomaly_recon/pipeline/config.hpp"
#include "anomaly_recon/pipeline/run.hpp"
#include "helpers.hpp"

#include "doctest_torch.hpp"

using namespace anomaly_recon;
using nlohmann::json;

TEST_CASE("sha256 known vectors") {
  CHECK(io::sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(io::sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  test::TempDir dir("hash");
  std::ofstream(dir.path() / "f") << "abc";
  CHECK(io::sha256_file(dir.path() / "f") == io::sha256_hex("abc"));
  CHECK_THROWS_AS(io::sha256_file(dir.path() / "missing"), MissingArtifact);
}

TEST_CASE("derived seeds are stable and distinct") {
  CHECK(io::derive_seed(7, "recon", 3) == io::derive_seed(7, "recon", 3));
  std::set<std::uint64_t> seen;
  for (std::uint64_t base : {0ULL, 1ULL}) {
    for (const char* s : {"recon", "disc", "seg"}) {
      for (std::uint64_t i = 0; i < 50; ++i) seen.insert(io::derive_seed(base, s, i));
    }
  }
  CHECK(seen.size() == 300);
}

TEST_CASE("checkpoint round trip") {
  test::TempDir dir("ckpt");
  torch::manual_seed(0);
  std::vector<io::NamedTensor> tensors{{"a", torch::randn({3, 4})},
                                       {"b", torch::randn({2}, torch::kFloat64)},
                                       {"c", torch::arange(5, torch::kInt64)}};
  io::write_checkpoint(dir.path() / "x.ckpt", {{"step", 12}, {"kind", "test"}}, tensors);
  const auto ck = io::read_checkpoint(dir.path() / "x.ckpt");
  CHECK(ck.meta.at("step") == 12);
  for (const auto& t : tensors) {
    REQUIRE(ck.has(t.name));
    CHECK(ck.at(t.name).dtype() == t.tensor.dtype());
    CHECK(torch::equal(ck.at(t.name), t.tensor));
  }
  CHECK_THROWS_AS(ck.at("zz"), MissingArtifact);
  CHECK_THROWS_AS(io::read_checkpoint(dir.path() / "none.ckpt"), MissingArtifact);
  std::ofstream(dir.path() / "bad.ckpt") << "not a checkpoint";
  CHECK_THROWS_AS(io::read_checkpoint(dir.path() / "bad.ckpt"), Error);
}

TEST_CASE("module tensors round trip through a checkpoint") {
  test::TempDir dir("mod");
  torch::manual_seed(1);
  torch::nn::Sequential a(torch::nn::Conv2d(1, 2, 3), torch::nn::BatchNorm2d(2));
  torch::nn::Sequential b(torch::nn::Conv2d(1, 2, 3), torch::nn::BatchNorm2d(2));
  a->train();
  a->forward(torch::randn({4, 1, 6, 6}));
  io::write_checkpoint(dir.path() / "m.ckpt", json::object(), io::module_tensors(*a));
  io::load_module_tensors(*b, io::read_checkpoint(dir.path() / "m.ckpt"));
  const auto pa = a->named_parameters(), pb = b->named_parameters();
  for (const auto& p : pa) CHECK(torch::equal(p.value(), pb[p.key()]));
  const auto ba = a->named_buffers(), bb = b->named_buffers();
  for (const auto& p : ba) CHECK(torch::equal(p.value(), bb[p.key()]));

  torch::nn::Sequential c(torch::nn::Conv2d(1, 3, 3), torch::nn::BatchNorm2d(3));
  CHECK_THROWS_AS(io::load_module_tensors(*c, io::read_checkpoint(dir.path() / "m.ckpt")), Error);
}

TEST_CASE("json schema subset") {
  const json schema = json::parse(R"({
    "$defs": {"pos": {"type": "number", "exclusiveMinimum": 0}},
    "type": "object",
    "required": ["a", "b"],
    "additionalProperties": false,
    "properties": {
      "a": {"$ref": "#/$defs/pos"},
      "b": {"type": "array", "items": {"enum": ["x", "y"]}, "minItems": 1},
      "c": {"type": "integer", "minimum": 1, "maximum": 3},
      "d": {"type": "string", "minLength": 2}
    }
  })");
  CHECK(io::validate_json(json::parse(R"({"a": 1.5, "b": ["x"], "c": 2, "d": "ok"})"), schema).empty());
  CHECK(io::validate_json(json::parse(R"({"a": 0, "b": ["x"]})"), schema).size() == 1);
  CHECK(io::validate_json(json::parse(R"({"a": 1, "b": []})"), schema).size() == 1);
  CHECK(io::validate_json(json::parse(R"({"a": 1, "b": ["z"]})"), schema).size() == 1);
  CHECK(io::validate_json(json::parse(R"({"a": 1, "b": ["x"], "c": 1.5})"), schema).size() == 1);
  CHECK(io::validate_json(json::parse(R"({"a": 1, "b": ["x"], "c": 4, "d": "o"})"), schema).size() == 2);
  CHECK(io::validate_json(json::parse(R"({"b": ["x"], "e": 1})"), schema).size() == 2);
}

TEST_CASE("configuration loading") {
  test::TempDir dir("cfg");
  const auto desk = pipeline::load_config(std::nullopt, {});
  CHECK(desk.profile == "desk");
  CHECK(pipeline::load_config(std::nullopt, {"paper", std::nullopt}).preprocess.image_size == 256);
  CHECK(pipeline::load_config(std::nullopt, {std::nullopt, 42}).seed == 42);

  SUBCASE("overlay merges key by key") {
    std::ofstream(dir.path() / "c.json") << R"({"recon": {"epochs": 3}, "seed": 9})";
    const auto c = pipeline::load_config(dir.path() / "c.json", {});
    CHECK(c.recon.epochs == 3);
    CHECK(c.seed == 9);
    CHECK(c.recon.batch_size == desk.recon.batch_size);
    CHECK(pipeline::load_config(dir.path() / "c.json", {std::nullopt, 5}).seed == 5);
  }
  SUBCASE("unknown keys and bad values are rejected") {
    std::ofstream(dir.path() / "u.json") << R"({"recon": {"epoch": 3}})";
    CHECK_THROWS_AS(pipeline::load_config(dir.path() / "u.json", {}), ConfigError);
    std::ofstream(dir.path() / "v.json") << R"({"recon": {"epochs": -1}})";
    CHECK_THROWS_AS(pipeline::load_config(dir.path() / "v.json", {}), ConfigError);
    std::ofstream(dir.path() / "w.json") << "{ not json";
    CHECK_THROWS_AS(pipeline::load_config(dir.path() / "w.json", {}), ConfigError);
  }
  SUBCASE("json round trip preserves the hash") {
    const auto back = pipeline::ExperimentConfig::from_json(desk.to_json());
    CHECK(pipeline::config_hash(back) == pipeline::config_hash(desk));
    auto other = desk;
    other.output_dir = "/elsewhere";
    CHECK(pipeline::config_hash(other) == pipeline::config_hash(desk));
    other.seed += 1;
    CHECK(pipeline::config_hash(other) != pipeline::config_hash(desk));
  }
  SUBCASE("merge") {
    const json m = pipeline::merge_json(json{{"a", {{"x", 1}, {"y", 2}}}, {"b", {1, 2}}},
                                        json{{"a", {{"y", 3}}}, {"b", {4}}});
    CHECK((m == json{{"a", {{"x", 1}, {"y", 3}}}, {"b", {4}}}));
  }
}
