// Copyright 2026 The mmpaint Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <filesystem>

#include "mmpaint/config.hpp"
#include "mmpaint/image.hpp"

using namespace mmpaint;

namespace {

bool has_issue(const ValidationError& e, const std::string& path) {
  for (const auto& i : e.issues())
    if (i.path == path) return true;
  return false;
}

}  // namespace

TEST_CASE("TOML subset values and tables") {
  const auto doc = parse_toml(R"(# run settings
seed = 42
work_dir = "out/run"   # trailing comment
ratio = 0.5
big = 1_000
neg = -3
exp = 1e-4
flag = true
names = ["a", 'b', "c"]
nums = [1, 2.5, ]

[promptgen]
learning_rate = 2e-4
target_pattern = 'all-linear'

[a.b]
c = "x\ty\"z"
inline.key = 7
)");
  CHECK(doc["seed"] == 42);
  CHECK(doc["work_dir"] == "out/run");
  CHECK(doc["ratio"] == 0.5);
  CHECK(doc["big"] == 1000);
  CHECK(doc["neg"] == -3);
  CHECK(doc["exp"] == doctest::Approx(1e-4));
  CHECK(doc["flag"] == true);
  CHECK(doc["names"] == nlohmann::json::array({"a", "b", "c"}));
  CHECK(doc["nums"] == nlohmann::json::array({1, 2.5}));
  CHECK(doc["promptgen"]["learning_rate"] == doctest::Approx(2e-4));
  CHECK(doc["promptgen"]["target_pattern"] == "all-linear");
  CHECK(doc["a"]["b"]["c"] == "x\ty\"z");
  CHECK(doc["a"]["b"]["inline"]["key"] == 7);
  CHECK(doc["seed"].is_number_integer());
  CHECK(doc["ratio"].is_number_float());
}

TEST_CASE("TOML syntax errors carry line numbers") {
  CHECK_THROWS_WITH_AS(parse_toml("a = 1\nb = \n"), doctest::Contains("line 2"), InvalidInput);
  CHECK_THROWS_WITH_AS(parse_toml("a = 1\na = 2\n"), doctest::Contains("duplicate key"), InvalidInput);
  CHECK_THROWS_WITH_AS(parse_toml("[t]\n[t]\n"), doctest::Contains("defined twice"), InvalidInput);
  CHECK_THROWS_AS(parse_toml("s = \"open\n"), InvalidInput);
  CHECK_THROWS_AS(parse_toml("x = 1 2\n"), InvalidInput);
  CHECK_THROWS_AS(parse_toml("t = {a = 1}\n"), InvalidInput);
  CHECK_THROWS_AS(parse_toml("[[arr]]\n"), InvalidInput);
  CHECK_THROWS_AS(parse_toml("v = nan\n"), InvalidInput);
}

TEST_CASE("defaults mirror the documented training settings") {
  const AppConfig c;
  CHECK(c.promptgen.adapter.rank == 16);
  CHECK(c.promptgen.adapter.alpha == 16.0);
  CHECK(c.promptgen.adapter.dropout == 0.05);
  CHECK(c.promptgen.learning_rate == 2e-4);
  CHECK(c.promptgen.grad_clip == 0.5);
  CHECK(c.promptgen.batch_size == 32);
  CHECK(c.inpaint.learning_rate == 1e-4);
  CHECK(c.inpaint.grad_clip == 1.0);
  CHECK(c.inpaint.text_drop == 0.1);
  CHECK(c.sampler.steps == 50);
  CHECK(c.sampler.guidance_weight == 7.5);
  CHECK(c.dataset.side == 512);
  CHECK(c.dataset.rules.max_masks == 5);
  CHECK(c.annotation.caption_token_cap == 40);
  CHECK(c.generation.num_samples == 4);
  CHECK(c.treatment.darken == 0.5);
}

TEST_CASE("schema validation reports every issue with its path") {
  const auto doc = parse_toml(R"(
seed = -1
typo = 3
[promptgen]
learning_rate = 0.0
rank = "sixteen"
[inpaint]
mode = "sideways"
composite = 1
[dataset]
min_area_fraction = 0.7
max_area_fraction = 0.6
[service]
port = 70000
)");
  try {
    config_from_json(doc);
    FAIL("expected a ValidationError");
  } catch (const ValidationError& e) {
    CHECK(has_issue(e, "seed"));
    CHECK(has_issue(e, "typo"));
    CHECK(has_issue(e, "promptgen.learning_rate"));
    CHECK(has_issue(e, "promptgen.rank"));
    CHECK(has_issue(e, "inpaint.mode"));
    CHECK(has_issue(e, "inpaint.composite"));
    CHECK(has_issue(e, "dataset.min_area_fraction"));
    CHECK(has_issue(e, "service.port"));
    CHECK(e.issues().size() == 8);
    const auto j = to_json(e.issues());
    CHECK(j.is_array());
    CHECK(j[0].contains("path"));
  }
  CHECK_THROWS_AS(config_from_json(parse_toml("promptgen = 3\n")), ValidationError);
  CHECK_THROWS_AS(config_from_json(parse_toml("[nosuch]\nx = 1\n")), ValidationError);
}

TEST_CASE("config round-trips through JSON and the hash tracks every field") {
  const auto c = config_from_json(parse_toml(R"(
seed = 9
[promptgen]
learning_rate = 0.01
loss_reduction = "sum"
temperature = 0.75
[inpaint]
mode = "repeated"
scheme = "ddpm"
steps = 10
[models]
inpaint_image_side = 64
)"));
  CHECK(c.seed == 9);
  CHECK(c.promptgen.seed == 9);
  CHECK(c.sampler.seed == 9);
  CHECK(c.dataset.seed == 9);
  CHECK(c.promptgen.loss_reduction == LossReduction::sum);
  CHECK(c.generation.temperature == 0.75);
  CHECK(c.mode == InpaintMode::repeated_per_mask);
  CHECK(c.sampler.scheme == SamplerScheme::training_scheme);
  CHECK(c.models.inpaint_image_side == 64);

  const auto again = config_from_json(to_json(c));
  CHECK(to_json(again) == to_json(c));
  CHECK(config_hash(again) == config_hash(c));

  AppConfig d = c;
  d.sampler.steps = 11;
  CHECK(config_hash(d) != config_hash(c));
  d = c;
  d.reseed(10);
  CHECK(config_hash(d) != config_hash(c));
  CHECK(d.inpaint.seed == 10);
  CHECK(d.generation.seed == 10);
}

TEST_CASE("load_config reads a file") {
  const auto path = std::filesystem::temp_directory_path() / "mmpaint_config_test.toml";
  write_text_file(path, "seed = 3\n[service]\nport = 9000\n");
  const auto c = load_config(path);
  CHECK(c.seed == 3);
  CHECK(c.service.port == 9000);
  CHECK(load_config_or_default("").seed == 0);
  CHECK_THROWS_AS(load_config("/nonexistent/mmpaint.toml"), InvalidInput);
  std::filesystem::remove(path);
}

TEST_CASE("the shipped example config validates") {
  const auto c = load_config(std::filesystem::path(MMPAINT_FIXTURES_DIR) / ".." / ".." / "config" / "mmpaint.example.toml");
  CHECK(c.models.inpaint_image_side == 64);
  CHECK(c.mode == InpaintMode::rca_single_pass);
  CHECK(c.promptgen.learning_rate == 2e-4);
}
