// Copyright 2026 The mmpaint Authors
// SPDX-License-Identifier: Apache-2.0

// Run configuration: a TOML-subset reader, schema validation with field
// paths, and the typed configuration shared by the CLI and the service.

#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "mmpaint/annotation.hpp"
#include "mmpaint/inpaint.hpp"
#include "mmpaint/metrics.hpp"
#include "mmpaint/promptgen.hpp"

namespace mmpaint {

struct FieldIssue {
  std::string path;  // e.g. "promptgen.learning_rate" or "masks[2].png"
  std::string message;
};

nlohmann::json to_json(const std::vector<FieldIssue>& issues);

/// Configuration or request that failed validation; carries every issue.
class ValidationError : public InvalidInput {
 public:
  explicit ValidationError(std::vector<FieldIssue> issues);
  const std::vector<FieldIssue>& issues() const { return issues_; }

 private:
  std::vector<FieldIssue> issues_;
};

/// Parses tables ([a] and [a.b]), `key = value` pairs with bare or dotted
/// keys, basic and literal strings, integers, floats, booleans, single-line
/// arrays of those and `#` comments. Throws InvalidInput("line N: ...").
nlohmann::json parse_toml(std::string_view text);

struct AnnotationSettings {
  int workers = 4;
  int caption_token_cap = 40;
  double audit_threshold = 0.28;
  /// "fixture" reads replies from grounding_fixtures; "http" uses
  /// MMPAINT_GROUNDING_URL / _API_KEY.
  std::string grounding = "fixture";
  std::string grounding_fixtures = "fixtures/grounding";
  /// "echo" or "http" (MMPAINT_CAPTION_URL).
  std::string caption = "echo";
  /// "toy", "http" (MMPAINT_EMBED_URL) or "none".
  std::string embedder = "toy";
};

struct ModelSettings {
  std::string promptgen_adapter;  // directory with adapter_model.safetensors
  std::string inpaint_adapter;
  int inpaint_image_side = 512;
  int max_tokens = 24;
};

struct ServiceSettings {
  std::string host = "127.0.0.1";
  int port = 8080;
  int queue_depth = 16;
  int workers = 1;
  /// Environment variable holding the static API key; unset means open.
  std::string api_key_env = "MMPAINT_API_KEY";
};

struct AppConfig {
  std::uint64_t seed = 0;
  std::string work_dir = "mmpaint-work";
  AnnotationSettings annotation;
  DatasetOptions dataset;
  PromptGenTrainConfig promptgen;
  GenerationConfig generation;
  InpaintTrainConfig inpaint;
  SamplerConfig sampler;
  InpaintMode mode = InpaintMode::rca_single_pass;
  bool composite = true;
  RegionTreatment treatment;
  ModelSettings models;
  ServiceSettings service;

  /// Sets the run seed and every stage seed derived from it.
  void reseed(std::uint64_t s);
};

/// Validates `doc` against the schema (unknown keys, types, ranges) and
/// builds the typed config; throws ValidationError listing every issue.
AppConfig config_from_json(const nlohmann::json& doc);
AppConfig load_config(const std::filesystem::path& path);
/// Defaults when `path` is empty.
AppConfig load_config_or_default(const std::string& path);

/// Canonical JSON of every setting (the input of config_hash).
nlohmann::json to_json(const AppConfig& c);
std::string config_hash(const AppConfig& c);

}  // namespace mmpaint
