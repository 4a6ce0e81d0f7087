// Copyright 2026 The mmpaint Authors
// SPDX-License-Identifier: Apache-2.0

// REST/JSON service: prompt suggestion, queued inpainting jobs, job lookup,
// mask echo and health. Handlers are reachable without sockets through
// Service::handle, and over HTTP once started.

#pragma once

#include <chrono>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmpaint/config.hpp"
#include "mmpaint/inpaint.hpp"
#include "mmpaint/promptgen.hpp"

namespace mmpaint {

// ---- wire types ----------------------------------------------------------

struct SuggestRequest {
  RgbImage image;
  MaskSet masks;
  double temperature = 0.5;
  int num_samples = 4;
  int max_new_tokens = 128;
  std::uint64_t seed = 0;
};

struct InpaintRequest {
  RgbImage image;
  MaskSet masks;
  std::vector<std::string> prompts;
  InpaintMode mode = InpaintMode::rca_single_pass;
  int steps = 50;
  double guidance_weight = 7.5;
  std::uint64_t seed = 0;
  bool composite = true;
  std::optional<std::string> request_id;
};

/// Masks are given as {"png": base64} (binary PNG at image resolution) or
/// {"bbox": [x0, y0, x1, y1]}. Throws ValidationError with field paths.
SuggestRequest parse_suggest_request(const nlohmann::json& body, const AppConfig& defaults,
                                     int max_masks = MaskRules{}.max_masks);
InpaintRequest parse_inpaint_request(const nlohmann::json& body, const AppConfig& defaults,
                                     int max_masks = MaskRules{}.max_masks);

enum class JobStatus { queued, running, done, failed };
std::string to_string(JobStatus s);

struct JobRecord {
  std::string id;
  std::string kind = "inpaint";
  JobStatus status = JobStatus::queued;
  std::optional<std::string> request_id;
  std::uint64_t seed = 0;
  nlohmann::json manifest;  // set when done
  std::string result_uri;   // set when done
  std::string error;        // set when failed
};

nlohmann::json to_json(const JobRecord& r);

// ---- service -------------------------------------------------------------

struct ServiceModels {
  /// Prompt suggestion is unavailable (503) when null.
  PromptDecoder* decoder = nullptr;
  /// Inpainting is unavailable (503) when absent.
  std::optional<InpaintModel> inpaint;
  Palette palette = default_palette();
};

struct ApiResponse {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;

  nlohmann::json json() const { return nlohmann::json::parse(body); }
};

class Service {
 public:
  /// Job artifacts go to `jobs_dir/<job id>/`. The static API key is read
  /// from config.service.api_key_env unless `api_key` is given.
  Service(AppConfig config, ServiceModels models, std::filesystem::path jobs_dir,
          std::optional<std::string> api_key = std::nullopt);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Routes one request. `authorization` is the raw Authorization header.
  ApiResponse handle(const std::string& method, const std::string& path, const std::string& body,
                     const std::string& authorization = "");

  /// Starts listening in the background; port 0 picks a free port. Returns
  /// the bound port.
  int start(const std::string& host, int port);
  /// Blocks serving on host:port until stop().
  void serve(const std::string& host, int port);
  void stop();

  std::optional<JobRecord> job(const std::string& id) const;
  /// Polls until the job is done or failed, or the timeout passes.
  std::optional<JobRecord> wait_for(const std::string& id, std::chrono::milliseconds timeout) const;

  const std::string& config_hash() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace mmpaint
