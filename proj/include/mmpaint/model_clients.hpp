// Copyright 2026 The mmpaint Authors
// SPDX-License-Identifier: Apache-2.0

// Pluggable external models: grounded captioners, object captioners and
// image-text embedders. Clients may be called from several worker threads.

#pragma once

#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include <json.hpp>

#include "mmpaint/image.hpp"

namespace mmpaint {

enum class ModelKind { grounded_captioner, object_captioner, image_text_embedder };

std::string to_string(ModelKind kind);

/// Raised for provider failures (transport, timeout, malformed reply).
class ProviderError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ModelClient {
 public:
  virtual ~ModelClient() = default;
  virtual ModelKind kind() const = 0;
  virtual std::string name() const = 0;
};

struct GroundingRequest {
  std::string image_id;
  const RgbImage* image = nullptr;
  std::string prompt;
  std::uint64_t seed = 0;
};

/// Replies use the "grounded-v1" schema:
///   {"schema": "grounded-v1", "caption": str,
///    "entities": [{"noun_chunk": str, "root": str (optional),
///                  "bboxes": [[x0, y0, x1, y1], ...]}]}
/// with box coordinates normalized to [0, 1] of the image width and height.
class GroundingClient : public ModelClient {
 public:
  ModelKind kind() const override { return ModelKind::grounded_captioner; }
  virtual nlohmann::json ground(const GroundingRequest& request) = 0;
};

struct CaptionRequest {
  const RgbImage* image = nullptr;
  std::string prompt;
  /// Text the model is forced to begin its answer with.
  std::string prefix;
  std::string noun_chunk;
  int max_new_tokens = 40;
  std::uint64_t seed = 0;
};

class CaptionClient : public ModelClient {
 public:
  ModelKind kind() const override { return ModelKind::object_captioner; }
  /// The continuation after `prefix`; a reply that repeats the prefix is accepted.
  virtual std::string caption(const CaptionRequest& request) = 0;
};

class EmbeddingClient : public ModelClient {
 public:
  ModelKind kind() const override { return ModelKind::image_text_embedder; }
  virtual Eigen::VectorXd embed_image(const RgbImage& image) = 0;
  virtual Eigen::VectorXd embed_text(const std::string& text) = 0;
};

/// Cosine of the angle between a and b; 0 when either is the zero vector.
double cosine_similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

/// Replies loaded from `dir/<image_id>.json`, or from an in-memory map.
class FixtureGroundingClient final : public GroundingClient {
 public:
  explicit FixtureGroundingClient(std::filesystem::path dir) : dir_(std::move(dir)) {}
  explicit FixtureGroundingClient(std::map<std::string, nlohmann::json> replies) : replies_(std::move(replies)) {}
  std::string name() const override { return "fixture-grounding"; }
  nlohmann::json ground(const GroundingRequest& request) override;

 private:
  std::filesystem::path dir_;
  std::map<std::string, nlohmann::json> replies_;
};

class FunctionCaptionClient final : public CaptionClient {
 public:
  using Fn = std::function<std::string(const CaptionRequest&)>;
  explicit FunctionCaptionClient(Fn fn, std::string name = "function-caption")
      : fn_(std::move(fn)), name_(std::move(name)) {}
  std::string name() const override { return name_; }
  std::string caption(const CaptionRequest& request) override {
    std::lock_guard lock(mu_);
    return fn_(request);
  }

 private:
  Fn fn_;
  std::string name_;
  std::mutex mu_;
};

/// Deterministic stand-in: " <noun chunk> in the scene".
std::unique_ptr<CaptionClient> make_echo_caption_client();

/// Deterministic toy embedder. Images map to a coarse color histogram,
/// texts to hashed word counts folded into the same dimension. Useful only
/// for plumbing tests; its similarities carry no meaning.
class ToyEmbeddingClient final : public EmbeddingClient {
 public:
  explicit ToyEmbeddingClient(int dim = 64) : dim_(dim) {}
  std::string name() const override { return "toy-embedder"; }
  Eigen::VectorXd embed_image(const RgbImage& image) override;
  Eigen::VectorXd embed_text(const std::string& text) override;

 private:
  int dim_;
};

/// JSON over HTTP. Routes, relative to the base url:
///   POST /ground  {image_png_b64, prompt, seed}                           -> grounded-v1
///   POST /caption {image_png_b64, prompt, prefix, noun_chunk, max_new_tokens, seed} -> {"text"}
///   POST /embed   {image_png_b64} or {text}                              -> {"embedding": [..]}
/// A non-empty api key is sent as "Authorization: Bearer <key>".
struct HttpEndpoint {
  std::string base_url;  // e.g. http://127.0.0.1:8090
  std::string api_key;
  int timeout_seconds = 120;

  nlohmann::json post(const std::string& route, const nlohmann::json& body) const;
};

class HttpGroundingClient final : public GroundingClient {
 public:
  explicit HttpGroundingClient(HttpEndpoint endpoint) : endpoint_(std::move(endpoint)) {}
  std::string name() const override { return "http:" + endpoint_.base_url; }
  nlohmann::json ground(const GroundingRequest& request) override;

 private:
  HttpEndpoint endpoint_;
};

class HttpCaptionClient final : public CaptionClient {
 public:
  explicit HttpCaptionClient(HttpEndpoint endpoint) : endpoint_(std::move(endpoint)) {}
  std::string name() const override { return "http:" + endpoint_.base_url; }
  std::string caption(const CaptionRequest& request) override;

 private:
  HttpEndpoint endpoint_;
};

class HttpEmbeddingClient final : public EmbeddingClient {
 public:
  explicit HttpEmbeddingClient(HttpEndpoint endpoint) : endpoint_(std::move(endpoint)) {}
  std::string name() const override { return "http:" + endpoint_.base_url; }
  Eigen::VectorXd embed_image(const RgbImage& image) override;
  Eigen::VectorXd embed_text(const std::string& text) override;

 private:
  HttpEndpoint endpoint_;
};

/// Endpoint from environment variables <prefix>_URL and <prefix>_API_KEY;
/// nullopt when the url variable is unset.
std::optional<HttpEndpoint> endpoint_from_env(const std::string& prefix);

}  // namespace mmpaint
