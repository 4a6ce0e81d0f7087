// Copyright 2026 The mmpaint Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmpaint/model_clients.hpp"

#include <cctype>
#include <cstdlib>

#include <httplib.h>

#include "mmpaint/hashing.hpp"

namespace mmpaint {

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::grounded_captioner: return "grounded_captioner";
    case ModelKind::object_captioner: return "object_captioner";
    case ModelKind::image_text_embedder: return "image_text_embedder";
  }
  return "unknown";
}

double cosine_similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size()) throw InvalidInput("cosine_similarity: dimension mismatch");
  const double na = a.norm(), nb = b.norm();
  if (na == 0 || nb == 0) return 0.0;
  return a.dot(b) / (na * nb);
}

nlohmann::json FixtureGroundingClient::ground(const GroundingRequest& request) {
  if (auto it = replies_.find(request.image_id); it != replies_.end()) return it->second;
  if (!dir_.empty()) {
    const auto path = dir_ / (request.image_id + ".json");
    if (std::filesystem::exists(path)) {
      try {
        return nlohmann::json::parse(read_text_file(path));
      } catch (const nlohmann::json::exception& e) {
        throw ProviderError("fixture " + path.string() + ": " + e.what());
      }
    }
  }
  throw ProviderError("no grounding fixture for image '" + request.image_id + "'");
}

std::unique_ptr<CaptionClient> make_echo_caption_client() {
  return std::make_unique<FunctionCaptionClient>(
      [](const CaptionRequest& r) { return " " + r.noun_chunk + " in the scene"; }, "echo-caption");
}

Eigen::VectorXd ToyEmbeddingClient::embed_image(const RgbImage& image) {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(dim_);
  for (int y = 0; y < image.height(); ++y)
    for (int x = 0; x < image.width(); ++x) {
      const Rgb c = image.at(y, x);
      const int bin = (c.r / 64) * 16 + (c.g / 64) * 4 + c.b / 64;
      v(bin % dim_) += 1.0;
    }
  return v;
}

Eigen::VectorXd ToyEmbeddingClient::embed_text(const std::string& text) {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(dim_);
  std::string word;
  auto flush = [&] {
    if (word.empty()) return;
    const std::string digest = sha256_hex(word);
    v(static_cast<Eigen::Index>(std::stoul(digest.substr(0, 8), nullptr, 16) % static_cast<unsigned long>(dim_))) += 1;
    word.clear();
  };
  for (char ch : text) {
    if (std::isalnum(static_cast<unsigned char>(ch)))
      word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    else
      flush();
  }
  flush();
  return v;
}

nlohmann::json HttpEndpoint::post(const std::string& route, const nlohmann::json& body) const {
  httplib::Client client(base_url);
  client.set_connection_timeout(timeout_seconds, 0);
  client.set_read_timeout(timeout_seconds, 0);
  client.set_write_timeout(timeout_seconds, 0);
  httplib::Headers headers;
  if (!api_key.empty()) headers.emplace("Authorization", "Bearer " + api_key);
  const auto res = client.Post(route, headers, body.dump(), "application/json");
  if (!res) throw ProviderError(base_url + route + ": " + httplib::to_string(res.error()));
  if (res->status != 200) throw ProviderError(base_url + route + ": HTTP " + std::to_string(res->status));
  try {
    return nlohmann::json::parse(res->body);
  } catch (const nlohmann::json::exception& e) {
    throw ProviderError(base_url + route + ": malformed reply: " + e.what());
  }
}

namespace {

std::string png_b64(const RgbImage* image) {
  if (!image) throw InvalidInput("request has no image");
  return base64_encode(encode_png(*image));
}

Eigen::VectorXd embedding_from(const nlohmann::json& reply) {
  if (!reply.contains("embedding") || !reply["embedding"].is_array())
    throw ProviderError("embed reply lacks an 'embedding' array");
  const auto& arr = reply["embedding"];
  Eigen::VectorXd v(static_cast<Eigen::Index>(arr.size()));
  for (std::size_t i = 0; i < arr.size(); ++i) v(static_cast<Eigen::Index>(i)) = arr[i].get<double>();
  return v;
}

}  // namespace

nlohmann::json HttpGroundingClient::ground(const GroundingRequest& request) {
  return endpoint_.post("/ground", {{"image_png_b64", png_b64(request.image)},
                                    {"image_id", request.image_id},
                                    {"prompt", request.prompt},
                                    {"seed", request.seed}});
}

std::string HttpCaptionClient::caption(const CaptionRequest& request) {
  const auto reply = endpoint_.post("/caption", {{"image_png_b64", png_b64(request.image)},
                                                 {"prompt", request.prompt},
                                                 {"prefix", request.prefix},
                                                 {"noun_chunk", request.noun_chunk},
                                                 {"max_new_tokens", request.max_new_tokens},
                                                 {"seed", request.seed}});
  if (!reply.contains("text") || !reply["text"].is_string()) throw ProviderError("caption reply lacks 'text'");
  return reply["text"].get<std::string>();
}

Eigen::VectorXd HttpEmbeddingClient::embed_image(const RgbImage& image) {
  return embedding_from(endpoint_.post("/embed", {{"image_png_b64", png_b64(&image)}}));
}

Eigen::VectorXd HttpEmbeddingClient::embed_text(const std::string& text) {
  return embedding_from(endpoint_.post("/embed", {{"text", text}}));
}

std::optional<HttpEndpoint> endpoint_from_env(const std::string& prefix) {
  const char* url = std::getenv((prefix + "_URL").c_str());
  if (!url || !*url) return std::nullopt;
  HttpEndpoint e;
  e.base_url = url;
  if (const char* key = std::getenv((prefix + "_API_KEY").c_str())) e.api_key = key;
  return e;
}

}  // namespace mmpaint
