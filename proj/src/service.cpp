// Copyright 2026 The mmpaint Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmpaint/service.hpp"

#include <condition_variable>
#include <deque>
#include <map>
#include <mutex>
#include <regex>
#include <thread>

#include "mmpaint/hashing.hpp"
#include "mmpaint/image.hpp"
#include "mmpaint/pipeline.hpp"

// After Eigen: a system header pulled in by httplib defines a macro that
// clashes with Eigen internals.
#include <httplib.h>

namespace mmpaint {

// ---- request parsing -------------------------------------------------------

namespace {

class RequestReader {
 public:
  explicit RequestReader(const nlohmann::json& body) : body_(body) {
    if (!body_.is_object()) add("", "request body must be a JSON object");
  }

  void add(std::string path, std::string message) { issues.push_back({std::move(path), std::move(message)}); }

  const nlohmann::json* field(const std::string& key) const {
    if (!body_.is_object() || !body_.contains(key) || body_.at(key).is_null()) return nullptr;
    return &body_.at(key);
  }

  std::optional<RgbImage> image() {
    const auto* v = field("image");
    if (!v) {
      add("image", "required");
      return std::nullopt;
    }
    if (!v->is_string()) {
      add("image", "must be a base64 PNG string");
      return std::nullopt;
    }
    try {
      return decode_png(base64_decode(v->get<std::string>()));
    } catch (const std::exception& e) {
      add("image", std::string("not a valid base64 PNG: ") + e.what());
      return std::nullopt;
    }
  }

  std::optional<MaskSet> masks(const std::optional<RgbImage>& image, int max_masks) {
    const auto* v = field("masks");
    if (!v) {
      add("masks", "required");
      return std::nullopt;
    }
    if (!v->is_array()) {
      add("masks", "must be an array");
      return std::nullopt;
    }
    if (v->empty()) {
      add("masks", "at least one mask is required");
      return std::nullopt;
    }
    if (static_cast<int>(v->size()) > max_masks) {
      add("masks", "at most " + std::to_string(max_masks) + " masks are allowed");
      return std::nullopt;
    }
    std::vector<Mask> out;
    for (std::size_t i = 0; i < v->size(); ++i) {
      const std::string path = "masks[" + std::to_string(i) + "]";
      const auto& m = (*v)[i];
      const bool has_png = m.is_object() && m.contains("png");
      const bool has_box = m.is_object() && m.contains("bbox");
      if (has_png == has_box) {
        add(path, "must have exactly one of 'png' or 'bbox'");
        continue;
      }
      if (!image) continue;
      try {
        if (has_png) {
          if (!m["png"].is_string()) {
            add(path + ".png", "must be a base64 PNG string");
            continue;
          }
          MaskGrid g = decode_mask_png(base64_decode(m["png"].get<std::string>()));
          if (g.rows() != image->height() || g.cols() != image->width()) {
            add(path + ".png", "size " + std::to_string(g.rows()) + "x" + std::to_string(g.cols()) +
                                   " does not match the image " + std::to_string(image->height()) + "x" +
                                   std::to_string(image->width()));
            continue;
          }
          if (!g.any()) {
            add(path + ".png", "mask is empty");
            continue;
          }
          out.push_back(Mask::from_grid(std::move(g)));
        } else {
          const auto& b = m["bbox"];
          if (!b.is_array() || b.size() != 4 || !std::all_of(b.begin(), b.end(), [](const auto& x) { return x.is_number_integer(); })) {
            add(path + ".bbox", "must be four integers [x0, y0, x1, y1]");
            continue;
          }
          out.push_back(Mask::from_bbox({b[0].get<int>(), b[1].get<int>(), b[2].get<int>(), b[3].get<int>()}, image->size()));
        }
      } catch (const std::exception& e) {
        add(path + (has_png ? ".png" : ".bbox"), e.what());
      }
    }
    if (!image || out.size() != v->size()) return std::nullopt;
    return MaskSet(std::move(out), image->size(), max_masks);
  }

  template <typename T>
  T number(const std::string& key, T fallback, double lo, double hi) {
    const auto* v = field(key);
    if (!v) return fallback;
    const bool ok = std::is_integral_v<T> ? v->is_number_integer() : v->is_number();
    if (!ok) {
      add(key, std::is_integral_v<T> ? "must be an integer" : "must be a number");
      return fallback;
    }
    const double d = v->get<double>();
    if (!(d >= lo && d <= hi)) {
      nlohmann::json l = lo, h = hi;
      add(key, "must be in [" + l.dump() + ", " + h.dump() + "]");
      return fallback;
    }
    return v->get<T>();
  }

  bool boolean(const std::string& key, bool fallback) {
    const auto* v = field(key);
    if (!v) return fallback;
    if (!v->is_boolean()) {
      add(key, "must be a boolean");
      return fallback;
    }
    return v->get<bool>();
  }

  void finish() const {
    if (!issues.empty()) throw ValidationError(issues);
  }

  std::vector<FieldIssue> issues;

 private:
  const nlohmann::json& body_;
};

constexpr double kMaxSeed = 9007199254740991.0;  // exact in JSON doubles

}  // namespace

SuggestRequest parse_suggest_request(const nlohmann::json& body, const AppConfig& defaults, int max_masks) {
  RequestReader r(body);
  SuggestRequest req;
  const auto image = r.image();
  auto masks = r.masks(image, max_masks);
  req.temperature = r.number<double>("temperature", defaults.generation.temperature, 0, 10);
  req.num_samples = r.number<int>("num_samples", defaults.generation.num_samples, 1, 64);
  req.max_new_tokens = r.number<int>("max_new_tokens", defaults.generation.max_new_tokens, 1, 4096);
  req.seed = r.number<std::uint64_t>("seed", defaults.seed, 0, kMaxSeed);
  r.finish();
  req.image = *image;
  req.masks = std::move(*masks);
  return req;
}

InpaintRequest parse_inpaint_request(const nlohmann::json& body, const AppConfig& defaults, int max_masks) {
  RequestReader r(body);
  InpaintRequest req;
  const auto image = r.image();
  auto masks = r.masks(image, max_masks);
  if (const auto* p = r.field("prompts"); !p) {
    r.add("prompts", "required");
  } else if (!p->is_array()) {
    r.add("prompts", "must be an array of strings");
  } else {
    for (std::size_t i = 0; i < p->size(); ++i) {
      const auto& s = (*p)[i];
      if (!s.is_string() || s.get<std::string>().find_first_not_of(" \t\n") == std::string::npos)
        r.add("prompts[" + std::to_string(i) + "]", "must be a non-empty string");
      else
        req.prompts.push_back(s.get<std::string>());
    }
    const auto* m = r.field("masks");
    if (m && m->is_array() && p->size() != m->size())
      r.add("prompts", "expected " + std::to_string(m->size()) + " prompts (one per mask), got " + std::to_string(p->size()));
  }
  req.mode = defaults.mode;
  if (const auto* m = r.field("mode")) {
    if (!m->is_string()) {
      r.add("mode", "must be one of rca, concat, repeated");
    } else {
      try {
        req.mode = inpaint_mode_from_string(m->get<std::string>());
      } catch (const InvalidInput&) {
        r.add("mode", "must be one of rca, concat, repeated");
      }
    }
  }
  req.steps = r.number<int>("steps", defaults.sampler.steps, 1, 1000);
  req.guidance_weight = r.number<double>("guidance_weight", defaults.sampler.guidance_weight, 0, 100);
  req.seed = r.number<std::uint64_t>("seed", defaults.seed, 0, kMaxSeed);
  req.composite = r.boolean("composite", defaults.composite);
  if (const auto* id = r.field("request_id")) {
    if (!id->is_string() || id->get<std::string>().empty())
      r.add("request_id", "must be a non-empty string");
    else
      req.request_id = id->get<std::string>();
  }
  r.finish();
  req.image = *image;
  req.masks = std::move(*masks);
  return req;
}

std::string to_string(JobStatus s) {
  switch (s) {
    case JobStatus::queued: return "queued";
    case JobStatus::running: return "running";
    case JobStatus::done: return "done";
    case JobStatus::failed: return "failed";
  }
  return "queued";
}

nlohmann::json to_json(const JobRecord& r) {
  nlohmann::json j = {{"id", r.id}, {"kind", r.kind}, {"status", to_string(r.status)}, {"seed", r.seed}};
  j["request_id"] = r.request_id ? nlohmann::json(*r.request_id) : nlohmann::json(nullptr);
  if (r.status == JobStatus::done) {
    j["manifest"] = r.manifest;
    j["result_uri"] = r.result_uri;
  }
  if (r.status == JobStatus::failed) j["error"] = r.error;
  return j;
}

// ---- service ---------------------------------------------------------------

struct Service::Impl {
  AppConfig config;
  ServiceModels models;
  std::filesystem::path jobs_dir;
  std::string api_key;
  std::string hash;

  std::mutex decoder_mutex;  // serializes access to the prompt model
  std::mutex inpaint_mutex;  // serializes access to the inpainting model

  mutable std::mutex jobs_mutex;
  mutable std::condition_variable jobs_cv;
  std::map<std::string, JobRecord> jobs;
  std::map<std::string, InpaintRequest> pending;
  std::map<std::string, std::string> by_request_id;
  std::deque<std::string> queue;
  std::uint64_t counter = 0;
  bool stopping = false;
  std::vector<std::jthread> workers;

  httplib::Server server;
  std::thread listener;

  ApiResponse json_response(int status, nlohmann::json body, std::uint64_t seed) const {
    body["config_hash"] = hash;
    body["seed"] = seed;
    return {status, "application/json", body.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace)};
  }

  ApiResponse error(int status, const std::string& message, std::uint64_t seed,
                    const std::vector<FieldIssue>& fields = {}) const {
    nlohmann::json body = {{"error", message}};
    if (!fields.empty()) body["fields"] = to_json(fields);
    return json_response(status, body, seed);
  }

  void work() {
    for (;;) {
      std::string id;
      InpaintRequest req;
      {
        std::unique_lock lock(jobs_mutex);
        jobs_cv.wait(lock, [&] { return stopping || !queue.empty(); });
        if (stopping) return;
        id = queue.front();
        queue.pop_front();
        req = std::move(pending.at(id));
        pending.erase(id);
        jobs.at(id).status = JobStatus::running;
      }
      jobs_cv.notify_all();
      JobRecord update;
      try {
        InpaintJob job;
        job.image = req.image;
        job.masks = req.masks;
        job.prompts = req.prompts;
        job.mode = req.mode;
        job.composite = req.composite;
        job.sampler = config.sampler;
        job.sampler.steps = req.steps;
        job.sampler.guidance_weight = req.guidance_weight;
        job.sampler.seed = req.seed;
        InpaintResult result;
        {
          std::lock_guard model_lock(inpaint_mutex);
          result = run_inpaint_job(*models.inpaint, job);
        }
        result.manifest["service_config_hash"] = hash;
        write_inpaint_job(jobs_dir / id, job, result);
        update.status = JobStatus::done;
        update.manifest = result.manifest;
        update.manifest["prompts"] = req.prompts;
        update.result_uri = "/v1/jobs/" + id + "/result.png";
      } catch (const std::exception& e) {
        update.status = JobStatus::failed;
        update.error = e.what();
      }
      {
        std::lock_guard lock(jobs_mutex);
        auto& rec = jobs.at(id);
        rec.status = update.status;
        rec.manifest = std::move(update.manifest);
        rec.result_uri = std::move(update.result_uri);
        rec.error = std::move(update.error);
      }
      jobs_cv.notify_all();
    }
  }

  ApiResponse health() const {
    return json_response(200,
                         {{"status", "ok"},
                          {"models", {{"promptgen", models.decoder != nullptr}, {"inpaint", models.inpaint.has_value()}}}},
                         config.seed);
  }

  ApiResponse suggest(const nlohmann::json& body) {
    if (!models.decoder) return error(503, "prompt generator is not loaded", config.seed);
    const auto req = parse_suggest_request(body, config, config.dataset.rules.max_masks);
    if (req.masks.size() > models.palette.size())
      return error(422, "validation", req.seed,
                   {{"masks", "at most " + std::to_string(models.palette.size()) + " masks fit the palette"}});
    GenerationConfig g{req.temperature, req.num_samples, req.max_new_tokens, req.seed};
    SuggestOutput out;
    {
      std::lock_guard lock(decoder_mutex);
      out = suggest_prompts(req.image, req.masks, g, *models.decoder, models.palette);
    }
    nlohmann::json j = to_json(out);
    j["temperature"] = req.temperature;
    j["num_samples"] = req.num_samples;
    return json_response(200, j, req.seed);
  }

  ApiResponse submit(const nlohmann::json& body) {
    if (!models.inpaint) return error(503, "inpainting model is not loaded", config.seed);
    auto req = parse_inpaint_request(body, config, config.dataset.rules.max_masks);
    try {
      const auto& m = *models.inpaint;
      if (m.codec->latent_size(req.image.size()) != m.backbone->latent_resolution())
        throw InvalidInput("does not map to the model's latent grid");
    } catch (const std::exception& e) {
      return error(422, "validation", req.seed, {{"image", std::string("size unsupported by the model: ") + e.what()}});
    }
    std::unique_lock lock(jobs_mutex);
    if (req.request_id) {
      const auto it = by_request_id.find(*req.request_id);
      if (it != by_request_id.end()) {
        const auto rec = jobs.at(it->second);
        lock.unlock();
        return json_response(200, to_json(rec), rec.seed);
      }
    }
    if (static_cast<int>(queue.size()) >= config.service.queue_depth)
      return error(429, "job queue is full", req.seed);
    JobRecord rec;
    rec.id = req.request_id ? "job-" + sha256_hex(*req.request_id).substr(0, 16) : "job-" + std::to_string(++counter);
    rec.request_id = req.request_id;
    rec.seed = req.seed;
    if (req.request_id) by_request_id[*req.request_id] = rec.id;
    jobs[rec.id] = rec;
    pending[rec.id] = std::move(req);
    queue.push_back(rec.id);
    lock.unlock();
    jobs_cv.notify_all();
    return json_response(202, to_json(rec), rec.seed);
  }

  ApiResponse job_status(const std::string& id) const {
    std::unique_lock lock(jobs_mutex);
    const auto it = jobs.find(id);
    if (it == jobs.end()) return error(404, "unknown job '" + id + "'", config.seed);
    const JobRecord rec = it->second;
    lock.unlock();
    nlohmann::json j = to_json(rec);
    if (rec.status == JobStatus::done) {
      const auto bytes = read_text_file(jobs_dir / id / "result.png");
      j["result_png"] = base64_encode(std::span(reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()));
    }
    return json_response(200, j, rec.seed);
  }

  ApiResponse job_result(const std::string& id) const {
    std::unique_lock lock(jobs_mutex);
    const auto it = jobs.find(id);
    if (it == jobs.end()) return error(404, "unknown job '" + id + "'", config.seed);
    if (it->second.status != JobStatus::done) return error(409, "job '" + id + "' has no result yet", it->second.seed);
    lock.unlock();
    return {200, "image/png", read_text_file(jobs_dir / id / "result.png")};
  }

  ApiResponse echo_masks(const nlohmann::json& body) const {
    std::vector<FieldIssue> issues;
    if (!body.is_object() || !body.contains("masks") || !body["masks"].is_array() || body["masks"].empty())
      return error(422, "validation", config.seed, {{"masks", "must be a non-empty array"}});
    nlohmann::json out = nlohmann::json::array();
    for (std::size_t i = 0; i < body["masks"].size(); ++i) {
      const auto& m = body["masks"][i];
      const std::string path = "masks[" + std::to_string(i) + "].png";
      try {
        if (!m.is_object() || !m.contains("png") || !m["png"].is_string()) throw InvalidInput("must be a base64 PNG string");
        const MaskGrid g = decode_mask_png(base64_decode(m["png"].get<std::string>()));
        out.push_back({{"png", base64_encode(encode_mask_png(g))},
                       {"height", g.rows()},
                       {"width", g.cols()},
                       {"area", g.count()}});
      } catch (const std::exception& e) {
        issues.push_back({path, e.what()});
      }
    }
    if (!issues.empty()) return error(422, "validation", config.seed, issues);
    return json_response(200, {{"masks", out}}, config.seed);
  }
};

Service::Service(AppConfig config, ServiceModels models, std::filesystem::path jobs_dir,
                 std::optional<std::string> api_key)
    : impl_(std::make_unique<Impl>()) {
  impl_->config = std::move(config);
  impl_->models = std::move(models);
  impl_->jobs_dir = std::move(jobs_dir);
  impl_->hash = mmpaint::config_hash(impl_->config);
  if (api_key) {
    impl_->api_key = *api_key;
  } else if (const char* k = std::getenv(impl_->config.service.api_key_env.c_str())) {
    impl_->api_key = k;
  }
  std::filesystem::create_directories(impl_->jobs_dir);
  for (int i = 0; i < impl_->config.service.workers; ++i) impl_->workers.emplace_back([this] { impl_->work(); });
}

Service::~Service() {
  stop();
  {
    std::lock_guard lock(impl_->jobs_mutex);
    impl_->stopping = true;
  }
  impl_->jobs_cv.notify_all();
  impl_->workers.clear();
}

ApiResponse Service::handle(const std::string& method, const std::string& path, const std::string& body,
                            const std::string& authorization) {
  Impl& s = *impl_;
  static const std::regex job_re(R"(^/v1/jobs/([A-Za-z0-9_-]+)$)");
  static const std::regex result_re(R"(^/v1/jobs/([A-Za-z0-9_-]+)/result\.png$)");
  try {
    if (path == "/health") {
      if (method != "GET") return s.error(405, "method not allowed", s.config.seed);
      return s.health();
    }
    if (path.rfind("/v1/", 0) != 0) return s.error(404, "no route for " + path, s.config.seed);
    if (!s.api_key.empty() && authorization != "Bearer " + s.api_key)
      return s.error(401, "missing or invalid API key", s.config.seed);

    std::smatch m;
    if (std::regex_match(path, m, result_re)) {
      if (method != "GET") return s.error(405, "method not allowed", s.config.seed);
      return s.job_result(m[1]);
    }
    if (std::regex_match(path, m, job_re)) {
      if (method != "GET") return s.error(405, "method not allowed", s.config.seed);
      return s.job_status(m[1]);
    }
    const bool known = path == "/v1/suggest" || path == "/v1/inpaint" || path == "/v1/masks/echo";
    if (!known) return s.error(404, "no route for " + path, s.config.seed);
    if (method != "POST") return s.error(405, "method not allowed", s.config.seed);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(body);
    } catch (const nlohmann::json::parse_error&) {
      return s.error(400, "request body is not valid JSON", s.config.seed);
    }
    if (path == "/v1/suggest") return s.suggest(j);
    if (path == "/v1/inpaint") return s.submit(j);
    return s.echo_masks(j);
  } catch (const ValidationError& e) {
    return s.error(422, "validation", s.config.seed, e.issues());
  } catch (const InvalidInput& e) {
    return s.error(422, "validation", s.config.seed, {{"", e.what()}});
  } catch (const std::exception& e) {
    return s.error(500, e.what(), s.config.seed);
  }
}

namespace {

void install_routes(httplib::Server& server, Service& service) {
  auto route = [&service](const httplib::Request& req, httplib::Response& res) {
    const auto r = service.handle(req.method, req.path, req.body, req.get_header_value("Authorization"));
    res.status = r.status;
    res.set_content(r.body, r.content_type);
  };
  server.Get(R"(/.*)", route);
  server.Post(R"(/.*)", route);
  server.Put(R"(/.*)", route);
  server.Delete(R"(/.*)", route);
  server.set_payload_max_length(64ull << 20);
}

}  // namespace

int Service::start(const std::string& host, int port) {
  install_routes(impl_->server, *this);
  int bound = port;
  if (port == 0) {
    bound = impl_->server.bind_to_any_port(host);
  } else if (!impl_->server.bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound < 0) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
  impl_->listener = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return bound;
}

void Service::serve(const std::string& host, int port) {
  install_routes(impl_->server, *this);
  if (!impl_->server.listen(host, port)) throw std::runtime_error("cannot listen on " + host + ":" + std::to_string(port));
}

void Service::stop() {
  impl_->server.stop();
  if (impl_->listener.joinable()) impl_->listener.join();
}

std::optional<JobRecord> Service::job(const std::string& id) const {
  std::lock_guard lock(impl_->jobs_mutex);
  const auto it = impl_->jobs.find(id);
  if (it == impl_->jobs.end()) return std::nullopt;
  return it->second;
}

std::optional<JobRecord> Service::wait_for(const std::string& id, std::chrono::milliseconds timeout) const {
  std::unique_lock lock(impl_->jobs_mutex);
  if (!impl_->jobs.count(id)) return std::nullopt;
  impl_->jobs_cv.wait_for(lock, timeout, [&] {
    const auto s = impl_->jobs.at(id).status;
    return s == JobStatus::done || s == JobStatus::failed;
  });
  return impl_->jobs.at(id);
}

const std::string& Service::config_hash() const { return impl_->hash; }

}  // namespace mmpaint
