// Copyright 2026 The mmpaint Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmpaint/annotation.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <mutex>
#include <regex>
#include <set>
#include <sstream>
#include <thread>

#include "mmpaint/hashing.hpp"

namespace mmpaint {

namespace {

std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> words(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

/// Root is one word and occurs in the chunk (case-insensitively).
std::optional<std::string> root_problem(const std::string& noun_chunk, const std::string& root) {
  if (root.empty()) return "empty root";
  if (root.find_first_of(" \t\r\n") != std::string::npos) return "root '" + root + "' is not a single word";
  if (lower(noun_chunk).find(lower(root)) == std::string::npos)
    return "root '" + root + "' does not occur in '" + noun_chunk + "'";
  return std::nullopt;
}

std::string relative_to(const std::filesystem::path& p, const std::filesystem::path& base) {
  return p.lexically_relative(base).generic_string();
}

std::string store_png(const std::filesystem::path& out_dir, const RgbImage& image) {
  return relative_to(store_content_addressed(out_dir / "blobs", encode_png(image), ".png"), out_dir);
}

nlohmann::json boxes_json(const std::vector<BBox>& boxes) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& b : boxes) j.push_back(to_json(b));
  return j;
}

std::vector<BBox> boxes_from(const nlohmann::json& j) {
  std::vector<BBox> out;
  for (const auto& b : j) out.push_back(bbox_from_json(b));
  return out;
}

/// Parsed lines of a JSONL file. A final line without a newline that fails
/// to parse is treated as an interrupted write and dropped.
std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path) {
  std::vector<nlohmann::json> out;
  if (!std::filesystem::exists(path)) return out;
  const std::string text = read_text_file(path);
  std::size_t pos = 0;
  int line_no = 0;
  while (pos < text.size()) {
    const auto nl = text.find('\n', pos);
    const bool terminated = nl != std::string::npos;
    const std::string line = text.substr(pos, terminated ? nl - pos : std::string::npos);
    pos = terminated ? nl + 1 : text.size();
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      out.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      if (!terminated) break;
      throw InvalidInput(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

/// Append-only JSONL files behind one lock, so every line is written whole
/// by a single writer at a time.
class JsonlWriter {
 public:
  void open(const std::string& key, const std::filesystem::path& path) {
    auto& f = files_[key];
    f.open(path, std::ios::app | std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path.string());
  }
  void append(const std::string& key, const nlohmann::json& j) {
    std::lock_guard lock(mu_);
    auto& f = files_.at(key);
    f << j.dump() << '\n';
    f.flush();
  }

 private:
  std::mutex mu_;
  std::map<std::string, std::ofstream> files_;
};

std::uint64_t derived_seed(std::uint64_t seed, const std::string& image_id) {
  return seed ^ std::stoull(sha256_hex(image_id).substr(0, 16), nullptr, 16);
}

}  // namespace

std::string last_word_root(const std::string& noun_chunk) {
  std::string last;
  for (const auto& w : words(noun_chunk)) {
    std::string alpha;
    for (char c : w)
      if (std::isalpha(static_cast<unsigned char>(c))) alpha.push_back(c);
    if (!alpha.empty()) last = alpha;
  }
  return lower(last);
}

GroundedDescription parse_grounded_reply(const nlohmann::json& reply, Resolution image_size,
                                         const RootExtractor& root_extractor) {
  if (!reply.is_object() || reply.value("schema", "") != "grounded-v1")
    throw ProviderError("grounding reply is not a grounded-v1 document");
  if (!reply.contains("caption") || !reply["caption"].is_string())
    throw ProviderError("grounding reply lacks a caption");
  GroundedDescription d;
  d.caption = reply["caption"].get<std::string>();
  const auto entities = reply.value("entities", nlohmann::json::array());
  if (!entities.is_array()) throw ProviderError("grounding reply 'entities' is not an array");
  for (std::size_t i = 0; i < entities.size(); ++i) {
    const auto& e = entities[i];
    const std::string where = "entity " + std::to_string(i) + ": ";
    if (!e.is_object() || !e.contains("noun_chunk") || !e["noun_chunk"].is_string() ||
        trim(e["noun_chunk"].get<std::string>()).empty()) {
      d.diagnostics.push_back(where + "missing noun_chunk");
      continue;
    }
    GroundedEntity g;
    g.noun_chunk = trim(e["noun_chunk"].get<std::string>());
    g.root = e.contains("root") && e["root"].is_string() ? e["root"].get<std::string>() : std::string();
    if (g.root.empty()) g.root = root_extractor(g.noun_chunk);
    if (auto problem = root_problem(g.noun_chunk, g.root)) {
      d.diagnostics.push_back(where + *problem);
      continue;
    }
    for (const auto& b : e.value("bboxes", nlohmann::json::array())) {
      if (!b.is_array() || b.size() != 4 || !std::all_of(b.begin(), b.end(), [](const auto& v) { return v.is_number(); })) {
        d.diagnostics.push_back(where + "malformed box " + b.dump());
        continue;
      }
      auto px = [&](double v, int extent) {
        return static_cast<int>(std::lround(std::clamp(v, 0.0, 1.0) * extent));
      };
      g.bboxes.push_back({px(b[0].get<double>(), image_size.width), px(b[1].get<double>(), image_size.height),
                          px(b[2].get<double>(), image_size.width), px(b[3].get<double>(), image_size.height)});
    }
    if (g.bboxes.empty()) {
      d.diagnostics.push_back(where + "'" + g.noun_chunk + "' has no boxes");
      continue;
    }
    d.entities.push_back(std::move(g));
  }
  return d;
}

nlohmann::json grounded_reply_from_markup(const std::string& markup, int bins) {
  if (bins < 1) throw InvalidInput("bins must be >= 1");
  static const std::regex phrase_re(R"(<phrase>(.*?)</phrase>\s*<object>(.*?)</object>)");
  static const std::regex patch_re(R"(<patch_index_(\d+)>)");
  static const std::regex tag_re(R"(<[^>]*>)");
  nlohmann::json reply{{"schema", "grounded-v1"}, {"entities", nlohmann::json::array()}};
  std::string caption;
  std::size_t last = 0;
  for (auto it = std::sregex_iterator(markup.begin(), markup.end(), phrase_re); it != std::sregex_iterator(); ++it) {
    const auto& m = *it;
    caption += markup.substr(last, static_cast<std::size_t>(m.position(0)) - last) + m[1].str();
    last = static_cast<std::size_t>(m.position(0) + m.length(0));
    const std::string objects = m[2].str();
    std::vector<int> idx;
    for (auto p = std::sregex_iterator(objects.begin(), objects.end(), patch_re); p != std::sregex_iterator(); ++p)
      idx.push_back(std::stoi((*p)[1].str()));
    nlohmann::json boxes = nlohmann::json::array();
    for (std::size_t k = 0; k + 1 < idx.size(); k += 2) {
      const int tl = idx[k], br = idx[k + 1];
      const double n = bins;
      boxes.push_back({(tl % bins) / n, (tl / bins) / n, (br % bins + 1) / n, (br / bins + 1) / n});
    }
    reply["entities"].push_back({{"noun_chunk", trim(m[1].str())}, {"bboxes", boxes}});
  }
  caption += markup.substr(last);
  caption = std::regex_replace(caption, tag_re, "");
  reply["caption"] = trim(std::regex_replace(caption, std::regex(R"(\s+)"), " "));
  return reply;
}

GroundedDescription ground_image(const std::string& image_id, const RgbImage& image, GroundingClient& client,
                                 const RootExtractor& root_extractor, std::uint64_t seed) {
  return parse_grounded_reply(client.ground({image_id, &image, kGroundingPrompt, seed}), image.size(),
                              root_extractor);
}

std::string truncate_tokens(const std::string& text, int cap, const Tokenizer* tokenizer) {
  if (cap < 1) throw InvalidInput("token cap must be >= 1");
  if (tokenizer) {
    const auto tokens = tokenizer->encode(text);
    if (static_cast<int>(tokens.size()) <= cap) return text;
    return trim(text.substr(0, tokens[static_cast<std::size_t>(cap - 1)].end));
  }
  std::size_t pos = 0;
  for (int k = 0; k < cap; ++k) {
    const auto b = text.find_first_not_of(" \t\r\n", pos);
    if (b == std::string::npos) return text;
    pos = text.find_first_of(" \t\r\n", b);
    if (pos == std::string::npos) return text;
  }
  return text.find_first_not_of(" \t\r\n", pos) == std::string::npos ? text : text.substr(0, pos);
}

CaptionOutcome caption_object(const RgbImage& image, const GroundedEntity& entity, CaptionClient& client,
                              const CaptionOptions& options) {
  if (entity.bboxes.empty()) throw InvalidInput("caption_object: entity has no boxes");
  CaptionOutcome out;
  out.collage_used = entity.bboxes.size() >= 2;
  out.visual = out.collage_used ? build_collage(image, entity.bboxes).pixels : crop(image, entity.bboxes.front());

  CaptionRequest req;
  req.image = &out.visual;
  req.prompt = options.tmpl.prompt;
  if (const auto at = req.prompt.find("{noun_chunk}"); at != std::string::npos)
    req.prompt.replace(at, std::string("{noun_chunk}").size(), entity.noun_chunk);
  req.prefix = options.tmpl.prefix;
  req.noun_chunk = entity.noun_chunk;
  req.max_new_tokens = options.token_cap;
  for (int attempt = 0; attempt < 2; ++attempt) {
    req.seed = options.seed + static_cast<std::uint64_t>(attempt);
    ++out.attempts;
    std::string reply = trim(client.caption(req));
    if (!req.prefix.empty() && reply.starts_with(req.prefix)) reply = trim(reply.substr(req.prefix.size()));
    if (reply.empty()) continue;
    const std::string full = req.prefix.empty() ? reply : req.prefix + " " + reply;
    out.caption = truncate_tokens(full, options.token_cap, options.tokenizer);
    out.valid = true;
    return out;
  }
  out.diagnostic = "empty caption after retry";
  return out;
}

nlohmann::json to_json(const AnnotationRecord& r) {
  return {{"image_id", r.image_id},
          {"entity_index", r.entity_index},
          {"noun_chunk", r.noun_chunk},
          {"root", r.root},
          {"bboxes", boxes_json(r.bboxes)},
          {"object_caption", r.object_caption},
          {"collage_used", r.collage_used},
          {"clip_sim", r.clip_sim ? nlohmann::json(*r.clip_sim) : nlohmann::json(nullptr)},
          {"image_size", {r.image_size.height, r.image_size.width}},
          {"image_path", r.image_path},
          {"crop_path", r.crop_path}};
}

AnnotationRecord annotation_record_from_json(const nlohmann::json& j, const MaskRules& rules) {
  AnnotationRecord r;
  try {
    r.image_id = j.at("image_id").get<std::string>();
    r.entity_index = j.at("entity_index").get<int>();
    r.noun_chunk = j.at("noun_chunk").get<std::string>();
    r.root = j.at("root").get<std::string>();
    r.bboxes = boxes_from(j.at("bboxes"));
    r.object_caption = j.at("object_caption").get<std::string>();
    r.collage_used = j.at("collage_used").get<bool>();
    if (j.contains("clip_sim") && !j["clip_sim"].is_null()) r.clip_sim = j["clip_sim"].get<double>();
    r.image_size = {j.at("image_size").at(0).get<int>(), j.at("image_size").at(1).get<int>()};
    r.image_path = j.at("image_path").get<std::string>();
    r.crop_path = j.at("crop_path").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("annotation record: ") + e.what());
  }
  const std::string key = r.image_id + "#" + std::to_string(r.entity_index) + ": ";
  if (r.image_id.empty()) throw InvalidInput("annotation record: empty image_id");
  if (r.entity_index < 0) throw InvalidInput(key + "negative entity_index");
  if (auto problem = root_problem(r.noun_chunk, r.root)) throw InvalidInput(key + *problem);
  if (trim(r.object_caption).empty()) throw InvalidInput(key + "empty object_caption");
  if (r.bboxes.empty()) throw InvalidInput(key + "no boxes");
  const auto filtered = filter_bboxes(r.bboxes, r.image_size, rules);
  if (!filtered.rejected.empty())
    throw InvalidInput(key + "box " + std::to_string(filtered.rejected.front().index) + " fails the area filter: " +
                       filtered.rejected.front().reason);
  if (r.collage_used != (r.bboxes.size() >= 2)) throw InvalidInput(key + "collage_used disagrees with the box count");
  return r;
}

nlohmann::json to_json(const ImageEntry& e) {
  return {{"image_id", e.image_id},
          {"image_path", e.image_path},
          {"caption", e.caption},
          {"size", {e.size.height, e.size.width}},
          {"entity_count", e.entity_count},
          {"clip_sim", e.clip_sim ? nlohmann::json(*e.clip_sim) : nlohmann::json(nullptr)}};
}

ImageEntry image_entry_from_json(const nlohmann::json& j) {
  try {
    ImageEntry e;
    e.image_id = j.at("image_id").get<std::string>();
    e.image_path = j.at("image_path").get<std::string>();
    e.caption = j.at("caption").get<std::string>();
    e.size = {j.at("size").at(0).get<int>(), j.at("size").at(1).get<int>()};
    e.entity_count = j.at("entity_count").get<int>();
    if (j.contains("clip_sim") && !j["clip_sim"].is_null()) e.clip_sim = j["clip_sim"].get<double>();
    return e;
  } catch (const nlohmann::json::exception& ex) {
    throw InvalidInput(std::string("image entry: ") + ex.what());
  }
}

nlohmann::json to_json(const SkipEntry& e) {
  return {{"image_id", e.image_id},
          {"entity_index", e.entity_index ? nlohmann::json(*e.entity_index) : nlohmann::json(nullptr)},
          {"reason", e.reason},
          {"retryable", e.retryable}};
}

std::vector<ImageSource> list_images(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw InvalidInput("images: '" + dir.string() + "' is not a directory");
  std::vector<ImageSource> out;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.is_regular_file() && lower(entry.path().extension().string()) == ".png")
      out.push_back({entry.path().stem().string(), entry.path()});
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.image_id < b.image_id; });
  return out;
}

nlohmann::json to_json(const AnnotationSummary& s) {
  nlohmann::json skipped = nlohmann::json::array();
  for (const auto& e : s.skipped) skipped.push_back(to_json(e));
  return {{"images_total", s.images_total},
          {"images_processed", s.images_processed},
          {"images_already_done", s.images_already_done},
          {"records_written", s.records_written},
          {"records_already_done", s.records_already_done},
          {"skipped", skipped}};
}

AnnotationSummary annotate(const std::vector<ImageSource>& images, const AnnotationClients& clients,
                           const std::filesystem::path& out_dir, const AnnotationOptions& options) {
  if (!clients.grounder) throw InvalidInput("annotate: no grounded captioner configured");
  if (!clients.captioner) throw InvalidInput("annotate: no object captioner configured");
  if (options.workers < 1) throw InvalidInput("workers: must be >= 1");
  std::filesystem::create_directories(out_dir);

  std::set<std::string> done_images;
  std::set<std::pair<std::string, int>> done_keys;
  for (const auto& j : read_jsonl(out_dir / "images.jsonl")) done_images.insert(j.at("image_id").get<std::string>());
  for (const auto& j : read_jsonl(out_dir / "records.jsonl"))
    done_keys.insert({j.at("image_id").get<std::string>(), j.at("entity_index").get<int>()});
  for (const auto& j : read_jsonl(out_dir / "skipped.jsonl")) {
    if (j.value("retryable", true)) continue;
    const auto id = j.at("image_id").get<std::string>();
    if (j["entity_index"].is_null())
      done_images.insert(id);
    else
      done_keys.insert({id, j["entity_index"].get<int>()});
  }

  JsonlWriter writer;
  writer.open("records", out_dir / "records.jsonl");
  writer.open("images", out_dir / "images.jsonl");
  writer.open("skipped", out_dir / "skipped.jsonl");

  AnnotationSummary summary;
  summary.images_total = static_cast<int>(images.size());
  std::mutex summary_mu;
  auto skip = [&](SkipEntry e) {
    writer.append("skipped", to_json(e));
    std::lock_guard lock(summary_mu);
    summary.skipped.push_back(std::move(e));
  };
  auto bump = [&](int AnnotationSummary::*field) {
    std::lock_guard lock(summary_mu);
    ++(summary.*field);
  };

  auto process = [&](const ImageSource& src) {
    if (done_images.contains(src.image_id)) return bump(&AnnotationSummary::images_already_done);
    RgbImage image;
    try {
      image = read_png(src.path);
    } catch (const std::exception& e) {
      return skip({src.image_id, std::nullopt, std::string("unreadable image: ") + e.what(), false});
    }
    const std::uint64_t seed = derived_seed(options.seed, src.image_id);
    GroundedDescription grounded;
    try {
      grounded = ground_image(src.image_id, image, *clients.grounder, clients.root_extractor, seed);
    } catch (const ProviderError& e) {
      return skip({src.image_id, std::nullopt, std::string("grounding failed: ") + e.what(), true});
    }
    if (grounded.entities.empty())
      return skip({src.image_id, std::nullopt, "no grounded entities", false});

    const std::string image_path = store_png(out_dir, image);
    bool incomplete = false;
    int kept = 0;
    for (std::size_t i = 0; i < grounded.entities.size(); ++i) {
      const int index = static_cast<int>(i);
      if (done_keys.contains({src.image_id, index})) {
        bump(&AnnotationSummary::records_already_done);
        ++kept;
        continue;
      }
      GroundedEntity entity = grounded.entities[i];
      const auto filtered = filter_bboxes(entity.bboxes, image.size(), options.rules);
      if (filtered.kept.empty()) {
        skip({src.image_id, index, "no box of '" + entity.noun_chunk + "' passes the area filter", false});
        continue;
      }
      entity.bboxes = filtered.kept;
      CaptionOptions copts = options.caption;
      copts.seed = seed + 2 * i;
      CaptionOutcome cap;
      try {
        cap = caption_object(image, entity, *clients.captioner, copts);
      } catch (const ProviderError& e) {
        incomplete = true;
        skip({src.image_id, index, std::string("captioning failed: ") + e.what(), true});
        continue;
      }
      if (!cap.valid) {
        skip({src.image_id, index, cap.diagnostic, false});
        continue;
      }
      AnnotationRecord r;
      r.image_id = src.image_id;
      r.entity_index = index;
      r.noun_chunk = entity.noun_chunk;
      r.root = entity.root;
      r.bboxes = entity.bboxes;
      r.object_caption = cap.caption;
      r.collage_used = cap.collage_used;
      r.image_size = image.size();
      r.image_path = image_path;
      r.crop_path = store_png(out_dir, cap.visual);
      if (clients.embedder) {
        try {
          r.clip_sim = cosine_similarity(clients.embedder->embed_image(cap.visual),
                                         clients.embedder->embed_text(r.object_caption));
        } catch (const ProviderError&) {
          r.clip_sim.reset();
        }
      }
      writer.append("records", to_json(r));
      bump(&AnnotationSummary::records_written);
      ++kept;
    }
    if (incomplete) return;
    ImageEntry entry{src.image_id, image_path, grounded.caption, image.size(), kept, std::nullopt};
    if (clients.embedder) {
      try {
        entry.clip_sim = cosine_similarity(clients.embedder->embed_image(image),
                                           clients.embedder->embed_text(grounded.caption));
      } catch (const ProviderError&) {
        entry.clip_sim.reset();
      }
    }
    writer.append("images", to_json(entry));
    bump(&AnnotationSummary::images_processed);
  };

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < images.size(); i = next++) {
      try {
        process(images[i]);
      } catch (const std::exception& e) {
        skip({images[i].image_id, std::nullopt, std::string("unexpected failure: ") + e.what(), true});
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    const int n = std::min<int>(options.workers, std::max<int>(1, static_cast<int>(images.size())));
    for (int w = 0; w < n; ++w) pool.emplace_back(worker);
  }
  std::sort(summary.skipped.begin(), summary.skipped.end(), [](const SkipEntry& a, const SkipEntry& b) {
    return std::tie(a.image_id, a.entity_index) < std::tie(b.image_id, b.entity_index);
  });
  return summary;
}

AnnotationStore load_annotations(const std::filesystem::path& dir, const MaskRules& rules) {
  AnnotationStore store;
  std::set<std::string> seen_images;
  for (const auto& j : read_jsonl(dir / "images.jsonl")) {
    auto e = image_entry_from_json(j);
    if (seen_images.insert(e.image_id).second) store.images.push_back(std::move(e));
  }
  std::set<std::pair<std::string, int>> seen;
  for (const auto& j : read_jsonl(dir / "records.jsonl")) {
    auto r = annotation_record_from_json(j, rules);
    if (seen.insert({r.image_id, r.entity_index}).second) store.records.push_back(std::move(r));
  }
  std::sort(store.images.begin(), store.images.end(),
            [](const auto& a, const auto& b) { return a.image_id < b.image_id; });
  std::sort(store.records.begin(), store.records.end(), [](const auto& a, const auto& b) {
    return std::tie(a.image_id, a.entity_index) < std::tie(b.image_id, b.entity_index);
  });
  return store;
}

nlohmann::json to_json(const AuditSummary& s) {
  nlohmann::json flagged = nlohmann::json::array();
  for (const auto& [id, idx] : s.flagged) flagged.push_back({{"image_id", id}, {"entity_index", idx}});
  return {{"threshold", s.threshold},   {"global_mean", s.global_mean}, {"local_mean", s.local_mean},
          {"global_count", s.global_count}, {"local_count", s.local_count}, {"flagged", flagged}};
}

AuditSummary audit_alignment(const AnnotationStore& store, const std::filesystem::path& dir, EmbeddingClient& embedder,
                             double threshold) {
  AuditSummary s;
  s.threshold = threshold;
  double global = 0, local = 0;
  for (const auto& e : store.images) {
    global += cosine_similarity(embedder.embed_image(read_png(dir / e.image_path)), embedder.embed_text(e.caption));
    ++s.global_count;
  }
  for (const auto& r : store.records) {
    const double sim =
        cosine_similarity(embedder.embed_image(read_png(dir / r.crop_path)), embedder.embed_text(r.object_caption));
    local += sim;
    ++s.local_count;
    if (sim < threshold) s.flagged.emplace_back(r.image_id, r.entity_index);
  }
  if (s.global_count) s.global_mean = global / s.global_count;
  if (s.local_count) s.local_mean = local / s.local_count;
  return s;
}

nlohmann::json to_json(const DatasetExample& e) {
  nlohmann::json regions = nlohmann::json::array();
  for (const auto& r : e.regions)
    regions.push_back({{"entity_index", r.entity_index},
                       {"noun_chunk", r.noun_chunk},
                       {"root", r.root},
                       {"prompt", r.prompt},
                       {"bboxes", boxes_json(r.bboxes)},
                       {"mask_path", r.mask_path}});
  return {{"image_id", e.image_id}, {"image_path", e.image_path}, {"regions", regions}};
}

DatasetExample dataset_example_from_json(const nlohmann::json& j) {
  try {
    DatasetExample e;
    e.image_id = j.at("image_id").get<std::string>();
    e.image_path = j.at("image_path").get<std::string>();
    for (const auto& r : j.at("regions"))
      e.regions.push_back({r.at("entity_index").get<int>(), r.at("noun_chunk").get<std::string>(),
                           r.at("root").get<std::string>(), r.at("prompt").get<std::string>(),
                           boxes_from(r.at("bboxes")), r.at("mask_path").get<std::string>()});
    if (e.regions.empty()) throw InvalidInput("dataset example '" + e.image_id + "' has no regions");
    return e;
  } catch (const nlohmann::json::exception& ex) {
    throw InvalidInput(std::string("dataset example: ") + ex.what());
  }
}

DatasetSummary prepare_dataset(const AnnotationStore& store, const std::filesystem::path& annotation_dir,
                               const std::filesystem::path& out_dir, const DatasetOptions& options) {
  if (options.side < 8) throw InvalidInput("side: must be >= 8");
  std::filesystem::create_directories(out_dir);
  std::map<std::string, std::vector<const AnnotationRecord*>> by_image;
  for (const auto& r : store.records) by_image[r.image_id].push_back(&r);

  DatasetSummary summary;
  std::string lines;
  const Resolution frame{options.side, options.side};
  const double frame_area = static_cast<double>(frame.cells());
  for (const auto& entry : store.images) {
    const auto it = by_image.find(entry.image_id);
    if (it == by_image.end()) {
      ++summary.dropped_images;
      summary.skipped.push_back({entry.image_id, std::nullopt, "no annotated entities", false});
      continue;
    }
    const RgbImage image = read_png(annotation_dir / entry.image_path);
    const auto transform = resize_crop_transform(image.size(), options.side);

    std::vector<Mask> candidates;
    std::vector<DatasetRegion> regions;
    for (const auto* r : it->second) {
      std::vector<BBox> boxes;
      for (const auto& b : r->bboxes)
        if (const BBox t = transform.apply(b); t.well_formed()) boxes.push_back(t);
      if (boxes.empty()) {
        summary.skipped.push_back({r->image_id, r->entity_index, "entity lies outside the center crop", false});
        continue;
      }
      Mask mask = Mask::from_bbox(boxes.front(), frame);
      if (boxes.size() > 1) {
        MaskGrid grid = mask.grid();
        for (std::size_t k = 1; k < boxes.size(); ++k) grid = grid || Mask::from_bbox(boxes[k], frame).grid();
        mask = Mask::from_grid(std::move(grid));
      }
      const double fraction = static_cast<double>(mask.area_px()) / frame_area;
      if (fraction < options.rules.min_area_fraction || fraction > options.rules.max_area_fraction) {
        summary.skipped.push_back({r->image_id, r->entity_index, "mask area outside the filter after cropping", false});
        continue;
      }
      candidates.push_back(std::move(mask));
      regions.push_back({r->entity_index, r->noun_chunk, r->root, r->object_caption, boxes, ""});
    }
    const auto kept =
        select_training_mask_indices(candidates, frame, derived_seed(options.seed, entry.image_id), options.rules);
    if (kept.empty()) {
      ++summary.dropped_images;
      summary.skipped.push_back({entry.image_id, std::nullopt, "no valid masks", false});
      continue;
    }
    DatasetExample ex;
    ex.image_id = entry.image_id;
    ex.image_path = store_png(out_dir, resize_center_crop(image, options.side));
    for (const auto k : kept) {
      DatasetRegion region = regions[k];
      region.mask_path =
          relative_to(store_content_addressed(out_dir / "blobs", encode_mask_png(candidates[k].grid()), ".png"), out_dir);
      ex.regions.push_back(std::move(region));
    }
    lines += to_json(ex).dump() + "\n";
    ++summary.examples;
  }
  write_text_file(out_dir / "dataset.jsonl", lines);
  return summary;
}

std::vector<DatasetExample> load_dataset(const std::filesystem::path& dir) {
  std::vector<DatasetExample> out;
  for (const auto& j : read_jsonl(dir / "dataset.jsonl")) out.push_back(dataset_example_from_json(j));
  return out;
}

std::pair<RgbImage, MaskSet> load_example_inputs(const DatasetExample& e, const std::filesystem::path& dir) {
  RgbImage image = read_png(dir / e.image_path);
  std::vector<Mask> masks;
  for (const auto& r : e.regions) {
    MaskGrid grid = read_mask_png(dir / r.mask_path);
    if (grid.rows() != image.height() || grid.cols() != image.width())
      throw InvalidInput("dataset example '" + e.image_id + "': mask size differs from the image");
    if (r.bboxes.size() == 1) {
      Mask m = Mask::from_bbox(r.bboxes.front(), image.size());
      if (!(m.grid() == grid).all()) throw InvalidInput("dataset example '" + e.image_id + "': mask disagrees with its box");
      masks.push_back(std::move(m));
    } else {
      masks.push_back(Mask::from_grid(std::move(grid)));
    }
  }
  const Resolution size = image.size();
  return {std::move(image), MaskSet(std::move(masks), size)};
}

}  // namespace mmpaint
