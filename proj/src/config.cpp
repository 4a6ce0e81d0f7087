// Copyright 2026 The mmpaint Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmpaint/config.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <functional>
#include <limits>
#include <set>

#include "mmpaint/image.hpp"

namespace mmpaint {

nlohmann::json to_json(const std::vector<FieldIssue>& issues) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& i : issues) out.push_back({{"path", i.path}, {"message", i.message}});
  return out;
}

namespace {

std::string summarize(const std::vector<FieldIssue>& issues) {
  std::string s;
  for (const auto& i : issues) s += (s.empty() ? "" : "; ") + i.path + ": " + i.message;
  return s;
}

}  // namespace

ValidationError::ValidationError(std::vector<FieldIssue> issues)
    : InvalidInput(summarize(issues)), issues_(std::move(issues)) {}

// ---- TOML subset -----------------------------------------------------------

namespace {

class TomlReader {
 public:
  explicit TomlReader(std::string_view text) : text_(text) {}

  nlohmann::json parse() {
    nlohmann::json root = nlohmann::json::object();
    nlohmann::json* table = &root;
    std::set<std::string> headers;
    while (pos_ < text_.size()) {
      skip_blank();
      if (at_end_of_line()) {
        next_line();
        continue;
      }
      if (peek() == '[') {
        ++pos_;
        if (peek() == '[') fail("arrays of tables are not supported");
        skip_blank();
        const auto path = read_key_path();
        skip_blank();
        expect(']');
        std::string joined;
        for (const auto& k : path) joined += (joined.empty() ? "" : ".") + k;
        if (!headers.insert(joined).second) fail("table [" + joined + "] defined twice");
        table = &descend(root, path);
      } else {
        const auto path = read_key_path();
        skip_blank();
        expect('=');
        skip_blank();
        nlohmann::json value = read_value();
        nlohmann::json& parent = descend(*table, {path.begin(), path.end() - 1});
        if (parent.contains(path.back())) fail("duplicate key '" + path.back() + "'");
        parent[path.back()] = std::move(value);
      }
      skip_blank();
      if (!at_end_of_line()) fail("unexpected text after value");
      next_line();
    }
    return root;
  }

 private:
  [[noreturn]] void fail(const std::string& what) const {
    throw InvalidInput("config line " + std::to_string(line_) + ": " + what);
  }

  char peek() const { return pos_ < text_.size() ? text_[pos_] : '\0'; }
  void expect(char c) {
    if (peek() != c) fail(std::string("expected '") + c + "'");
    ++pos_;
  }
  void skip_blank() {
    while (peek() == ' ' || peek() == '\t') ++pos_;
  }
  bool at_end_of_line() const { return pos_ >= text_.size() || peek() == '\n' || peek() == '\r' || peek() == '#'; }
  void next_line() {
    while (pos_ < text_.size() && text_[pos_] != '\n') ++pos_;
    if (pos_ < text_.size()) ++pos_;
    ++line_;
  }

  nlohmann::json& descend(nlohmann::json& from, const std::vector<std::string>& path) {
    nlohmann::json* cur = &from;
    for (const auto& k : path) {
      if (!cur->contains(k)) (*cur)[k] = nlohmann::json::object();
      cur = &(*cur)[k];
      if (!cur->is_object()) fail("'" + k + "' is not a table");
    }
    return *cur;
  }

  std::vector<std::string> read_key_path() {
    std::vector<std::string> path;
    for (;;) {
      std::string key;
      if (peek() == '"') {
        key = read_basic_string();
      } else {
        while (std::isalnum(static_cast<unsigned char>(peek())) || peek() == '_' || peek() == '-') key += text_[pos_++];
      }
      if (key.empty()) fail("expected a key");
      path.push_back(key);
      skip_blank();
      if (peek() != '.') return path;
      ++pos_;
      skip_blank();
    }
  }

  std::string read_basic_string() {
    expect('"');
    std::string out;
    for (;;) {
      if (pos_ >= text_.size() || peek() == '\n') fail("unterminated string");
      const char c = text_[pos_++];
      if (c == '"') return out;
      if (c != '\\') {
        out += c;
        continue;
      }
      const char e = text_[pos_++];
      switch (e) {
        case 'n': out += '\n'; break;
        case 't': out += '\t'; break;
        case 'r': out += '\r'; break;
        case '"': out += '"'; break;
        case '\\': out += '\\'; break;
        default: fail(std::string("unsupported escape '\\") + e + "'");
      }
    }
  }

  std::string read_literal_string() {
    expect('\'');
    const auto end = text_.find_first_of("'\n", pos_);
    if (end == std::string_view::npos || text_[end] != '\'') fail("unterminated string");
    std::string out(text_.substr(pos_, end - pos_));
    pos_ = end + 1;
    return out;
  }

  nlohmann::json read_value() {
    const char c = peek();
    if (c == '"') return read_basic_string();
    if (c == '\'') return read_literal_string();
    if (c == '{') fail("inline tables are not supported");
    if (c == '[') {
      ++pos_;
      nlohmann::json arr = nlohmann::json::array();
      for (;;) {
        skip_blank();
        if (peek() == ']') {
          ++pos_;
          return arr;
        }
        arr.push_back(read_value());
        skip_blank();
        if (peek() == ',') {
          ++pos_;
        } else if (peek() != ']') {
          fail("expected ',' or ']' in array");
        }
      }
    }
    std::string word;
    while (pos_ < text_.size() && !std::isspace(static_cast<unsigned char>(peek())) && peek() != ',' && peek() != ']' &&
           peek() != '#')
      word += text_[pos_++];
    if (word == "true") return true;
    if (word == "false") return false;
    std::string digits;
    for (char ch : word)
      if (ch != '_') digits += ch;
    if (digits.empty()) fail("expected a value");
    const bool is_float = digits.find_first_of(".eE") != std::string::npos;
    const char* first = digits.data() + (digits[0] == '+' ? 1 : 0);
    const char* last = digits.data() + digits.size();
    if (is_float) {
      double v = 0;
      const auto [p, ec] = std::from_chars(first, last, v);
      if (ec != std::errc() || p != last || !std::isfinite(v)) fail("invalid number '" + word + "'");
      return v;
    }
    std::int64_t v = 0;
    const auto [p, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || p != last) fail("invalid value '" + word + "'");
    return v;
  }

  std::string_view text_;
  std::size_t pos_ = 0;
  int line_ = 1;
};

}  // namespace

nlohmann::json parse_toml(std::string_view text) { return TomlReader(text).parse(); }

// ---- schema ----------------------------------------------------------------

namespace {

enum class Kind { integer, number, boolean, string };

struct Field {
  std::string path;
  Kind kind;
  double lo = -std::numeric_limits<double>::infinity();
  double hi = std::numeric_limits<double>::infinity();
  bool lo_open = false;
  bool hi_open = false;
  std::vector<std::string> choices;
  std::function<void(AppConfig&, const nlohmann::json&)> set;
  std::function<nlohmann::json(const AppConfig&)> get;
};

#define MMPAINT_FIELD(PATH, KIND, LO, HI, LO_OPEN, HI_OPEN, MEMBER, TYPE)                                   \
  Field {                                                                                                 \
    PATH, KIND, LO, HI, LO_OPEN, HI_OPEN, {}, [](AppConfig& c, const nlohmann::json& v) { MEMBER = v.get<TYPE>(); }, \
        [](const AppConfig& c) { return nlohmann::json(MEMBER); }                                          \
  }

#define MMPAINT_CHOICE(PATH, CHOICES, SET, GET)                                                        \
  Field {                                                                                            \
    PATH, Kind::string, 0, 0, false, false, CHOICES, [](AppConfig& c, const nlohmann::json& v) { SET; }, \
        [](const AppConfig& c) { return nlohmann::json(GET); }                                        \
  }

constexpr double kInf = std::numeric_limits<double>::infinity();

const std::vector<Field>& schema() {
  using K = Kind;
  static const std::vector<Field> fields = {
      MMPAINT_FIELD("seed", K::integer, 0, kInf, false, false, c.seed, std::uint64_t),
      MMPAINT_FIELD("work_dir", K::string, 0, 0, false, false, c.work_dir, std::string),

      MMPAINT_FIELD("annotation.workers", K::integer, 1, 256, false, false, c.annotation.workers, int),
      MMPAINT_FIELD("annotation.caption_token_cap", K::integer, 1, 4096, false, false, c.annotation.caption_token_cap, int),
      MMPAINT_FIELD("annotation.audit_threshold", K::number, -1, 1, false, false, c.annotation.audit_threshold, double),
      MMPAINT_CHOICE("annotation.grounding", (std::vector<std::string>{"fixture", "http"}),
                     c.annotation.grounding = v.get<std::string>(), c.annotation.grounding),
      MMPAINT_FIELD("annotation.grounding_fixtures", K::string, 0, 0, false, false, c.annotation.grounding_fixtures, std::string),
      MMPAINT_CHOICE("annotation.caption", (std::vector<std::string>{"echo", "http"}),
                     c.annotation.caption = v.get<std::string>(), c.annotation.caption),
      MMPAINT_CHOICE("annotation.embedder", (std::vector<std::string>{"toy", "http", "none"}),
                     c.annotation.embedder = v.get<std::string>(), c.annotation.embedder),

      MMPAINT_FIELD("dataset.side", K::integer, 8, 8192, false, false, c.dataset.side, int),
      MMPAINT_FIELD("dataset.min_area_fraction", K::number, 0, 1, false, false, c.dataset.rules.min_area_fraction, double),
      MMPAINT_FIELD("dataset.max_area_fraction", K::number, 0, 1, true, false, c.dataset.rules.max_area_fraction, double),
      MMPAINT_FIELD("dataset.max_masks", K::integer, 1, 16, false, false, c.dataset.rules.max_masks, int),
      MMPAINT_FIELD("dataset.total_area_cap", K::number, 0, 1, true, false, c.dataset.rules.total_area_cap, double),

      MMPAINT_FIELD("promptgen.rank", K::integer, 1, 4096, false, false, c.promptgen.adapter.rank, int),
      MMPAINT_FIELD("promptgen.alpha", K::number, 0, kInf, true, false, c.promptgen.adapter.alpha, double),
      MMPAINT_FIELD("promptgen.dropout", K::number, 0, 1, false, true, c.promptgen.adapter.dropout, double),
      MMPAINT_FIELD("promptgen.target_pattern", K::string, 0, 0, false, false, c.promptgen.adapter.target_pattern, std::string),
      MMPAINT_FIELD("promptgen.learning_rate", K::number, 0, 1, true, false, c.promptgen.learning_rate, double),
      MMPAINT_FIELD("promptgen.warmup_fraction", K::number, 0, 1, true, true, c.promptgen.warmup_fraction, double),
      MMPAINT_FIELD("promptgen.grad_clip", K::number, 0, kInf, true, false, c.promptgen.grad_clip, double),
      MMPAINT_FIELD("promptgen.batch_size", K::integer, 1, 1 << 20, false, false, c.promptgen.batch_size, int),
      MMPAINT_FIELD("promptgen.epochs", K::integer, 1, 1 << 20, false, false, c.promptgen.epochs, int),
      MMPAINT_FIELD("promptgen.max_steps", K::integer, 0, kInf, false, false, c.promptgen.max_steps, long),
      MMPAINT_CHOICE("promptgen.loss_reduction", (std::vector<std::string>{"mean", "sum"}),
                     c.promptgen.loss_reduction = v == "sum" ? LossReduction::sum : LossReduction::mean,
                     c.promptgen.loss_reduction == LossReduction::sum ? "sum" : "mean"),
      MMPAINT_FIELD("promptgen.max_sequence_length", K::integer, 2, 1 << 20, false, false, c.promptgen.max_sequence_length, int),
      MMPAINT_FIELD("promptgen.checkpoint_every", K::integer, 0, kInf, false, false, c.promptgen.checkpoint_every, long),
      MMPAINT_FIELD("promptgen.temperature", K::number, 0, 10, false, false, c.generation.temperature, double),
      MMPAINT_FIELD("promptgen.num_samples", K::integer, 1, 64, false, false, c.generation.num_samples, int),
      MMPAINT_FIELD("promptgen.max_new_tokens", K::integer, 1, 4096, false, false, c.generation.max_new_tokens, int),

      MMPAINT_FIELD("inpaint.rank", K::integer, 1, 4096, false, false, c.inpaint.adapter.rank, int),
      MMPAINT_FIELD("inpaint.alpha", K::number, 0, kInf, true, false, c.inpaint.adapter.alpha, double),
      MMPAINT_FIELD("inpaint.dropout", K::number, 0, 1, false, true, c.inpaint.adapter.dropout, double),
      MMPAINT_FIELD("inpaint.target_pattern", K::string, 0, 0, false, false, c.inpaint.adapter.target_pattern, std::string),
      MMPAINT_FIELD("inpaint.learning_rate", K::number, 0, 1, true, false, c.inpaint.learning_rate, double),
      MMPAINT_FIELD("inpaint.warmup_fraction", K::number, 0, 1, true, true, c.inpaint.warmup_fraction, double),
      MMPAINT_FIELD("inpaint.grad_clip", K::number, 0, kInf, true, false, c.inpaint.grad_clip, double),
      MMPAINT_FIELD("inpaint.batch_size", K::integer, 1, 1 << 20, false, false, c.inpaint.batch_size, int),
      MMPAINT_FIELD("inpaint.epochs", K::integer, 1, 1 << 20, false, false, c.inpaint.epochs, int),
      MMPAINT_FIELD("inpaint.max_steps", K::integer, 0, kInf, false, false, c.inpaint.max_steps, long),
      MMPAINT_FIELD("inpaint.text_drop", K::number, 0, 1, false, false, c.inpaint.text_drop, double),
      MMPAINT_FIELD("inpaint.train_timesteps", K::integer, 1, 100000, false, false, c.inpaint.train_timesteps, int),
      MMPAINT_FIELD("inpaint.fixed_micro_batch", K::boolean, 0, 0, false, false, c.inpaint.fixed_micro_batch, bool),
      MMPAINT_FIELD("inpaint.checkpoint_every", K::integer, 0, kInf, false, false, c.inpaint.checkpoint_every, long),
      MMPAINT_FIELD("inpaint.steps", K::integer, 1, 1000, false, false, c.sampler.steps, int),
      MMPAINT_FIELD("inpaint.guidance_weight", K::number, 0, 100, false, false, c.sampler.guidance_weight, double),
      MMPAINT_CHOICE("inpaint.scheme", (std::vector<std::string>{"inference_scheme", "training_scheme", "pndm", "ddpm"}),
                     c.sampler.scheme = sampler_scheme_from_string(v.get<std::string>()), to_string(c.sampler.scheme)),
      MMPAINT_CHOICE("inpaint.mode", (std::vector<std::string>{"rca", "concat", "repeated"}),
                     c.mode = inpaint_mode_from_string(v.get<std::string>()), to_string(c.mode)),
      MMPAINT_FIELD("inpaint.composite", K::boolean, 0, 0, false, false, c.composite, bool),

      MMPAINT_FIELD("metrics.darken", K::number, 0, 1, false, false, c.treatment.darken, double),
      MMPAINT_FIELD("metrics.blur_sigma_frac", K::number, 0, 1, false, false, c.treatment.blur_sigma_frac, double),

      MMPAINT_FIELD("models.promptgen_adapter", K::string, 0, 0, false, false, c.models.promptgen_adapter, std::string),
      MMPAINT_FIELD("models.inpaint_adapter", K::string, 0, 0, false, false, c.models.inpaint_adapter, std::string),
      MMPAINT_FIELD("models.inpaint_image_side", K::integer, 8, 8192, false, false, c.models.inpaint_image_side, int),
      MMPAINT_FIELD("models.max_tokens", K::integer, 4, 512, false, false, c.models.max_tokens, int),

      MMPAINT_FIELD("service.host", K::string, 0, 0, false, false, c.service.host, std::string),
      MMPAINT_FIELD("service.port", K::integer, 0, 65535, false, false, c.service.port, int),
      MMPAINT_FIELD("service.queue_depth", K::integer, 1, 65536, false, false, c.service.queue_depth, int),
      MMPAINT_FIELD("service.workers", K::integer, 1, 64, false, false, c.service.workers, int),
      MMPAINT_FIELD("service.api_key_env", K::string, 0, 0, false, false, c.service.api_key_env, std::string),
  };
  return fields;
}

#undef MMPAINT_FIELD
#undef MMPAINT_CHOICE

std::string kind_name(Kind k) {
  switch (k) {
    case Kind::integer: return "an integer";
    case Kind::number: return "a number";
    case Kind::boolean: return "a boolean";
    case Kind::string: return "a string";
  }
  return "";
}

std::string bound_text(const Field& f) {
  auto show = [](double v) {
    if (std::isinf(v)) return std::string(v > 0 ? "inf" : "-inf");
    nlohmann::json j = v;
    return v == std::floor(v) && std::abs(v) < 1e15 ? std::to_string(static_cast<long long>(v)) : j.dump();
  };
  return std::string(f.lo_open ? "(" : "[") + show(f.lo) + ", " + show(f.hi) + (f.hi_open ? ")" : "]");
}

std::optional<std::string> check(const Field& f, const nlohmann::json& v) {
  switch (f.kind) {
    case Kind::integer:
      if (!v.is_number_integer()) return "must be " + kind_name(f.kind);
      break;
    case Kind::number:
      if (!v.is_number()) return "must be " + kind_name(f.kind);
      break;
    case Kind::boolean:
      if (!v.is_boolean()) return "must be " + kind_name(f.kind);
      return std::nullopt;
    case Kind::string:
      if (!v.is_string()) return "must be " + kind_name(f.kind);
      if (!f.choices.empty() &&
          std::find(f.choices.begin(), f.choices.end(), v.get<std::string>()) == f.choices.end()) {
        std::string list;
        for (const auto& c : f.choices) list += (list.empty() ? "" : ", ") + c;
        return "must be one of " + list;
      }
      return std::nullopt;
  }
  const double d = v.get<double>();
  const bool below = f.lo_open ? !(d > f.lo) : !(d >= f.lo);
  const bool above = f.hi_open ? !(d < f.hi) : !(d <= f.hi);
  if (below || above) return "must be in " + bound_text(f);
  return std::nullopt;
}

void collect_unknown(const nlohmann::json& node, const std::string& prefix, const std::set<std::string>& known,
                     const std::set<std::string>& tables, std::vector<FieldIssue>& issues) {
  for (const auto& [k, v] : node.items()) {
    const std::string path = prefix.empty() ? k : prefix + "." + k;
    if (v.is_object() && tables.count(path)) {
      collect_unknown(v, path, known, tables, issues);
    } else if (!known.count(path)) {
      issues.push_back({path, tables.count(path) ? "must be a table" : "unknown setting"});
    }
  }
}

}  // namespace

AppConfig config_from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw ValidationError(std::vector<FieldIssue>{{"", "config must be a table"}});
  std::set<std::string> known, tables;
  for (const auto& f : schema()) {
    known.insert(f.path);
    const auto dot = f.path.find('.');
    if (dot != std::string::npos) tables.insert(f.path.substr(0, dot));
  }
  std::vector<FieldIssue> issues;
  collect_unknown(doc, "", known, tables, issues);

  AppConfig c;
  for (const auto& f : schema()) {
    const auto ptr = nlohmann::json::json_pointer("/" + [&] {
      std::string p = f.path;
      std::replace(p.begin(), p.end(), '.', '/');
      return p;
    }());
    if (!doc.contains(ptr)) continue;
    const auto& v = doc.at(ptr);
    if (const auto problem = check(f, v)) {
      issues.push_back({f.path, *problem});
      continue;
    }
    f.set(c, v);
  }
  if (c.dataset.rules.min_area_fraction > c.dataset.rules.max_area_fraction)
    issues.push_back({"dataset.min_area_fraction", "must not exceed dataset.max_area_fraction"});
  if (!issues.empty()) throw ValidationError(std::move(issues));

  c.reseed(c.seed);
  return c;
}

AppConfig load_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw InvalidInput("config file '" + path.string() + "' does not exist");
  return config_from_json(parse_toml(read_text_file(path)));
}

AppConfig load_config_or_default(const std::string& path) {
  return path.empty() ? AppConfig{} : load_config(path);
}

nlohmann::json to_json(const AppConfig& c) {
  nlohmann::json out = nlohmann::json::object();
  for (const auto& f : schema()) {
    std::string p = f.path;
    std::replace(p.begin(), p.end(), '.', '/');
    out[nlohmann::json::json_pointer("/" + p)] = f.get(c);
  }
  return out;
}

std::string config_hash(const AppConfig& c) { return config_hash(to_json(c)); }

void AppConfig::reseed(std::uint64_t s) {
  seed = dataset.seed = promptgen.seed = generation.seed = inpaint.seed = sampler.seed = s;
}

}  // namespace mmpaint
