// Copyright 2026 The mmpaint Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmpaint/prompt_codec.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace mmpaint {

namespace {

std::string_view trim(std::string_view s) {
  constexpr std::string_view kSpace = " \t\r\n";
  const auto b = s.find_first_not_of(kSpace);
  if (b == std::string_view::npos) return {};
  return s.substr(b, s.find_last_not_of(kSpace) - b + 1);
}

std::string replace_all(std::string text, std::string_view from, std::string_view to) {
  for (auto pos = text.find(from); pos != std::string::npos; pos = text.find(from, pos + to.size())) {
    text.replace(pos, from.size(), to);
  }
  return text;
}

bool is_tag_char(char c) { return c >= 'a' && c <= 'z'; }

/// Position of the next "<word>" or "</word>" at or after `from`.
std::size_t find_any_tag(std::string_view raw, std::size_t from) {
  for (auto pos = raw.find('<', from); pos != std::string_view::npos; pos = raw.find('<', pos + 1)) {
    std::size_t i = pos + 1;
    if (i < raw.size() && raw[i] == '/') ++i;
    const std::size_t word_start = i;
    while (i < raw.size() && is_tag_char(raw[i])) ++i;
    if (i > word_start && i < raw.size() && raw[i] == '>') return pos;
  }
  return std::string_view::npos;
}

}  // namespace

std::string escape_prompt_text(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  for (char c : text) {
    if (c == '&') out += "&amp;";
    else if (c == '<') out += "&lt;";
    else out.push_back(c);
  }
  return out;
}

std::string unescape_prompt_text(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text.compare(i, 4, "&lt;") == 0) {
      out.push_back('<');
      i += 3;
    } else if (text.compare(i, 5, "&amp;") == 0) {
      out.push_back('&');
      i += 4;
    } else {
      out.push_back(text[i]);
    }
  }
  return out;
}

TaggedAnswer encode_answer(const std::vector<RegionPrompt>& prompts) {
  TaggedAnswer answer;
  std::set<std::string> seen;
  for (const auto& p : prompts) {
    if (!seen.insert(p.color_name).second) {
      throw InvalidInput("duplicate color '" + p.color_name + "' in answer");
    }
    const std::string text(trim(p.text));
    if (text.empty()) throw InvalidInput("empty prompt text for color " + p.color_name);
    if (!answer.raw.empty()) answer.raw.push_back(' ');
    answer.raw += "<" + p.color_name + "> " + escape_prompt_text(text) + " </" + p.color_name + ">";
    answer.segments.emplace_back(p.color_name, text);
  }
  return answer;
}

std::string to_string(SegmentStatus status) {
  switch (status) {
    case SegmentStatus::ok: return "ok";
    case SegmentStatus::missing: return "missing";
    case SegmentStatus::malformed_recovered: return "malformed-recovered";
    case SegmentStatus::malformed: return "malformed";
  }
  return "unknown";
}

bool ParsedAnswer::all_ok() const {
  for (const auto& s : segments)
    if (s.status != SegmentStatus::ok) return false;
  return true;
}

std::vector<RegionPrompt> ParsedAnswer::prompts() const {
  std::vector<RegionPrompt> out;
  for (const auto& s : segments) {
    if (!s.prompt.text.empty()) out.push_back(s.prompt);
  }
  return out;
}

ParsedAnswer parse_answer(std::string_view raw, const std::vector<ColorAssignment>& expected) {
  ParsedAnswer parsed;
  parsed.raw = std::string(raw);
  for (const auto& [mask_index, color] : expected) {
    ParsedSegment seg;
    seg.prompt.color_name = color;
    seg.prompt.mask_index = mask_index;
    const std::string open = "<" + color + ">";
    const std::string close = "</" + color + ">";
    const auto open_pos = raw.find(open);
    if (open_pos == std::string_view::npos) {
      if (raw.find(close) != std::string_view::npos) {
        seg.status = SegmentStatus::malformed;
        seg.diagnostic = "closing tag " + close + " without opening tag";
      } else {
        seg.status = SegmentStatus::missing;
        seg.diagnostic = "no " + open + " segment";
      }
      parsed.segments.push_back(std::move(seg));
      continue;
    }
    const std::size_t body = open_pos + open.size();
    const auto close_pos = raw.find(close, body);
    const auto next_tag = find_any_tag(raw, body);
    std::string_view text;
    if (close_pos != std::string_view::npos && (next_tag == std::string_view::npos || next_tag >= close_pos)) {
      text = trim(raw.substr(body, close_pos - body));
      seg.status = SegmentStatus::ok;
    } else {
      const std::size_t end = next_tag == std::string_view::npos ? raw.size() : next_tag;
      text = trim(raw.substr(body, end - body));
      seg.status = SegmentStatus::malformed_recovered;
      seg.diagnostic = "unclosed " + open + "; text taken up to the next tag or end of output";
    }
    seg.prompt.text = unescape_prompt_text(text);
    if (seg.prompt.text.empty()) {
      seg.status = SegmentStatus::malformed;
      seg.diagnostic = "empty " + open + " segment";
    }
    parsed.segments.push_back(std::move(seg));
  }
  return parsed;
}

ParsedAnswer parse_answer(std::string_view raw, const std::vector<std::string>& expected_colors) {
  std::vector<ColorAssignment> expected;
  for (std::size_t i = 0; i < expected_colors.size(); ++i) expected.push_back({i, expected_colors[i]});
  return parse_answer(raw, expected);
}

nlohmann::json answer_log_entry(const ParsedAnswer& parsed) {
  nlohmann::json j;
  j["raw"] = parsed.raw;
  j["segments"] = nlohmann::json::array();
  j["statuses"] = nlohmann::json::object();
  for (const auto& s : parsed.segments) {
    j["segments"].push_back({{"color", s.prompt.color_name},
                             {"mask_index", s.prompt.mask_index},
                             {"text", s.prompt.text}});
    j["statuses"][s.prompt.color_name] = to_string(s.status);
  }
  return j;
}

const InstructionTemplate& default_instruction_template() {
  static const InstructionTemplate tmpl{
      "v1",
      "A chat between a curious human and an artificial intelligence assistant. The assistant "
      "gives helpful, detailed, and polite answers to the human's questions.",
      "The image has {n} regions covered by solid colors, listed in order: {colors}. Describe "
      "what is hidden behind each colored region with a short object-level description. Answer "
      "in the same color order and enclose each description in tags named after its color.",
      "The image has one region covered by a solid {color} color. Describe what is hidden behind "
      "it with a short object-level description enclosed in <{color}> tags."};
  return tmpl;
}

InstructionTemplate load_instruction_template(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open template " + path.string());
  InstructionTemplate tmpl;
  std::string line;
  std::string* section = nullptr;
  while (std::getline(in, line)) {
    const std::string_view t = trim(line);
    if (section == nullptr && t.rfind("version", 0) == 0) {
      const auto eq = t.find('=');
      if (eq != std::string_view::npos) tmpl.version = std::string(trim(t.substr(eq + 1)));
      continue;
    }
    if (t == "[system]") section = &tmpl.system_prompt;
    else if (t == "[multi]") section = &tmpl.multi_region;
    else if (t == "[single]") section = &tmpl.single_region;
    else if (section != nullptr && !t.empty()) {
      if (!section->empty()) section->push_back(' ');
      *section += std::string(t);
    }
  }
  if (tmpl.version.empty() || tmpl.system_prompt.empty() || tmpl.multi_region.empty() ||
      tmpl.single_region.empty()) {
    throw InvalidInput("template " + path.string() + " is missing version or a section");
  }
  return tmpl;
}

InstructionBundle build_instruction(const std::vector<std::string>& color_order, int n,
                                    const InstructionTemplate& tmpl, int max_masks) {
  if (n < 1 || n > max_masks) throw InvalidInput("instruction needs 1 <= n <= " + std::to_string(max_masks));
  if (static_cast<int>(color_order.size()) != n) {
    throw InvalidInput("color order length does not match n");
  }
  InstructionBundle bundle;
  bundle.template_version = tmpl.version;
  bundle.system_prompt = tmpl.system_prompt;
  bundle.color_order = color_order;
  if (n == 1) {
    bundle.instruction = replace_all(tmpl.single_region, "{color}", color_order.front());
  } else {
    std::string colors;
    for (std::size_t i = 0; i < color_order.size(); ++i) {
      if (i > 0) colors += (i + 1 == color_order.size()) ? " and " : ", ";
      colors += color_order[i];
    }
    bundle.instruction = replace_all(replace_all(tmpl.multi_region, "{n}", std::to_string(n)),
                                     "{colors}", colors);
  }
  return bundle;
}

}  // namespace mmpaint
