// Copyright 2026 The mmpaint Authors
// SPDX-License-Identifier: Apache-2.0

// Color-tagged answer format: "<blue> a wooden boat </blue> <red> a tall tree </red>".

#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mmpaint/mask_geometry.hpp"

namespace mmpaint {

struct RegionPrompt {
  std::string text;
  std::string color_name;
  std::size_t mask_index = 0;
  friend bool operator==(const RegionPrompt&, const RegionPrompt&) = default;
};

struct TaggedAnswer {
  std::string raw;
  std::vector<std::pair<std::string, std::string>> segments;  // (color, text)
};

/// Escapes '&' and '<' so prompt text can never form a tag.
std::string escape_prompt_text(std::string_view text);
std::string unescape_prompt_text(std::string_view text);

/// Throws InvalidInput on duplicate colors or empty text.
TaggedAnswer encode_answer(const std::vector<RegionPrompt>& prompts);

enum class SegmentStatus { ok, missing, malformed_recovered, malformed };

std::string to_string(SegmentStatus status);

struct ParsedSegment {
  RegionPrompt prompt;  // empty text unless status is ok or malformed_recovered
  SegmentStatus status = SegmentStatus::missing;
  std::string diagnostic;
};

struct ParsedAnswer {
  std::string raw;
  std::vector<ParsedSegment> segments;  // one per expected color, in expected order

  bool all_ok() const;
  /// Prompts with recoverable text, keyed by distinct colors.
  std::vector<RegionPrompt> prompts() const;
};

/// Never throws on model text. First occurrence of each color tag wins; an
/// unclosed tag consumes up to the next tag or the end of the string.
ParsedAnswer parse_answer(std::string_view raw, const std::vector<ColorAssignment>& expected);
ParsedAnswer parse_answer(std::string_view raw, const std::vector<std::string>& expected_colors);

/// One JSONL line {raw, segments, statuses}.
nlohmann::json answer_log_entry(const ParsedAnswer& parsed);

struct InstructionTemplate {
  std::string version;
  std::string system_prompt;
  /// Placeholders: {n}, {colors}.
  std::string multi_region;
  /// Placeholder: {color}.
  std::string single_region;
};

const InstructionTemplate& default_instruction_template();

/// Text file with a "version = ..." line and [system], [multi], [single] sections.
InstructionTemplate load_instruction_template(const std::filesystem::path& path);

struct InstructionBundle {
  std::string template_version;
  std::string system_prompt;
  std::string instruction;
  std::vector<std::string> color_order;
};

InstructionBundle build_instruction(const std::vector<std::string>& color_order, int n,
                                    const InstructionTemplate& tmpl = default_instruction_template(),
                                    int max_masks = MaskRules{}.max_masks);

}  // namespace mmpaint
