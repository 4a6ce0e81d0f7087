// Copyright 2026 The mmpaint Authors
// SPDX-License-Identifier: Apache-2.0

// Concatenated region prompts and the binary token x space layout that
// drives rectified cross-attention.

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmpaint/mask_geometry.hpp"
#include "mmpaint/prompt_codec.hpp"
#include "mmpaint/tokenizer.hpp"

namespace mmpaint {

inline constexpr std::string_view kPromptSeparator = ". ";

/// Token positions [begin, end) of one region prompt in the padded sequence.
struct TokenSpan {
  std::size_t mask_index = 0;
  int begin = 0;
  int end = 0;
  bool empty() const { return end <= begin; }
};

struct ConcatPrompt {
  std::string full_text;
  /// bos, content, eos, then padding up to max_len.
  std::vector<int> token_ids;
  /// One per input prompt, same order.
  std::vector<TokenSpan> spans;
  /// bos, eos and padding positions.
  std::vector<int> special_token_positions;
  /// Content tokens that belong to no prompt (the ". " joints).
  std::vector<int> separator_positions;
  std::vector<std::string> diagnostics;

  int length() const { return static_cast<int>(token_ids.size()); }
};

/// Joins prompts with ". " and maps each to its token span; content beyond
/// max_len - 2 tokens is truncated.
ConcatPrompt concat_and_span(const std::vector<RegionPrompt>& prompts, const Tokenizer& tokenizer,
                             int max_len);

/// Literal complement-of-others masks: M'_i = 1 - union_{j != i} M_j.
std::vector<MaskGrid> modified_masks(const MaskSet& masks);

/// Per-prompt spatial support used in the layout: a cell is active for
/// prompt i iff it lies inside M_i or outside every mask. Overlap cells are
/// therefore active for every covering prompt.
std::vector<MaskGrid> region_supports(const MaskSet& masks);

/// Any-coverage pooling: a target cell is set iff any source pixel in its
/// footprint is set. Footprints cover [floor(i*H/h), ceil((i+1)*H/h)).
MaskGrid pool_any(const MaskGrid& grid, Resolution target);

/// Binary layout, one row per token, one column per spatial cell (row-major).
struct LayoutTensor {
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> bits;
  Resolution resolution;
  std::string id;

  int tokens() const { return static_cast<int>(bits.rows()); }
  bool at(int token, int y, int x) const { return bits(token, y * resolution.width + x); }
};

LayoutTensor all_ones_layout(int tokens, Resolution resolution);

/// Throws std::logic_error if some cell has no active token.
LayoutTensor build_layout(const MaskSet& masks, const ConcatPrompt& prompt, Resolution target);

/// Per-span PNG heatmaps plus manifest.json describing the spans.
void dump_layout(const std::filesystem::path& dir, const LayoutTensor& layout,
                 const ConcatPrompt& prompt);

nlohmann::json to_json(const ConcatPrompt& prompt);

}  // namespace mmpaint
