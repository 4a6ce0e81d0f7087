// Copyright 2026 The mmpaint Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmpaint/prompt_layout.hpp"

#include <fstream>
#include <stdexcept>

#include "mmpaint/hashing.hpp"

namespace mmpaint {

ConcatPrompt concat_and_span(const std::vector<RegionPrompt>& prompts, const Tokenizer& tokenizer,
                             int max_len) {
  if (prompts.empty()) throw InvalidInput("concat_and_span needs at least one prompt");
  if (max_len < 3) throw InvalidInput("max_len must leave room for bos, eos and content");

  ConcatPrompt out;
  std::vector<std::pair<std::size_t, std::size_t>> char_ranges;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    if (i > 0) out.full_text += kPromptSeparator;
    const std::size_t begin = out.full_text.size();
    out.full_text += prompts[i].text;
    char_ranges.emplace_back(begin, out.full_text.size());
  }

  std::vector<Token> content = tokenizer.encode(out.full_text);
  const std::size_t capacity = static_cast<std::size_t>(max_len - 2);
  if (content.size() > capacity) content.resize(capacity);

  out.token_ids.push_back(tokenizer.bos_id());
  out.special_token_positions.push_back(0);
  std::vector<int> owner(content.size(), -1);
  for (std::size_t t = 0; t < content.size(); ++t) {
    out.token_ids.push_back(content[t].id);
    for (std::size_t i = 0; i < char_ranges.size(); ++i) {
      if (content[t].begin < char_ranges[i].second && content[t].end > char_ranges[i].first) {
        owner[t] = static_cast<int>(i);
        break;
      }
    }
    if (owner[t] < 0) out.separator_positions.push_back(static_cast<int>(t) + 1);
  }
  out.special_token_positions.push_back(static_cast<int>(out.token_ids.size()));
  out.token_ids.push_back(tokenizer.eos_id());
  while (static_cast<int>(out.token_ids.size()) < max_len) {
    out.special_token_positions.push_back(static_cast<int>(out.token_ids.size()));
    out.token_ids.push_back(tokenizer.pad_id());
  }

  for (std::size_t i = 0; i < prompts.size(); ++i) {
    TokenSpan span{prompts[i].mask_index, 0, 0};
    for (std::size_t t = 0; t < content.size(); ++t) {
      if (owner[t] != static_cast<int>(i)) continue;
      const int pos = static_cast<int>(t) + 1;
      if (span.empty()) span.begin = pos;
      span.end = pos + 1;
    }
    if (span.empty()) {
      span.begin = span.end = static_cast<int>(content.size()) + 1;
      out.diagnostics.push_back("prompt for mask " + std::to_string(prompts[i].mask_index) +
                                " was truncated away; its region attends to special tokens only");
    }
    out.spans.push_back(span);
  }
  return out;
}

std::vector<MaskGrid> modified_masks(const MaskSet& masks) {
  std::vector<MaskGrid> out;
  const Resolution size = masks.image_size();
  for (std::size_t i = 0; i < masks.size(); ++i) {
    MaskGrid others = MaskGrid::Constant(size.height, size.width, false);
    for (std::size_t j = 0; j < masks.size(); ++j) {
      if (j != i) others = others || masks[j].grid();
    }
    out.push_back(!others);
  }
  return out;
}

std::vector<MaskGrid> region_supports(const MaskSet& masks) {
  const MaskGrid outside = !masks.union_grid();
  std::vector<MaskGrid> out;
  for (const auto& m : masks.masks()) out.push_back(m.grid() || outside);
  return out;
}

MaskGrid pool_any(const MaskGrid& grid, Resolution target) {
  const int H = static_cast<int>(grid.rows());
  const int W = static_cast<int>(grid.cols());
  if (target.height <= 0 || target.width <= 0 || target.height > H || target.width > W) {
    throw InvalidInput("pool_any: target " + to_string(target) + " incompatible with source");
  }
  MaskGrid out(target.height, target.width);
  for (int i = 0; i < target.height; ++i) {
    const int y0 = static_cast<int>(static_cast<long long>(i) * H / target.height);
    const int y1 = static_cast<int>((static_cast<long long>(i + 1) * H + target.height - 1) / target.height);
    for (int j = 0; j < target.width; ++j) {
      const int x0 = static_cast<int>(static_cast<long long>(j) * W / target.width);
      const int x1 = static_cast<int>((static_cast<long long>(j + 1) * W + target.width - 1) / target.width);
      out(i, j) = grid.block(y0, x0, y1 - y0, x1 - x0).any();
    }
  }
  return out;
}

LayoutTensor all_ones_layout(int tokens, Resolution resolution) {
  LayoutTensor layout;
  layout.bits.setConstant(tokens, resolution.cells(), true);
  layout.resolution = resolution;
  layout.id = "all-ones-" + std::to_string(tokens) + "-" + to_string(resolution);
  return layout;
}

LayoutTensor build_layout(const MaskSet& masks, const ConcatPrompt& prompt, Resolution target) {
  if (prompt.spans.size() != masks.size()) {
    throw InvalidInput("layout: prompt count does not match mask count");
  }
  LayoutTensor layout = all_ones_layout(prompt.length(), target);
  const auto supports = region_supports(masks);
  for (std::size_t i = 0; i < prompt.spans.size(); ++i) {
    const TokenSpan& span = prompt.spans[i];
    if (span.mask_index >= masks.size()) throw InvalidInput("span refers to a missing mask");
    const MaskGrid pooled = pool_any(supports[span.mask_index], target);
    // Row-major flattening to match the cell index y * W + x.
    Eigen::Array<bool, 1, Eigen::Dynamic> row(target.cells());
    for (int y = 0; y < target.height; ++y)
      for (int x = 0; x < target.width; ++x) row(y * target.width + x) = pooled(y, x);
    for (int t = span.begin; t < span.end; ++t) layout.bits.row(t) = row;
  }
  if (!layout.bits.colwise().any().all()) {
    throw std::logic_error("layout has a cell with no active token");
  }
  std::string key = prompt.full_text + "|" + to_string(target);
  for (const auto& m : masks.masks()) {
    key += '|';
    for (Eigen::Index i = 0; i < m.grid().size(); ++i) key += m.grid().data()[i] ? '1' : '0';
  }
  layout.id = sha256_hex(key).substr(0, 16);
  return layout;
}

nlohmann::json to_json(const ConcatPrompt& prompt) {
  nlohmann::json j;
  j["full_text"] = prompt.full_text;
  j["length"] = prompt.length();
  j["spans"] = nlohmann::json::array();
  for (const auto& s : prompt.spans) {
    j["spans"].push_back({{"mask_index", s.mask_index}, {"begin", s.begin}, {"end", s.end}});
  }
  j["special_token_positions"] = prompt.special_token_positions;
  j["separator_positions"] = prompt.separator_positions;
  j["diagnostics"] = prompt.diagnostics;
  return j;
}

void dump_layout(const std::filesystem::path& dir, const LayoutTensor& layout,
                 const ConcatPrompt& prompt) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest = to_json(prompt);
  manifest["layout_id"] = layout.id;
  manifest["resolution"] = {layout.resolution.height, layout.resolution.width};
  manifest["heatmaps"] = nlohmann::json::array();
  for (const auto& span : prompt.spans) {
    MaskGrid grid = MaskGrid::Constant(layout.resolution.height, layout.resolution.width, false);
    if (!span.empty()) {
      for (int y = 0; y < layout.resolution.height; ++y)
        for (int x = 0; x < layout.resolution.width; ++x) grid(y, x) = layout.at(span.begin, y, x);
    }
    const std::string name = "span_" + std::to_string(span.mask_index) + ".png";
    write_mask_png(dir / name, grid);
    manifest["heatmaps"].push_back(name);
  }
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << "\n";
}

}  // namespace mmpaint
