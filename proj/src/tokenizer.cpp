// Copyright 2026 The mmpaint Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmpaint/tokenizer.hpp"

#include <algorithm>
#include <map>
#include <stdexcept>
#include <unordered_set>

#include "mmpaint/types.hpp"

namespace mmpaint {

namespace {

bool is_word_char(unsigned char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9');
}

/// Length of a "<tag>" or "</tag>" starting at `pos`, or 0.
std::size_t tag_length(std::string_view text, std::size_t pos) {
  if (text[pos] != '<') return 0;
  std::size_t i = pos + 1;
  if (i < text.size() && text[i] == '/') ++i;
  const std::size_t start = i;
  while (i < text.size() && text[i] >= 'a' && text[i] <= 'z') ++i;
  if (i == start || i >= text.size() || text[i] != '>') return 0;
  return i + 1 - pos;
}

std::vector<std::string> base_pieces() {
  std::vector<std::string> pieces{std::string(PieceTokenizer::kPad), std::string(PieceTokenizer::kBos),
                                  std::string(PieceTokenizer::kEos), std::string(PieceTokenizer::kImage)};
  for (int b = 0; b < 256; ++b) pieces.emplace_back(1, static_cast<char>(b));
  for (int b = 0; b < 256; ++b) {
    if (b == ' ') continue;
    pieces.push_back(std::string(" ") + static_cast<char>(b));
  }
  return pieces;
}

}  // namespace

PieceTokenizer::PieceTokenizer(std::vector<std::string> pieces) : pieces_(std::move(pieces)) {
  for (std::size_t i = 0; i < pieces_.size(); ++i) {
    if (!index_.emplace(pieces_[i], static_cast<int>(i)).second) {
      throw InvalidInput("duplicate tokenizer piece");
    }
  }
}

std::vector<std::pair<std::size_t, std::size_t>> PieceTokenizer::pretokenize(std::string_view text) {
  std::vector<std::pair<std::size_t, std::size_t>> spans;
  std::size_t i = 0;
  while (i < text.size()) {
    const std::size_t start = i;
    std::size_t j = i;
    // A single space attaches to the following non-space piece.
    if (text[j] == ' ' && j + 1 < text.size() && text[j + 1] != ' ') ++j;
    if (const std::size_t tag = tag_length(text, j); tag > 0) {
      j += tag;
    } else if (is_word_char(static_cast<unsigned char>(text[j]))) {
      while (j < text.size() && is_word_char(static_cast<unsigned char>(text[j]))) ++j;
    } else {
      ++j;
    }
    spans.emplace_back(start, j);
    i = j;
  }
  return spans;
}

PieceTokenizer PieceTokenizer::train(const std::vector<std::string>& corpus, int max_pieces) {
  std::map<std::string, long long> counts;
  for (const auto& text : corpus) {
    for (auto [b, e] : pretokenize(text)) {
      const std::string piece = text.substr(b, e - b);
      if (piece.size() > 1 && std::all_of(piece.begin(), piece.end(),
                                          [](char c) { return static_cast<unsigned char>(c) < 0x80; })) {
        ++counts[piece];
      }
    }
  }
  std::vector<std::pair<std::string, long long>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  auto pieces = base_pieces();
  const std::unordered_set<std::string> base(pieces.begin(), pieces.end());
  for (const auto& [piece, count] : ranked) {
    if (static_cast<int>(pieces.size()) >= max_pieces) break;
    if (!base.contains(piece)) pieces.push_back(piece);
  }
  return PieceTokenizer(std::move(pieces));
}

PieceTokenizer PieceTokenizer::from_json(const nlohmann::json& j) {
  auto pieces = base_pieces();
  for (const auto& p : j.at("learned_pieces")) pieces.push_back(p.get<std::string>());
  return PieceTokenizer(std::move(pieces));
}

nlohmann::json PieceTokenizer::to_json() const {
  // Raw bytes >= 0x80 are not valid UTF-8 on their own; store the learned
  // pieces only and rebuild the fixed prefix on load.
  nlohmann::json j;
  j["learned_pieces"] = std::vector<std::string>(pieces_.begin() + static_cast<long>(base_pieces().size()),
                                                 pieces_.end());
  return j;
}

int PieceTokenizer::piece_id(std::string_view piece) const {
  const auto it = index_.find(std::string(piece));
  return it == index_.end() ? -1 : it->second;
}

std::vector<Token> PieceTokenizer::encode(std::string_view text) const {
  std::vector<Token> tokens;
  for (auto [b, e] : pretokenize(text)) {
    if (const int id = piece_id(text.substr(b, e - b)); id >= 0) {
      tokens.push_back({id, b, e});
      continue;
    }
    std::size_t k = b;
    if (text[k] == ' ' && e - b > 1) {
      tokens.push_back({piece_id(text.substr(k, 2)), k, k + 2});
      k += 2;
    }
    for (; k < e; ++k) tokens.push_back({piece_id(text.substr(k, 1)), k, k + 1});
  }
  return tokens;
}

std::string PieceTokenizer::decode(std::span<const int> ids) const {
  std::string out;
  for (int id : ids) {
    if (id < 0 || id >= vocab_size()) throw InvalidInput("token id out of range");
    if (is_special(id)) continue;
    out += pieces_[static_cast<std::size_t>(id)];
  }
  return out;
}

}  // namespace mmpaint
