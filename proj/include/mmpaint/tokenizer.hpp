// Copyright 2026 The mmpaint Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace mmpaint {

struct Token {
  int id = 0;
  std::size_t begin = 0;  // byte offsets into the encoded text
  std::size_t end = 0;
};

/// Text tokenization with offsets; the contract both backbones expose.
class Tokenizer {
 public:
  virtual ~Tokenizer() = default;

  /// Content tokens only, no specials.
  virtual std::vector<Token> encode(std::string_view text) const = 0;
  virtual std::string decode(std::span<const int> ids) const = 0;
  virtual int vocab_size() const = 0;

  virtual int bos_id() const = 0;
  virtual int eos_id() const = 0;
  virtual int pad_id() const = 0;
  virtual bool is_special(int id) const = 0;
};

/// Lossless piece tokenizer: words, tags ("<blue>", "</blue>") and single
/// punctuation characters, each optionally carrying one leading space.
/// Pieces missing from the vocabulary fall back to single bytes.
class PieceTokenizer final : public Tokenizer {
 public:
  static constexpr std::string_view kPad = "<|pad|>";
  static constexpr std::string_view kBos = "<|bos|>";
  static constexpr std::string_view kEos = "<|eos|>";
  static constexpr std::string_view kImage = "<|image|>";

  /// Builds a vocabulary from the most frequent pieces of `corpus`.
  static PieceTokenizer train(const std::vector<std::string>& corpus, int max_pieces = 4096);
  static PieceTokenizer from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;

  std::vector<Token> encode(std::string_view text) const override;
  std::string decode(std::span<const int> ids) const override;
  int vocab_size() const override { return static_cast<int>(pieces_.size()); }

  int bos_id() const override { return 1; }
  int eos_id() const override { return 2; }
  int pad_id() const override { return 0; }
  int image_id() const { return 3; }
  bool is_special(int id) const override { return id >= 0 && id < kNumSpecial; }

  const std::string& piece(int id) const { return pieces_.at(static_cast<std::size_t>(id)); }
  int piece_id(std::string_view piece) const;  // -1 when absent

  /// Splits text into pieces (before vocabulary lookup).
  static std::vector<std::pair<std::size_t, std::size_t>> pretokenize(std::string_view text);

 private:
  static constexpr int kNumSpecial = 4;
  explicit PieceTokenizer(std::vector<std::string> pieces);

  std::vector<std::string> pieces_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace mmpaint
