// Copyright 2026 The mmpaint Authors
// SPDX-License-Identifier: Apache-2.0

// Prompt generator: training examples in the color-tag protocol, the
// answer-only language-modelling loss, adapter training and sampling.

#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmpaint/mask_geometry.hpp"
#include "mmpaint/nn.hpp"
#include "mmpaint/prompt_codec.hpp"
#include "mmpaint/tokenizer.hpp"
#include "mmpaint/training.hpp"

namespace mmpaint {

/// Decoding surface shared by real backbones and scripted test decoders.
class PromptDecoder {
 public:
  virtual ~PromptDecoder() = default;
  virtual const Tokenizer& tokenizer() const = 0;
  virtual int image_token_id() const = 0;
  virtual VectorF encode_image(const RgbImage& image) const = 0;
  /// Logits for the token following `ids`; the first `prompt_length` ids are
  /// the prompt, the rest were generated.
  virtual VectorF next_token_logits(const std::vector<int>& ids, const VectorF& image, std::size_t prompt_length) = 0;
};

/// Trainable backbone: frozen base plus injected adapters.
class VisionLanguageBackbone : public PromptDecoder {
 public:
  virtual std::string model_id() const = 0;
  /// Logits for every position: row p scores the token at p + 1.
  virtual MatrixF forward(const std::vector<int>& ids, const VectorF& image, Rng* dropout_rng = nullptr) = 0;
  virtual void backward(const MatrixF& grad_logits) = 0;
  virtual ParameterList<float> parameters() = 0;
  virtual void inject_adapters(const AdapterConfig& config, Rng& rng) = 0;
  virtual std::vector<std::string> adapter_targets() const = 0;
  /// Provider capability: whether the frozen base is held quantized.
  virtual bool quantized_base() const { return false; }

  VectorF next_token_logits(const std::vector<int>& ids, const VectorF& image, std::size_t prompt_length) override;
};

/// Token ids of a chat turn: bos, system, image placeholder, instruction,
/// then optionally the answer and eos.
struct ChatSequence {
  std::vector<int> ids;
  std::size_t prompt_length = 0;  // ids before the answer
};

ChatSequence build_chat(const Tokenizer& tokenizer, int image_token_id, const std::string& system_prompt,
                        const std::string& instruction, const std::optional<std::string>& answer = std::nullopt);

struct PromptGenExample {
  ColoredOverlayImage overlay;
  std::string system_prompt;
  std::string instruction;
  std::vector<std::string> color_order;
  TaggedAnswer answer;
  std::vector<int> input_ids;
  /// True exactly on answer tokens (including the closing eos).
  std::vector<bool> label_mask;
};

/// `prompts[i]` describes `masks[i]`.
PromptGenExample assemble_example(const RgbImage& image, const MaskSet& masks,
                                  const std::vector<std::string>& prompts, const Palette& palette,
                                  std::uint64_t seed, const Tokenizer& tokenizer, int image_token_id,
                                  const InstructionTemplate& tmpl = default_instruction_template());

enum class LossReduction { mean, sum };

struct LossResult {
  double value = 0;
  MatrixF grad;  // d value / d logits
  int count = 0;
};

/// Negative log-likelihood of `labels[p]` under row p of `logits`, summed or
/// averaged over positions with label_mask set. Other rows get zero gradient.
LossResult lm_loss(const MatrixF& logits, const std::vector<int>& labels, const std::vector<bool>& label_mask,
                   LossReduction reduction = LossReduction::mean);

struct PromptGenTrainConfig {
  AdapterConfig adapter{16, 16.0, 0.05, "all-linear"};
  double learning_rate = 2e-4;
  double warmup_fraction = 0.01;
  double grad_clip = 0.5;
  int batch_size = 32;
  int epochs = 1;
  long max_steps = 0;
  LossReduction loss_reduction = LossReduction::mean;
  int max_sequence_length = 2048;
  std::uint64_t seed = 0;
  std::optional<std::filesystem::path> output_dir;
  long checkpoint_every = 0;

  void validate() const;
};

nlohmann::json to_json(const PromptGenTrainConfig& c);

TrainReport train_promptgen(const std::vector<PromptGenExample>& dataset, VisionLanguageBackbone& backbone,
                            const PromptGenTrainConfig& config);

struct GenerationConfig {
  double temperature = 0.5;
  int num_samples = 4;
  int max_new_tokens = 128;
  std::uint64_t seed = 0;

  void validate() const;
};

struct GeneratedSample {
  std::string raw;
  ParsedAnswer parsed;
};

struct GenerationResult {
  std::vector<GeneratedSample> samples;
  std::vector<std::string> diagnostics;

  /// One prompt list per parseable sample.
  std::vector<std::vector<RegionPrompt>> suggestions() const;
};

nlohmann::json to_json(const GenerationResult& r);

GenerationResult generate_prompts(const RgbImage& overlay, const InstructionBundle& instruction,
                                  const GenerationConfig& config, PromptDecoder& decoder);

/// Emits a fixed text followed by eos regardless of input.
class ScriptedDecoder final : public PromptDecoder {
 public:
  ScriptedDecoder(std::shared_ptr<const Tokenizer> tokenizer, int image_token_id, std::vector<std::string> scripts);
  const Tokenizer& tokenizer() const override { return *tokenizer_; }
  int image_token_id() const override { return image_token_id_; }
  VectorF encode_image(const RgbImage&) const override { return VectorF::Zero(1); }
  VectorF next_token_logits(const std::vector<int>& ids, const VectorF& image, std::size_t prompt_length) override;

 private:
  std::shared_ptr<const Tokenizer> tokenizer_;
  int image_token_id_;
  std::vector<std::vector<int>> scripts_;
  std::size_t sample_ = 0;
  bool started_ = false;
};

struct ToyVlmConfig {
  int embed_dim = 32;
  int hidden = 64;
  int image_grid = 4;
  std::uint64_t seed = 11;
};

/// Context of token t: [E x_t, mean_{s<=t} E x_s, image features] ->
/// tanh(W1 .) -> W2 . -> logits. E is frozen; W1 and W2 take adapters.
class ToyVlm final : public VisionLanguageBackbone {
 public:
  ToyVlm(std::shared_ptr<const PieceTokenizer> tokenizer, ToyVlmConfig config = {});

  const Tokenizer& tokenizer() const override { return *tokenizer_; }
  int image_token_id() const override { return tokenizer_->image_id(); }
  VectorF encode_image(const RgbImage& image) const override;
  std::string model_id() const override { return "toy-vlm-v1"; }
  MatrixF forward(const std::vector<int>& ids, const VectorF& image, Rng* dropout_rng = nullptr) override;
  void backward(const MatrixF& grad_logits) override;
  ParameterList<float> parameters() override;
  void inject_adapters(const AdapterConfig& config, Rng& rng) override;
  std::vector<std::string> adapter_targets() const override;

 private:
  std::shared_ptr<const PieceTokenizer> tokenizer_;
  ToyVlmConfig config_;
  Parameter<float> embedding_;
  LoraLinear<float> w1_;
  LoraLinear<float> w2_;
  MatrixF z_;
};

}  // namespace mmpaint
