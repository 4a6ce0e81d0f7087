// Copyright 2026 The mmpaint Authors
// SPDX-License-Identifier: Apache-2.0

// Workflow bindings shared by the CLI, the service and the acceptance run:
// loading the in-tree providers with trained adapters, training from a
// prepared dataset, prompt suggestion and the evaluation harness.

#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmpaint/annotation.hpp"
#include "mmpaint/config.hpp"
#include "mmpaint/inpaint.hpp"
#include "mmpaint/metrics.hpp"
#include "mmpaint/promptgen.hpp"

namespace mmpaint {

// ---- tokenizer -----------------------------------------------------------

/// Vocabulary over `texts`, the instruction template and the palette's tags.
std::shared_ptr<const PieceTokenizer> build_tokenizer(const std::vector<std::string>& texts,
                                                      const Palette& palette = default_palette());
void save_tokenizer(const std::filesystem::path& path, const PieceTokenizer& tokenizer);
std::shared_ptr<const PieceTokenizer> load_tokenizer(const std::filesystem::path& path);

// ---- prompt suggestion ---------------------------------------------------

struct SuggestOutput {
  ColoredOverlayImage overlay;
  InstructionBundle instruction;
  GenerationResult generation;
  /// generation samples parsed against the overlay's color assignment, so
  /// every segment carries its mask index.
  std::vector<ParsedAnswer> parsed;
};

/// Overlay (seeded by config.seed), instruction, then sampling.
SuggestOutput suggest_prompts(const RgbImage& image, const MaskSet& masks, const GenerationConfig& config,
                              PromptDecoder& decoder, const Palette& palette = default_palette());

/// {color_assignment: [{mask_index, color}], samples: [[{color, mask_index,
/// text, status}]], raw: [...], diagnostics: [...]}
nlohmann::json to_json(const SuggestOutput& s);

/// Trained prompt generator: tokenizer plus the toy backbone with adapters.
struct PromptGenModel {
  std::shared_ptr<const PieceTokenizer> tokenizer;
  std::unique_ptr<ToyVlm> backbone;
  nlohmann::json manifest;
};

/// Reads tokenizer.json, adapter_config.json and adapter_model.safetensors.
PromptGenModel load_promptgen_model(const std::filesystem::path& dir);

// ---- inpainting ----------------------------------------------------------

struct InpaintStackModel {
  ToyInpaintStack stack;
  nlohmann::json manifest;  // adapter manifest, null for the bare base
  InpaintModel model() const { return stack.model(); }
};

/// The base stack when `dir` is empty, otherwise the stack with the adapter
/// and tokenizer stored in `dir`.
InpaintStackModel load_inpaint_model(const std::filesystem::path& dir, int image_side, int max_tokens = 24);

// ---- training from a prepared dataset -------------------------------------

struct DatasetBundle {
  std::vector<DatasetExample> examples;
  std::vector<std::pair<RgbImage, MaskSet>> inputs;  // same order
  std::filesystem::path dir;
};

DatasetBundle load_dataset_bundle(const std::filesystem::path& dir);

/// Trains a tokenizer over the dataset prompts, then the prompt generator;
/// writes tokenizer.json next to the adapter in `out_dir`.
TrainReport train_promptgen_on_dataset(const DatasetBundle& data, const std::filesystem::path& out_dir,
                                       const AppConfig& config);

/// Throws InvalidInput unless the dataset side equals models.inpaint_image_side.
TrainReport train_inpaint_on_dataset(const DatasetBundle& data, const std::filesystem::path& out_dir,
                                     const AppConfig& config);

// ---- evaluation ----------------------------------------------------------

struct EvalExample {
  std::string example_id;
  RgbImage image;
  MaskSet masks;
  std::vector<std::string> references;  // per mask
  std::vector<std::string> roots;       // per mask, empty when unknown
};

std::vector<EvalExample> eval_examples(const DatasetBundle& data);

/// Per-mask prompts of one sample in mask order; "" where a region has no
/// recoverable text.
std::vector<std::string> prompts_by_mask(const ParsedAnswer& parsed, std::size_t n_masks);

/// Accuracy, BLEU and ROUGE-L of the first sample per region against the
/// reference prompts, plus the reference-free CLIPSim (percent of the mean
/// cosine over regions with text) when an embedder is given.
PromptGenReport evaluate_promptgen(const std::vector<EvalExample>& examples, PromptDecoder& decoder,
                                   const GenerationConfig& config, EmbeddingClient* embedder,
                                   const Palette& palette = default_palette());

struct SweepRow {
  double temperature = 0;
  std::optional<double> clip_sim;  // scaled: 2.5 * max(cos, 0), averaged over regions
  double distinct1 = 0;
  double self_bleu = 0;
  std::size_t examples = 0;
};

/// Samples config.num_samples answers per example at each temperature.
/// Diversity treats each sample's answer text (regions joined in color
/// order) as one sentence.
std::vector<SweepRow> temperature_sweep(const std::vector<EvalExample>& examples, PromptDecoder& decoder,
                                        const std::vector<double>& temperatures, const GenerationConfig& config,
                                        EmbeddingClient* embedder, const Palette& palette = default_palette());

nlohmann::json to_json(const std::vector<SweepRow>& rows);
std::string sweep_csv(const std::vector<SweepRow>& rows);
/// Three panels against temperature: scaled CLIPSim, Distinct-1, Self-BLEU.
std::string sweep_svg(const std::vector<SweepRow>& rows);

/// "0,0.25,0.5" -> {0, 0.25, 0.5}; throws InvalidInput on a bad list.
std::vector<double> parse_number_list(const std::string& text);

}  // namespace mmpaint
