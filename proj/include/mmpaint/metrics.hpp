// Copyright 2026 The mmpaint Authors
// SPDX-License-Identifier: Apache-2.0

// Evaluation metrics: prompt plausibility and text overlap, diversity,
// pixel fidelity and region-focused image-text similarity, plus pluggable
// set-level scorers and report writers.

#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmpaint/image.hpp"
#include "mmpaint/mask_geometry.hpp"
#include "mmpaint/model_clients.hpp"

namespace mmpaint {

/// Lowercased alphanumeric words; everything else separates.
std::vector<std::string> words_of(const std::string& text);

// ---- text overlap --------------------------------------------------------

struct BleuOptions {
  int max_n = 4;
  /// Added to zero clipped counts (precision = epsilon / total).
  double epsilon = 0.1;
};

/// Sentence BLEU in [0, 1] with uniform weights over orders 1..max_n and the
/// brevity penalty against the closest reference length. Orders longer than
/// the candidate are dropped and the weights renormalized.
double sentence_bleu(const std::vector<std::string>& candidate,
                     const std::vector<std::vector<std::string>>& references, const BleuOptions& options = {});

/// Longest common subsequence length.
std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b);

/// ROUGE-L F1 in [0, 1].
double rouge_l(const std::vector<std::string>& candidate, const std::vector<std::string>& reference);

struct PromptPair {
  std::string generated;
  std::string reference;
};

struct TextOverlap {
  double bleu1 = 0;  // percentages
  double bleu4 = 0;
  double rouge_l = 0;
  std::size_t items = 0;
};

TextOverlap text_overlap(const std::vector<PromptPair>& items, double epsilon = 0.1);

// ---- plausibility --------------------------------------------------------

struct AccuracyItem {
  std::string generated;
  std::string root;  // empty when unknown
};

struct AccuracyResult {
  double percent = 0;
  std::size_t scored = 0;
  std::size_t skipped = 0;  // items without a root
};

/// Whole-word, case-folded containment of the root in the prompt.
bool root_hit(const std::string& prompt, const std::string& root);
AccuracyResult accuracy(const std::vector<AccuracyItem>& items);

// ---- diversity -----------------------------------------------------------

/// Unique n-grams / total n-grams of one sentence; 0 when it has none.
double distinct_n(const std::vector<std::string>& tokens, int n);

/// Mean BLEU (percent) of each sample against the others as references.
double self_bleu(const std::vector<std::string>& samples, const BleuOptions& options = {});

struct DiversitySample {
  std::string example_id;
  std::vector<std::string> samples;
};

struct Diversity {
  double distinct1 = 0;  // in [0, 1]
  double distinct2 = 0;
  double self_bleu = 0;  // percent
  std::size_t examples = 0;
};

/// Distinct-N is per sentence, averaged within and then across examples.
/// Throws InvalidInput unless every example has the same count >= 2.
Diversity diversity(const std::vector<DiversitySample>& samples, const BleuOptions& options = {});

// ---- pixels --------------------------------------------------------------

/// 10 log10(1 / MSE) over all pixels and channels of [0, 1] images; 100 dB
/// when the images are identical.
double psnr(const FloatImage& result, const FloatImage& reference);
double psnr(const RgbImage& result, const RgbImage& reference);
/// Same, restricted to pixels where `mask` is set.
double masked_psnr(const FloatImage& result, const FloatImage& reference, const MaskGrid& mask);

inline constexpr double kPsnrCap = 100.0;

// ---- region image-text similarity ----------------------------------------

struct RegionTreatment {
  double darken = 0.5;          // background multiplier
  double blur_sigma_frac = 0.02;  // Gaussian sigma as a fraction of max(H, W)
};

nlohmann::json to_json(const RegionTreatment& t);

/// Separable Gaussian blur with clamped edges; sigma <= 0 is the identity.
FloatImage gaussian_blur(const FloatImage& image, double sigma);

/// Pixels inside `mask` unchanged; the rest blurred, then darkened.
RgbImage treat_background(const RgbImage& image, const MaskGrid& mask, const RegionTreatment& t = {});

enum class ClipSimMode { t2i, i2i };

struct RegionEvalItem {
  std::string generated_prompt;
  std::string reference_prompt;
  std::string noun_root;
  MaskGrid mask;
  RgbImage source;
  RgbImage result;
};

/// t2i: cos(text(generated_prompt), image(treated result)).
/// i2i: cos(image(treated source), image(treated result)).
double region_clip_sim(const RegionEvalItem& item, EmbeddingClient& embedder, ClipSimMode mode,
                       const RegionTreatment& t = {});

/// Reference-free prompt score: cos(text(prompt), image(crop of the mask's box)).
double prompt_clip_sim(const std::string& prompt, const RgbImage& image, const MaskGrid& mask,
                       EmbeddingClient& embedder);

/// 2.5 * max(cos, 0), the reporting scale of the temperature sweep.
inline double scaled_clip_sim(double cosine) { return 2.5 * std::max(cosine, 0.0); }

// ---- set-level fidelity --------------------------------------------------

/// One inpainting job on disk: source.png, result.png, masks/mask_<i>.png
/// and manifest.json with "prompts".
struct FidelityItem {
  std::string job_id;
  RgbImage source;
  RgbImage result;
  std::vector<MaskGrid> masks;
  std::vector<std::string> prompts;
};

std::vector<FidelityItem> load_fidelity_items(const std::filesystem::path& run_dir);

/// Set-level scorer such as FID, LPIPS or an image-quality model.
class FidelityScorer {
 public:
  virtual ~FidelityScorer() = default;
  virtual std::string name() const = 0;
  virtual double score(const std::vector<const FidelityItem*>& items) = 0;
};

/// Always reports `value`; stands in for external scorers in tests.
class ConstantScorer final : public FidelityScorer {
 public:
  ConstantScorer(std::string name, double value) : name_(std::move(name)), value_(value) {}
  std::string name() const override { return name_; }
  double score(const std::vector<const FidelityItem*>&) override { return value_; }

 private:
  std::string name_;
  double value_;
};

struct FidelityReport {
  /// Column name -> value over all jobs; nullopt when the scorer is absent.
  std::map<std::string, std::optional<double>> all;
  /// The same over jobs with two or more masks.
  std::map<std::string, std::optional<double>> multi_mask;
  std::size_t jobs = 0;
  std::size_t multi_mask_jobs = 0;
  RegionTreatment treatment;
};

inline const std::vector<std::string>& fidelity_columns() {
  static const std::vector<std::string> c{"FID", "LPIPS", "PSNR", "CLIP-IQA", "CLIPSim-I2I", "CLIPSim-T2I"};
  return c;
}

/// PSNR is built in; CLIPSim columns need `embedder` and are reported as
/// percentages of the mean cosine over masks. Other columns come from the
/// named scorers. Throws InvalidInput("no results") on an empty run.
FidelityReport fidelity_suite(const std::filesystem::path& run_dir, const std::vector<FidelityScorer*>& scorers,
                              EmbeddingClient* embedder = nullptr, const RegionTreatment& t = {});

nlohmann::json to_json(const FidelityReport& r);
/// Header plus an "all" row and a "multi_mask" row; absent values are empty.
std::string to_csv(const FidelityReport& r);

struct PromptGenReport {
  AccuracyResult accuracy;
  TextOverlap overlap;
  std::optional<double> clip_sim;  // percent, absent without an embedder
};

inline const std::vector<std::string>& promptgen_columns() {
  static const std::vector<std::string> c{"Accuracy", "BLEU@1", "BLEU@4", "ROUGE-L", "CLIPSim"};
  return c;
}

nlohmann::json to_json(const PromptGenReport& r);
std::string to_csv(const PromptGenReport& r);

}  // namespace mmpaint
