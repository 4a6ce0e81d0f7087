// Copyright 2026 The mmpaint Authors
// SPDX-License-Identifier: Apache-2.0

// Multi-mask inpainting: input preparation, adapter training under the
// multi-mask regime, and guided sampling in single-pass or per-mask modes.

#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmpaint/mask_geometry.hpp"
#include "mmpaint/prompt_layout.hpp"
#include "mmpaint/sampler.hpp"
#include "mmpaint/toy_diffusion.hpp"
#include "mmpaint/training.hpp"

namespace mmpaint {

struct InpaintInputs {
  Latent masked_latent;
  MatrixF mask;        // cells x 1
  MaskGrid mask_grid;  // latent-resolution total mask
  Latent noise;
};

/// Total mask pooled to latent resolution by any-coverage, masked image
/// (union zeroed) encoded by `codec`, and seeded Gaussian noise.
InpaintInputs prepare_inputs(const RgbImage& image, const MaskSet& masks, const LatentCodec& codec, Rng& rng);

enum class InpaintMode { rca_single_pass, concat_single_pass, repeated_per_mask };

std::string to_string(InpaintMode mode);
InpaintMode inpaint_mode_from_string(const std::string& s);

struct SamplerConfig {
  SamplerScheme scheme = SamplerScheme::inference_scheme;
  int steps = 50;
  double guidance_weight = 7.5;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const SamplerConfig& c);

using LayoutBundle = std::map<Resolution, std::shared_ptr<const LayoutTensor>>;

struct InpaintJob {
  RgbImage image;
  MaskSet masks;
  std::vector<std::string> prompts;  // one per mask, same order
  SamplerConfig sampler;
  InpaintMode mode = InpaintMode::rca_single_pass;
  bool composite = true;
  /// Built from masks and prompts when absent.
  std::optional<LayoutBundle> layouts;
  std::optional<std::filesystem::path> attention_dump_dir;
};

/// Everything the engine needs from a backbone provider.
struct InpaintModel {
  InpaintBackbone* backbone = nullptr;
  const TextEncoder* text_encoder = nullptr;
  const LatentCodec* codec = nullptr;
  NoiseSchedule schedule = NoiseSchedule::scaled_linear();
};

/// The in-tree provider: block codec, toy text encoder and toy denoiser
/// sized so that `image_side` maps to the denoiser's 8x8 latent.
struct ToyInpaintStack {
  std::shared_ptr<const PieceTokenizer> tokenizer;
  std::unique_ptr<ToyTextEncoder> text_encoder;
  std::unique_ptr<ToyDenoiser> denoiser;
  std::unique_ptr<BlockLatentCodec> codec;
  NoiseSchedule schedule = NoiseSchedule::scaled_linear();

  InpaintModel model() const { return {denoiser.get(), text_encoder.get(), codec.get(), schedule}; }
};

ToyInpaintStack make_toy_inpaint_stack(std::shared_ptr<const PieceTokenizer> tokenizer, int image_side = 512,
                                       int max_tokens = 24, std::uint64_t seed = 7);

struct GuidanceStep {
  int step = 0;
  int timestep = 0;
  const MatrixF& uncond;
  const MatrixF& cond;
  const MatrixF& guided;
};

using GuidanceObserver = std::function<void(const GuidanceStep&)>;

struct InpaintResult {
  RgbImage image;
  MatrixF final_latents;
  bool composited = false;
  int backbone_runs = 0;
  std::string output_sha256;
  nlohmann::json manifest;
};

/// Conditioned text, concatenated prompt and one layout per backbone
/// cross-attention resolution.
struct Conditioning {
  ConcatPrompt prompt;
  MatrixF context;
  LayoutBundle layouts;
};

Conditioning build_conditioning(const InpaintModel& model, const MaskSet& masks,
                                const std::vector<std::string>& prompts);

/// Pixel-content hash used to compare outputs across runs.
std::string image_sha256(const RgbImage& image);

std::string config_hash(const nlohmann::json& config);

InpaintResult inpaint(const InpaintModel& model, const InpaintJob& job, const GuidanceObserver& observer = {});
InpaintResult inpaint_repeated(const InpaintModel& model, const InpaintJob& job,
                               const GuidanceObserver& observer = {});

/// Dispatches on job.mode.
InpaintResult run_inpaint_job(const InpaintModel& model, const InpaintJob& job);

void write_inpaint_result(const std::filesystem::path& dir, const InpaintResult& result);

/// write_inpaint_result plus source.png, masks/mask_<i>.png and the prompts in
/// the manifest; the layout read by the fidelity suite.
void write_inpaint_job(const std::filesystem::path& dir, const InpaintJob& job, const InpaintResult& result);

// ---------------------------------------------------------------------------
// Training

struct InpaintExample {
  RgbImage image;
  MaskSet masks;
  std::vector<std::string> prompts;
};

struct InpaintTrainConfig {
  AdapterConfig adapter{16, 16.0, 0.05, "to_q|to_k|to_v|to_out"};
  double learning_rate = 1e-4;
  double warmup_fraction = 0.01;
  double grad_clip = 1.0;
  int batch_size = 32;
  int epochs = 1;
  /// Overrides epochs when positive.
  long max_steps = 0;
  double text_drop = 0.1;
  int train_timesteps = 1000;
  /// Draw noise and timesteps once per example and reuse them every step.
  bool fixed_micro_batch = false;
  std::uint64_t seed = 0;
  std::optional<std::filesystem::path> output_dir;
  long checkpoint_every = 0;

  void validate() const;
};

nlohmann::json to_json(const InpaintTrainConfig& c);

/// True when the conditioning text should be dropped for an example with
/// `n_masks` masks. Only single-mask examples are eligible.
bool should_drop_text(std::size_t n_masks, double probability, Rng& rng);

TrainReport train_inpainter(const std::vector<InpaintExample>& dataset, const InpaintModel& model,
                            const InpaintTrainConfig& config);

}  // namespace mmpaint
