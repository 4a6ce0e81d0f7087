// Copyright 2026 The mmpaint Authors
// SPDX-License-Identifier: Apache-2.0

// Backbone interfaces for latent inpainting, plus a small in-tree provider:
// a block-average latent codec, a frozen embedding text encoder and a
// two-resolution denoiser whose cross-attention projections take adapters.

#pragma once

#include <memory>
#include <string>
#include <vector>

#include "mmpaint/image.hpp"
#include "mmpaint/nn.hpp"
#include "mmpaint/rca.hpp"
#include "mmpaint/tokenizer.hpp"

namespace mmpaint {

/// cells x channels, cells row-major over `resolution`.
struct Latent {
  Resolution resolution;
  MatrixF data;
};

class LatentCodec {
 public:
  virtual ~LatentCodec() = default;
  virtual int channels() const = 0;
  virtual Resolution latent_size(Resolution image_size) const = 0;
  virtual Latent encode(const RgbImage& image) const = 0;
  virtual RgbImage decode(const Latent& latent, Resolution image_size) const = 0;
};

/// Averages factor x factor pixel blocks into RGB in [-1, 1] plus luminance;
/// decodes by nearest-neighbour expansion of the RGB channels.
class BlockLatentCodec final : public LatentCodec {
 public:
  explicit BlockLatentCodec(int factor = 64) : factor_(factor) {}
  int channels() const override { return 4; }
  Resolution latent_size(Resolution image_size) const override;
  Latent encode(const RgbImage& image) const override;
  RgbImage decode(const Latent& latent, Resolution image_size) const override;
  int factor() const { return factor_; }

 private:
  int factor_;
};

class TextEncoder {
 public:
  virtual ~TextEncoder() = default;
  virtual const Tokenizer& tokenizer() const = 0;
  virtual int max_length() const = 0;
  virtual int embedding_dim() const = 0;
  /// tokens x embedding_dim for a padded id sequence of length max_length().
  virtual MatrixF encode(const std::vector<int>& token_ids) const = 0;
  /// Context for the empty prompt.
  MatrixF null_context() const;
};

class ToyTextEncoder final : public TextEncoder {
 public:
  ToyTextEncoder(std::shared_ptr<const Tokenizer> tokenizer, int max_length, int dim, std::uint64_t seed);
  const Tokenizer& tokenizer() const override { return *tokenizer_; }
  int max_length() const override { return max_length_; }
  int embedding_dim() const override { return static_cast<int>(token_.cols()); }
  MatrixF encode(const std::vector<int>& token_ids) const override;

 private:
  std::shared_ptr<const Tokenizer> tokenizer_;
  int max_length_;
  MatrixF token_;
  MatrixF position_;
};

struct DenoiserInputs {
  MatrixF noisy;          // cells x latent channels
  MatrixF mask;           // cells x 1, 1 inside the total mask
  MatrixF masked_latent;  // cells x latent channels
  MatrixF context;        // tokens x context dim
  int timestep = 0;
};

/// A latent inpainting denoiser whose cross-attention sites accept hooks.
class InpaintBackbone : public CrossAttentionBackbone<float> {
 public:
  virtual std::string model_id() const = 0;
  virtual Resolution latent_resolution() const = 0;
  virtual int latent_channels() const = 0;
  /// Predicts the added noise. `dropout_rng` non-null enables adapter dropout.
  virtual MatrixF predict_noise(const DenoiserInputs& in, const ForwardContext& ctx, Rng* dropout_rng = nullptr) = 0;
  /// Backpropagates d(loss)/d(prediction) of the latest predict_noise call
  /// into adapter gradients.
  virtual void backward(const MatrixF& grad_prediction) = 0;
  virtual ParameterList<float> parameters() = 0;
  virtual void inject_adapters(const AdapterConfig& config, Rng& rng) = 0;
  virtual std::vector<std::string> adapter_targets() const = 0;
};

struct ToyDenoiserConfig {
  Resolution latent{8, 8};
  int latent_channels = 4;
  int hidden = 32;
  int heads = 2;
  int head_dim = 8;
  int context_dim = 32;
  int time_dim = 8;
  std::uint64_t seed = 7;
};

/// 8x8 and 4x4 cross-attention around a 2x2 average-pool bottleneck.
class ToyDenoiser final : public InpaintBackbone {
 public:
  explicit ToyDenoiser(ToyDenoiserConfig config = {});

  std::string model_id() const override { return "toy-denoiser-v1"; }
  Resolution latent_resolution() const override { return config_.latent; }
  int latent_channels() const override { return config_.latent_channels; }
  std::vector<CrossAttentionSite<float>*> cross_attention_sites() override;
  MatrixF predict_noise(const DenoiserInputs& in, const ForwardContext& ctx, Rng* dropout_rng = nullptr) override;
  void backward(const MatrixF& grad_prediction) override;
  ParameterList<float> parameters() override;
  void inject_adapters(const AdapterConfig& config, Rng& rng) override;
  std::vector<std::string> adapter_targets() const override;
  const ToyDenoiserConfig& config() const { return config_; }

 private:
  struct AttentionBlock {
    LoraLinear<float> to_q, to_k, to_v, to_out;
    CrossAttentionSite<float> site;
    AttentionInputs<float> cached_inputs;
    std::vector<MatrixF> cached_weights;

    MatrixF forward(const MatrixF& h, const MatrixF& context, Resolution res, int heads, const ForwardContext& ctx,
                    Rng* dropout_rng);
    MatrixF backward(const MatrixF& grad_out, int heads);
  };

  ToyDenoiserConfig config_;
  LoraLinear<float> in_proj_;
  LoraLinear<float> out_proj_;
  AttentionBlock down_;
  AttentionBlock mid_;
  MatrixF cached_h0_;
};

MatrixF timestep_embedding(int timestep, int dim);

MatrixF avg_pool2(const MatrixF& cells, Resolution res);
MatrixF upsample2(const MatrixF& cells, Resolution coarse);

}  // namespace mmpaint
