// Copyright 2026 The mmpaint Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmpaint/toy_diffusion.hpp"

#include <algorithm>
#include <cmath>

namespace mmpaint {

Resolution BlockLatentCodec::latent_size(Resolution image_size) const {
  if (image_size.height % factor_ != 0 || image_size.width % factor_ != 0) {
    throw InvalidInput("image " + to_string(image_size) + " is not divisible by codec factor " +
                       std::to_string(factor_));
  }
  return {image_size.height / factor_, image_size.width / factor_};
}

Latent BlockLatentCodec::encode(const RgbImage& image) const {
  const Resolution res = latent_size(image.size());
  Latent lat{res, MatrixF::Zero(res.cells(), 4)};
  const float norm = 1.0f / (255.0f * static_cast<float>(factor_ * factor_));
  for (int c = 0; c < 3; ++c) {
    const auto ch = image.channel(c).cast<float>();
    for (int y = 0; y < res.height; ++y)
      for (int x = 0; x < res.width; ++x)
        lat.data(y * res.width + x, c) = ch.block(y * factor_, x * factor_, factor_, factor_).sum() * norm * 2 - 1;
  }
  lat.data.col(3) = lat.data.leftCols(3).rowwise().mean();
  return lat;
}

RgbImage BlockLatentCodec::decode(const Latent& latent, Resolution image_size) const {
  if (latent_size(image_size) != latent.resolution) throw InvalidInput("latent does not match image size");
  RgbImage out(image_size.height, image_size.width);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < image_size.height; ++y)
      for (int x = 0; x < image_size.width; ++x) {
        const float v = latent.data((y / factor_) * latent.resolution.width + x / factor_, c);
        const float p = std::clamp((v + 1) * 0.5f * 255.0f, 0.0f, 255.0f);
        out.channel(c)(y, x) = static_cast<std::uint8_t>(std::lround(p));
      }
  }
  return out;
}

MatrixF TextEncoder::null_context() const {
  std::vector<int> ids{tokenizer().bos_id(), tokenizer().eos_id()};
  ids.resize(static_cast<std::size_t>(max_length()), tokenizer().pad_id());
  return encode(ids);
}

ToyTextEncoder::ToyTextEncoder(std::shared_ptr<const Tokenizer> tokenizer, int max_length, int dim,
                               std::uint64_t seed)
    : tokenizer_(std::move(tokenizer)), max_length_(max_length) {
  if (max_length < 2) throw InvalidInput("text encoder max_length must be >= 2");
  Rng rng(seed);
  token_.resize(tokenizer_->vocab_size(), dim);
  position_.resize(max_length, dim);
  for (Eigen::Index i = 0; i < token_.size(); ++i) token_.data()[i] = static_cast<float>(rng.normal());
  for (Eigen::Index i = 0; i < position_.size(); ++i) position_.data()[i] = 0.3f * static_cast<float>(rng.normal());
}

MatrixF ToyTextEncoder::encode(const std::vector<int>& ids) const {
  if (static_cast<int>(ids.size()) != max_length_) {
    throw InvalidInput("text encoder expects " + std::to_string(max_length_) + " token ids");
  }
  MatrixF out(max_length_, token_.cols());
  for (int i = 0; i < max_length_; ++i) {
    if (ids[i] < 0 || ids[i] >= token_.rows()) throw InvalidInput("token id out of range");
    out.row(i) = (token_.row(ids[i]) + position_.row(i)).array().tanh().matrix();
  }
  return out;
}

MatrixF timestep_embedding(int timestep, int dim) {
  MatrixF e(1, dim);
  const int half = dim / 2;
  for (int i = 0; i < half; ++i) {
    const double f = std::exp(-std::log(10000.0) * i / half);
    e(0, i) = static_cast<float>(std::sin(timestep * f));
    e(0, half + i) = static_cast<float>(std::cos(timestep * f));
  }
  if (dim % 2) e(0, dim - 1) = 0;
  return e;
}

MatrixF avg_pool2(const MatrixF& cells, Resolution res) {
  const Resolution coarse{res.height / 2, res.width / 2};
  MatrixF out = MatrixF::Zero(coarse.cells(), cells.cols());
  for (int y = 0; y < res.height; ++y)
    for (int x = 0; x < res.width; ++x) out.row((y / 2) * coarse.width + x / 2) += 0.25f * cells.row(y * res.width + x);
  return out;
}

MatrixF upsample2(const MatrixF& cells, Resolution coarse) {
  const Resolution fine{coarse.height * 2, coarse.width * 2};
  MatrixF out(fine.cells(), cells.cols());
  for (int y = 0; y < fine.height; ++y)
    for (int x = 0; x < fine.width; ++x) out.row(y * fine.width + x) = cells.row((y / 2) * coarse.width + x / 2);
  return out;
}

namespace {

MatrixF split_head(const MatrixF& m, int head, int head_dim) { return m.middleCols(head * head_dim, head_dim); }

}  // namespace

MatrixF ToyDenoiser::AttentionBlock::forward(const MatrixF& h, const MatrixF& context, Resolution res, int heads,
                                             const ForwardContext& ctx, Rng* dropout_rng) {
  const MatrixF q = to_q.forward(h, dropout_rng);
  const MatrixF k = to_k.forward(context, dropout_rng);
  const MatrixF v = to_v.forward(context, dropout_rng);
  const int hd = static_cast<int>(q.cols()) / heads;
  std::vector<MatrixF> qs, ks, vs;
  for (int i = 0; i < heads; ++i) {
    qs.push_back(split_head(q, i, hd));
    ks.push_back(split_head(k, i, hd));
    vs.push_back(split_head(v, i, hd));
  }
  cached_inputs = AttentionInputs<float>::make(std::move(qs), std::move(ks), std::move(vs), res);
  const auto result = site(cached_inputs, ctx);
  cached_weights = result.weights;
  MatrixF o(h.rows(), q.cols());
  for (int i = 0; i < heads; ++i) o.middleCols(i * hd, hd) = result.output[i];
  return to_out.forward(o, dropout_rng);
}

MatrixF ToyDenoiser::AttentionBlock::backward(const MatrixF& grad_out, int heads) {
  const MatrixF d_o = to_out.backward(grad_out);
  const int hd = static_cast<int>(d_o.cols()) / heads;
  std::vector<MatrixF> d_heads;
  for (int i = 0; i < heads; ++i) d_heads.push_back(split_head(d_o, i, hd));
  const auto g = attention_backward(cached_inputs, cached_weights, d_heads);
  MatrixF dq(d_o.rows(), d_o.cols());
  MatrixF dk(g.keys.front().rows(), d_o.cols());
  MatrixF dv(g.values.front().rows(), d_o.cols());
  for (int i = 0; i < heads; ++i) {
    dq.middleCols(i * hd, hd) = g.queries[i];
    dk.middleCols(i * hd, hd) = g.keys[i];
    dv.middleCols(i * hd, hd) = g.values[i];
  }
  // The text context is frozen; only the adapter gradients matter here.
  to_k.backward(dk);
  to_v.backward(dv);
  return to_q.backward(dq);
}

ToyDenoiser::ToyDenoiser(ToyDenoiserConfig config)
    : config_(config),
      down_{{}, {}, {}, {}, CrossAttentionSite<float>("down.attn2", config.latent), {}, {}},
      mid_{{}, {}, {}, {}, CrossAttentionSite<float>("mid.attn2", {config.latent.height / 2, config.latent.width / 2}),
           {}, {}} {
  if (config.latent.height % 2 || config.latent.width % 2) throw InvalidInput("toy denoiser needs an even latent grid");
  Rng rng(config.seed);
  const int in = 2 * config.latent_channels + 1 + config.time_dim;
  const int inner = config.heads * config.head_dim;
  in_proj_ = LoraLinear<float>("conv_in", in, config.hidden, rng);
  out_proj_ = LoraLinear<float>("conv_out", config.hidden, config.latent_channels, rng);
  for (auto* b : {&down_, &mid_}) {
    const std::string p = b->site.name();
    b->to_q = LoraLinear<float>(p + ".to_q", config.hidden, inner, rng);
    b->to_k = LoraLinear<float>(p + ".to_k", config.context_dim, inner, rng);
    b->to_v = LoraLinear<float>(p + ".to_v", config.context_dim, inner, rng);
    b->to_out = LoraLinear<float>(p + ".to_out", inner, config.hidden, rng);
  }
}

std::vector<CrossAttentionSite<float>*> ToyDenoiser::cross_attention_sites() { return {&down_.site, &mid_.site}; }

MatrixF ToyDenoiser::predict_noise(const DenoiserInputs& in, const ForwardContext& ctx, Rng* dropout_rng) {
  const int cells = config_.latent.cells();
  if (in.noisy.rows() != cells || in.noisy.cols() != config_.latent_channels || in.mask.rows() != cells ||
      in.mask.cols() != 1 || in.masked_latent.rows() != cells || in.masked_latent.cols() != config_.latent_channels) {
    throw InvalidInput("toy denoiser: inputs do not match latent " + to_string(config_.latent) + "x" +
                       std::to_string(config_.latent_channels));
  }
  if (in.context.cols() != config_.context_dim) throw InvalidInput("toy denoiser: context dim mismatch");
  MatrixF x(cells, in_proj_.in_features());
  const MatrixF temb = timestep_embedding(in.timestep, config_.time_dim);
  x << in.noisy, in.mask, in.masked_latent, temb.replicate(cells, 1);
  const MatrixF h0 = in_proj_.forward(x).array().tanh().matrix();
  const MatrixF h1 = h0 + down_.forward(h0, in.context, config_.latent, config_.heads, ctx, dropout_rng);
  const MatrixF d = avg_pool2(h1, config_.latent);
  const Resolution coarse = mid_.site.resolution();
  const MatrixF h2 = d + mid_.forward(d, in.context, coarse, config_.heads, ctx, dropout_rng);
  const MatrixF h3 = h1 + upsample2(h2, coarse);
  return out_proj_.forward(h3);
}

void ToyDenoiser::backward(const MatrixF& grad_prediction) {
  const Resolution coarse = mid_.site.resolution();
  const MatrixF dh3 = out_proj_.backward(grad_prediction);
  // Transpose of nearest upsampling sums the four children.
  const MatrixF dh2 = 4.0f * avg_pool2(dh3, config_.latent);
  const MatrixF dd = dh2 + mid_.backward(dh2, config_.heads);
  const MatrixF dh1 = dh3 + 0.25f * upsample2(dd, coarse);
  down_.backward(dh1, config_.heads);
}

ParameterList<float> ToyDenoiser::parameters() {
  ParameterList<float> out;
  in_proj_.collect(out);
  for (auto* b : {&down_, &mid_}) {
    b->to_q.collect(out);
    b->to_k.collect(out);
    b->to_v.collect(out);
    b->to_out.collect(out);
  }
  out_proj_.collect(out);
  return out;
}

void ToyDenoiser::inject_adapters(const AdapterConfig& config, Rng& rng) {
  for (auto* b : {&down_, &mid_})
    for (auto* l : {&b->to_q, &b->to_k, &b->to_v, &b->to_out}) l->inject_adapter(config, rng);
}

std::vector<std::string> ToyDenoiser::adapter_targets() const {
  std::vector<std::string> out;
  for (const auto* b : {&down_, &mid_})
    for (const auto* l : {&b->to_q, &b->to_k, &b->to_v, &b->to_out}) out.push_back(l->name());
  return out;
}

}  // namespace mmpaint
