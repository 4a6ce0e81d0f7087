// Copyright 2026 The mmpaint Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmpaint/promptgen.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mmpaint/inpaint.hpp"

namespace mmpaint {

namespace {

std::vector<int> ids_of(const Tokenizer& tok, const std::string& text) {
  std::vector<int> ids;
  for (const auto& t : tok.encode(text)) ids.push_back(t.id);
  return ids;
}

void append(std::vector<int>& out, const std::vector<int>& more) { out.insert(out.end(), more.begin(), more.end()); }

}  // namespace

VectorF VisionLanguageBackbone::next_token_logits(const std::vector<int>& ids, const VectorF& image, std::size_t) {
  const MatrixF logits = forward(ids, image);
  return logits.row(logits.rows() - 1).transpose();
}

ChatSequence build_chat(const Tokenizer& tok, int image_token_id, const std::string& system_prompt,
                        const std::string& instruction, const std::optional<std::string>& answer) {
  ChatSequence s;
  s.ids.push_back(tok.bos_id());
  append(s.ids, ids_of(tok, system_prompt + " USER: "));
  s.ids.push_back(image_token_id);
  append(s.ids, ids_of(tok, "\n" + instruction + " ASSISTANT:"));
  s.prompt_length = s.ids.size();
  if (answer) {
    append(s.ids, ids_of(tok, " " + *answer));
    s.ids.push_back(tok.eos_id());
  }
  return s;
}

PromptGenExample assemble_example(const RgbImage& image, const MaskSet& masks,
                                  const std::vector<std::string>& prompts, const Palette& palette,
                                  std::uint64_t seed, const Tokenizer& tokenizer, int image_token_id,
                                  const InstructionTemplate& tmpl) {
  if (prompts.size() != masks.size()) {
    throw InvalidInput("prompts: expected " + std::to_string(masks.size()) + " prompts, got " +
                       std::to_string(prompts.size()));
  }
  PromptGenExample ex;
  ex.overlay = render_overlay(image, masks, palette, seed);
  std::vector<RegionPrompt> ordered;
  for (const auto& a : ex.overlay.color_assignment) {
    ex.color_order.push_back(a.color_name);
    ordered.push_back({prompts[a.mask_index], a.color_name, a.mask_index});
  }
  ex.answer = encode_answer(ordered);
  const InstructionBundle bundle =
      build_instruction(ex.color_order, static_cast<int>(masks.size()), tmpl);
  ex.system_prompt = bundle.system_prompt;
  ex.instruction = bundle.instruction;
  const ChatSequence chat = build_chat(tokenizer, image_token_id, ex.system_prompt, ex.instruction, ex.answer.raw);
  ex.input_ids = chat.ids;
  ex.label_mask.assign(chat.ids.size(), false);
  std::fill(ex.label_mask.begin() + static_cast<long>(chat.prompt_length), ex.label_mask.end(), true);
  return ex;
}

LossResult lm_loss(const MatrixF& logits, const std::vector<int>& labels, const std::vector<bool>& label_mask,
                   LossReduction reduction) {
  if (static_cast<std::size_t>(logits.rows()) != labels.size() || labels.size() != label_mask.size()) {
    throw InvalidInput("lm_loss: logits, labels and label_mask lengths differ");
  }
  LossResult r;
  r.grad = MatrixF::Zero(logits.rows(), logits.cols());
  for (std::size_t p = 0; p < labels.size(); ++p) {
    if (!label_mask[p]) continue;
    if (labels[p] < 0 || labels[p] >= logits.cols()) throw InvalidInput("lm_loss: label out of vocabulary");
    const auto row = logits.row(static_cast<Eigen::Index>(p)).cast<double>();
    const double m = row.maxCoeff();
    const Eigen::RowVectorXd e = (row.array() - m).exp();
    const double z = e.sum();
    r.value += m + std::log(z) - row(labels[p]);
    r.grad.row(static_cast<Eigen::Index>(p)) = (e / z).cast<float>();
    r.grad(static_cast<Eigen::Index>(p), labels[p]) -= 1.0f;
    ++r.count;
  }
  if (r.count == 0) throw InvalidInput("lm_loss: label_mask selects no positions");
  if (reduction == LossReduction::mean) {
    r.value /= r.count;
    r.grad /= static_cast<float>(r.count);
  }
  return r;
}

void PromptGenTrainConfig::validate() const {
  adapter.validate();
  if (!(learning_rate > 0)) throw InvalidInput("learning_rate: must be positive");
  if (!(warmup_fraction > 0 && warmup_fraction < 1)) throw InvalidInput("warmup_fraction: must be in (0, 1)");
  if (!(grad_clip > 0)) throw InvalidInput("grad_clip: must be positive");
  if (batch_size < 1) throw InvalidInput("batch_size: must be >= 1");
  if (epochs < 1 && max_steps < 1) throw InvalidInput("epochs: must be >= 1");
  if (max_sequence_length < 2) throw InvalidInput("max_sequence_length: must be >= 2");
}

nlohmann::json to_json(const PromptGenTrainConfig& c) {
  return {{"rank", c.adapter.rank},
          {"alpha", c.adapter.alpha},
          {"dropout", c.adapter.dropout},
          {"target_pattern", c.adapter.target_pattern},
          {"learning_rate", c.learning_rate},
          {"warmup_fraction", c.warmup_fraction},
          {"grad_clip", c.grad_clip},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"max_steps", c.max_steps},
          {"loss_reduction", c.loss_reduction == LossReduction::mean ? "mean" : "sum"},
          {"max_sequence_length", c.max_sequence_length},
          {"seed", c.seed}};
}

TrainReport train_promptgen(const std::vector<PromptGenExample>& dataset, VisionLanguageBackbone& backbone,
                            const PromptGenTrainConfig& config) {
  config.validate();
  if (dataset.empty()) throw InvalidInput("dataset: no training examples");
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    if (static_cast<int>(dataset[i].input_ids.size()) > config.max_sequence_length) {
      throw InvalidInput("dataset[" + std::to_string(i) + "]: sequence of " +
                         std::to_string(dataset[i].input_ids.size()) + " tokens exceeds max_sequence_length");
    }
  }
  Rng rng(config.seed);
  backbone.inject_adapters(config.adapter, rng);
  const ParameterList<float> params = backbone.parameters();
  TrainReport report;
  report.base_checksum_before = frozen_checksum(params);
  report.trainable_parameters = trainable_parameter_count(params);

  std::vector<VectorF> images;
  for (const auto& ex : dataset) images.push_back(backbone.encode_image(ex.overlay.pixels));

  const long batch = std::min<long>(config.batch_size, static_cast<long>(dataset.size()));
  const long per_epoch = (static_cast<long>(dataset.size()) + batch - 1) / batch;
  const long total = config.max_steps > 0 ? config.max_steps : config.epochs * per_epoch;
  AdamW<float> optimizer(params);
  std::vector<MatrixF> last_good = snapshot_trainable(params);
  std::vector<std::size_t> order(dataset.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t cursor = order.size();

  for (long step = 0; step < total; ++step) {
    zero_grads(params);
    std::vector<std::size_t> picked;
    for (long b = 0; b < batch; ++b) {
      if (cursor >= order.size()) {
        rng.shuffle(order);
        cursor = 0;
      }
      picked.push_back(order[cursor++]);
    }
    int tokens = 0;
    for (const auto i : picked)
      tokens += static_cast<int>(std::count(dataset[i].label_mask.begin() + 1, dataset[i].label_mask.end(), true));
    const float scale = config.loss_reduction == LossReduction::mean ? 1.0f / static_cast<float>(tokens) : 1.0f;
    double loss = 0;
    for (const auto i : picked) {
      const auto& ex = dataset[i];
      const std::vector<int> inputs(ex.input_ids.begin(), ex.input_ids.end() - 1);
      const std::vector<int> labels(ex.input_ids.begin() + 1, ex.input_ids.end());
      const std::vector<bool> mask(ex.label_mask.begin() + 1, ex.label_mask.end());
      const MatrixF logits = backbone.forward(inputs, images[i], &rng);
      const LossResult l = lm_loss(logits, labels, mask, LossReduction::sum);
      loss += l.value * scale;
      backbone.backward(l.grad * scale);
    }
    TrainStepLog entry;
    entry.step = step;
    entry.loss = loss;
    if (!std::isfinite(loss)) {
      restore_trainable(params, last_good);
      report.diverged = true;
      if (config.output_dir) {
        const auto ckpt = *config.output_dir / "last_good" / "adapter_model.safetensors";
        save_adapter(ckpt, params, {{"base_model_id", backbone.model_id()}, {"step", report.last_good_step}});
        report.last_good_checkpoint = ckpt;
      }
      break;
    }
    entry.lr = warmup_constant_lr(config.learning_rate, step, total, config.warmup_fraction);
    entry.grad_norm = clip_grad_norm(params, config.grad_clip);
    entry.clipped_grad_norm = global_grad_norm(params);
    optimizer.step(entry.lr);
    report.log.push_back(entry);
    last_good = snapshot_trainable(params);
    report.last_good_step = step;
    if (config.output_dir && config.checkpoint_every > 0 && (step + 1) % config.checkpoint_every == 0) {
      const auto ckpt = *config.output_dir / ("checkpoint-" + std::to_string(step + 1)) / "adapter_model.safetensors";
      save_adapter(ckpt, params, {{"base_model_id", backbone.model_id()}, {"step", step}});
      report.last_good_checkpoint = ckpt;
    }
  }

  report.base_checksum_after = frozen_checksum(params);
  if (config.output_dir) {
    nlohmann::json manifest = to_json(config);
    manifest["base_model_id"] = backbone.model_id();
    manifest["target_modules"] = backbone.adapter_targets();
    manifest["trainable_parameters"] = report.trainable_parameters;
    manifest["quantized_base"] = backbone.quantized_base();
    manifest["steps"] = report.log.size();
    manifest["config_hash"] = config_hash(to_json(config));
    const auto path = *config.output_dir / "adapter_model.safetensors";
    save_adapter(path, params, manifest);
    write_train_log_csv(*config.output_dir / "train_log.csv", report.log);
    report.adapter_path = path;
  }
  return report;
}

void GenerationConfig::validate() const {
  if (!(temperature >= 0)) throw InvalidInput("temperature: must be >= 0");
  if (num_samples < 1) throw InvalidInput("num_samples: must be >= 1");
  if (max_new_tokens < 1) throw InvalidInput("max_new_tokens: must be >= 1");
}

std::vector<std::vector<RegionPrompt>> GenerationResult::suggestions() const {
  std::vector<std::vector<RegionPrompt>> out;
  for (const auto& s : samples)
    if (auto p = s.parsed.prompts(); !p.empty()) out.push_back(std::move(p));
  return out;
}

nlohmann::json to_json(const GenerationResult& r) {
  nlohmann::json j;
  j["samples"] = nlohmann::json::array();
  for (const auto& s : r.samples) {
    nlohmann::json seg = nlohmann::json::array();
    for (const auto& p : s.parsed.segments) {
      seg.push_back({{"color", p.prompt.color_name},
                     {"mask_index", p.prompt.mask_index},
                     {"text", p.prompt.text},
                     {"status", to_string(p.status)}});
    }
    j["samples"].push_back({{"raw", s.raw}, {"segments", seg}});
  }
  j["diagnostics"] = r.diagnostics;
  return j;
}

GenerationResult generate_prompts(const RgbImage& overlay, const InstructionBundle& instruction,
                                  const GenerationConfig& config, PromptDecoder& decoder) {
  config.validate();
  const Tokenizer& tok = decoder.tokenizer();
  const ChatSequence prompt =
      build_chat(tok, decoder.image_token_id(), instruction.system_prompt, instruction.instruction);
  const VectorF image = decoder.encode_image(overlay);
  GenerationResult result;
  for (int s = 0; s < config.num_samples; ++s) {
    Rng rng(config.seed + 0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(s));
    std::vector<int> ids = prompt.ids;
    std::vector<int> generated;
    for (int k = 0; k < config.max_new_tokens; ++k) {
      const VectorF logits = decoder.next_token_logits(ids, image, prompt.prompt_length);
      int next = 0;
      if (config.temperature == 0) {
        logits.maxCoeff(&next);
      } else {
        const Eigen::VectorXd scaled = logits.cast<double>() / config.temperature;
        const Eigen::VectorXd p = (scaled.array() - scaled.maxCoeff()).exp();
        double u = rng.uniform() * p.sum();
        next = static_cast<int>(p.size()) - 1;
        for (Eigen::Index i = 0; i < p.size(); ++i) {
          u -= p(i);
          if (u < 0) {
            next = static_cast<int>(i);
            break;
          }
        }
      }
      if (next == tok.eos_id()) break;
      ids.push_back(next);
      generated.push_back(next);
    }
    std::erase_if(generated, [&](int id) { return tok.is_special(id); });
    std::string raw = tok.decode(generated);
    raw.erase(0, raw.find_first_not_of(' '));
    result.samples.push_back({raw, parse_answer(raw, instruction.color_order)});
  }
  if (result.suggestions().empty()) result.diagnostics.push_back("no sample contained a parseable color-tag segment");
  return result;
}

ScriptedDecoder::ScriptedDecoder(std::shared_ptr<const Tokenizer> tokenizer, int image_token_id,
                                 std::vector<std::string> scripts)
    : tokenizer_(std::move(tokenizer)), image_token_id_(image_token_id) {
  if (scripts.empty()) throw InvalidInput("ScriptedDecoder needs at least one script");
  for (const auto& s : scripts) {
    auto ids = ids_of(*tokenizer_, s);
    ids.push_back(tokenizer_->eos_id());
    scripts_.push_back(std::move(ids));
  }
}

VectorF ScriptedDecoder::next_token_logits(const std::vector<int>& ids, const VectorF&, std::size_t prompt_length) {
  if (ids.size() == prompt_length) {
    sample_ = started_ ? sample_ + 1 : 0;
    started_ = true;
  }
  const auto& script = scripts_[sample_ % scripts_.size()];
  const std::size_t pos = std::min(ids.size() - prompt_length, script.size() - 1);
  VectorF logits = VectorF::Constant(tokenizer_->vocab_size(), -30.0f);
  logits(script[pos]) = 30.0f;
  return logits;
}

ToyVlm::ToyVlm(std::shared_ptr<const PieceTokenizer> tokenizer, ToyVlmConfig config)
    : tokenizer_(std::move(tokenizer)), config_(config) {
  Rng rng(config.seed);
  embedding_.name = "embed_tokens.weight";
  embedding_.value.resize(tokenizer_->vocab_size(), config.embed_dim);
  for (Eigen::Index i = 0; i < embedding_.value.size(); ++i)
    embedding_.value.data()[i] = static_cast<float>(rng.normal());
  const int image_dim = 3 * config.image_grid * config.image_grid;
  w1_ = LoraLinear<float>("mlp.fc1", 2 * config.embed_dim + image_dim, config.hidden, rng);
  w2_ = LoraLinear<float>("lm_head", config.hidden, tokenizer_->vocab_size(), rng);
}

VectorF ToyVlm::encode_image(const RgbImage& image) const {
  const int g = config_.image_grid;
  VectorF f(3 * g * g);
  for (int c = 0; c < 3; ++c) {
    const auto ch = image.channel(c).cast<float>();
    for (int gy = 0; gy < g; ++gy)
      for (int gx = 0; gx < g; ++gx) {
        const int y0 = gy * image.height() / g, y1 = std::max(y0 + 1, (gy + 1) * image.height() / g);
        const int x0 = gx * image.width() / g, x1 = std::max(x0 + 1, (gx + 1) * image.width() / g);
        f((c * g + gy) * g + gx) = ch.block(y0, x0, y1 - y0, x1 - x0).mean() / 255.0f;
      }
  }
  return f;
}

MatrixF ToyVlm::forward(const std::vector<int>& ids, const VectorF& image, Rng* dropout_rng) {
  if (ids.empty()) throw InvalidInput("toy vlm: empty input");
  const int d = config_.embed_dim;
  if (image.size() != 3 * config_.image_grid * config_.image_grid) throw InvalidInput("toy vlm: bad image features");
  MatrixF x(static_cast<Eigen::Index>(ids.size()), w1_.in_features());
  Eigen::RowVectorXf running = Eigen::RowVectorXf::Zero(d);
  for (std::size_t t = 0; t < ids.size(); ++t) {
    if (ids[t] < 0 || ids[t] >= embedding_.value.rows()) throw InvalidInput("toy vlm: token id out of range");
    const auto e = embedding_.value.row(ids[t]);
    running += e;
    const auto r = static_cast<Eigen::Index>(t);
    x.row(r).head(d) = e;
    x.row(r).segment(d, d) = running / static_cast<float>(t + 1);
    x.row(r).tail(image.size()) = image.transpose();
  }
  z_ = w1_.forward(x, dropout_rng).array().tanh().matrix();
  return w2_.forward(z_, dropout_rng);
}

void ToyVlm::backward(const MatrixF& grad_logits) {
  const MatrixF dz = w2_.backward(grad_logits);
  w1_.backward(dz.cwiseProduct((1.0f - z_.array().square()).matrix()));
}

ParameterList<float> ToyVlm::parameters() {
  ParameterList<float> out{&embedding_};
  w1_.collect(out);
  w2_.collect(out);
  return out;
}

void ToyVlm::inject_adapters(const AdapterConfig& config, Rng& rng) {
  w1_.inject_adapter(config, rng);
  w2_.inject_adapter(config, rng);
}

std::vector<std::string> ToyVlm::adapter_targets() const { return {w1_.name(), w2_.name()}; }

}  // namespace mmpaint
