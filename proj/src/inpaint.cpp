// Copyright 2026 The mmpaint Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmpaint/inpaint.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <set>

#include "mmpaint/hashing.hpp"
#include "mmpaint/rca.hpp"

namespace mmpaint {

namespace {

void require_masks_and_prompts(const RgbImage& image, const MaskSet& masks, const std::vector<std::string>& prompts) {
  if (masks.size() == 0) throw InvalidInput("masks: at least one mask is required");
  if (prompts.size() != masks.size()) {
    throw InvalidInput("prompts: expected " + std::to_string(masks.size()) + " prompts, got " +
                       std::to_string(prompts.size()));
  }
  for (std::size_t i = 0; i < prompts.size(); ++i)
    if (prompts[i].find_first_not_of(" \t\n") == std::string::npos)
      throw InvalidInput("prompts[" + std::to_string(i) + "]: empty prompt");
  if (image.size() != masks.image_size()) {
    throw InvalidInput("masks: mask size " + to_string(masks.image_size()) + " does not match image " +
                       to_string(image.size()));
  }
}

std::vector<Resolution> site_resolutions(InpaintBackbone& backbone) {
  std::set<Resolution> seen;
  for (auto* s : backbone.cross_attention_sites()) seen.insert(s->resolution());
  return {seen.begin(), seen.end()};
}

MatrixF gaussian(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  MatrixF m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(rng.normal());
  return m;
}

void write_attention_maps(const std::filesystem::path& dir, const std::map<std::string, MatrixF>& maps,
                          const std::map<std::string, Resolution>& resolutions, const ConcatPrompt& prompt) {
  for (const auto& [site, w] : maps) {
    const Resolution res = resolutions.at(site);
    // Padding rows after eos carry no information.
    const int last = prompt.special_token_positions.size() > 1 ? prompt.special_token_positions[1]
                                                                : static_cast<int>(w.rows()) - 1;
    for (int t = 0; t <= last && t < w.rows(); ++t) {
      RgbImage img(res.height, res.width);
      const float peak = std::max(w.row(t).maxCoeff(), 1e-12f);
      for (int y = 0; y < res.height; ++y)
        for (int x = 0; x < res.width; ++x) {
          const auto v = static_cast<std::uint8_t>(std::lround(255.0f * w(t, y * res.width + x) / peak));
          img.set(y, x, {v, v, v});
        }
      write_png(dir / ("attn_" + site + "_tok" + std::to_string(t) + ".png"), img);
    }
  }
}

}  // namespace

InpaintInputs prepare_inputs(const RgbImage& image, const MaskSet& masks, const LatentCodec& codec, Rng& rng) {
  if (masks.size() == 0) throw InvalidInput("masks: at least one mask is required");
  if (image.size() != masks.image_size()) throw InvalidInput("masks: size does not match image");
  const MaskGrid total = masks.union_grid();
  const Resolution lat = codec.latent_size(image.size());
  InpaintInputs out;
  out.mask_grid = pool_any(total, lat);
  out.mask.resize(lat.cells(), 1);
  for (int y = 0; y < lat.height; ++y)
    for (int x = 0; x < lat.width; ++x) out.mask(y * lat.width + x, 0) = out.mask_grid(y, x) ? 1.0f : 0.0f;
  out.masked_latent = codec.encode(fill_masked(image, total, Rgb{0, 0, 0}));
  out.noise = Latent{lat, gaussian(rng, lat.cells(), codec.channels())};
  return out;
}

std::string to_string(InpaintMode mode) {
  switch (mode) {
    case InpaintMode::rca_single_pass: return "rca";
    case InpaintMode::concat_single_pass: return "concat";
    case InpaintMode::repeated_per_mask: return "repeated";
  }
  return "rca";
}

InpaintMode inpaint_mode_from_string(const std::string& s) {
  if (s == "rca" || s == "rca_single_pass") return InpaintMode::rca_single_pass;
  if (s == "concat" || s == "concat_single_pass") return InpaintMode::concat_single_pass;
  if (s == "repeated" || s == "repeated_per_mask") return InpaintMode::repeated_per_mask;
  throw InvalidInput("mode: unknown inpainting mode '" + s + "' (expected rca, concat or repeated)");
}

void SamplerConfig::validate() const {
  if (steps < 1) throw InvalidInput("sampler.steps: must be >= 1");
  if (!(guidance_weight >= 0)) throw InvalidInput("sampler.guidance_weight: must be >= 0");
}

nlohmann::json to_json(const SamplerConfig& c) {
  return {{"scheme", to_string(c.scheme)}, {"steps", c.steps}, {"guidance_weight", c.guidance_weight}, {"seed", c.seed}};
}

Conditioning build_conditioning(const InpaintModel& model, const MaskSet& masks,
                                const std::vector<std::string>& prompts) {
  std::vector<RegionPrompt> rp;
  for (std::size_t i = 0; i < prompts.size(); ++i) rp.push_back({prompts[i], "", i});
  Conditioning c;
  c.prompt = concat_and_span(rp, model.text_encoder->tokenizer(), model.text_encoder->max_length());
  c.context = model.text_encoder->encode(c.prompt.token_ids);
  for (const Resolution r : site_resolutions(*model.backbone))
    c.layouts[r] = std::make_shared<const LayoutTensor>(build_layout(masks, c.prompt, r));
  return c;
}

std::string image_sha256(const RgbImage& image) {
  std::string buf = to_string(image.size());
  for (int c = 0; c < 3; ++c)
    buf.append(reinterpret_cast<const char*>(image.channel(c).data()), static_cast<std::size_t>(image.channel(c).size()));
  return sha256_hex(buf);
}

std::string config_hash(const nlohmann::json& config) { return sha256_hex(config.dump()); }

ToyInpaintStack make_toy_inpaint_stack(std::shared_ptr<const PieceTokenizer> tokenizer, int image_side,
                                       int max_tokens, std::uint64_t seed) {
  ToyDenoiserConfig cfg;
  cfg.seed = seed;
  if (image_side % cfg.latent.width != 0) throw InvalidInput("image side must be a multiple of 8");
  ToyInpaintStack s;
  s.tokenizer = std::move(tokenizer);
  s.text_encoder = std::make_unique<ToyTextEncoder>(s.tokenizer, max_tokens, cfg.context_dim, seed + 1);
  s.denoiser = std::make_unique<ToyDenoiser>(cfg);
  s.codec = std::make_unique<BlockLatentCodec>(image_side / cfg.latent.width);
  return s;
}

InpaintResult inpaint(const InpaintModel& model, const InpaintJob& job, const GuidanceObserver& observer) {
  const auto start = std::chrono::steady_clock::now();
  if (!model.backbone || !model.text_encoder || !model.codec) throw InvalidInput("inpaint: model is not loaded");
  require_masks_and_prompts(job.image, job.masks, job.prompts);
  job.sampler.validate();
  InpaintBackbone& backbone = *model.backbone;

  Rng rng(job.sampler.seed);
  const InpaintInputs inputs = prepare_inputs(job.image, job.masks, *model.codec, rng);
  if (inputs.noise.resolution != backbone.latent_resolution()) {
    throw InvalidInput("image latent " + to_string(inputs.noise.resolution) + " does not match backbone latent " +
                       to_string(backbone.latent_resolution()));
  }
  Conditioning cond = build_conditioning(model, job.masks, job.prompts);
  if (job.layouts) cond.layouts = *job.layouts;

  const bool rectified = job.mode == InpaintMode::rca_single_pass || job.mode == InpaintMode::repeated_per_mask;
  std::map<std::string, Resolution> site_res;
  for (auto* site : backbone.cross_attention_sites()) {
    site_res[site->name()] = site->resolution();
    if (!rectified) continue;
    const auto it = cond.layouts.find(site->resolution());
    if (it == cond.layouts.end() || !it->second) {
      throw InvalidInput("layouts: no layout for cross-attention resolution " + to_string(site->resolution()) +
                         " of site " + site->name());
    }
    if (it->second->resolution != site->resolution() || it->second->tokens() != cond.context.rows()) {
      throw InvalidInput("layouts: layout " + to_string(it->second->resolution) + " with " +
                         std::to_string(it->second->tokens()) + " tokens does not fit site " + site->name());
    }
  }

  std::map<std::string, MatrixF> last_maps;
  AttentionObserver<float> attn_observer;
  if (job.attention_dump_dir) {
    attn_observer = [&last_maps](const std::string& site, const ForwardContext& ctx,
                                 const AttentionResult<float>& r) {
      if (ctx.branch != Branch::conditional) return;
      MatrixF mean = MatrixF::Zero(r.weights.front().rows(), r.weights.front().cols());
      for (const auto& w : r.weights) mean += w / static_cast<float>(r.weights.size());
      last_maps[site] = mean;
    };
  }
  RcaHookHandle<float> hooks;
  if (rectified) {
    const LayoutBundle bundle = cond.layouts;
    hooks = install_hooks<float>(
        backbone, [bundle](Resolution r) { return bundle.at(r); }, HookOptions{}, attn_observer);
  }

  const MatrixF null_ctx = model.text_encoder->null_context();
  auto sampler = make_sampler(job.sampler.scheme, model.schedule);
  sampler->set_timesteps(job.sampler.steps);
  MatrixF latents = inputs.noise.data;
  const auto w = static_cast<float>(job.sampler.guidance_weight);
  std::uint64_t forward_id = 0;
  int step = 0;
  for (const int t : sampler->timesteps()) {
    DenoiserInputs in{latents, inputs.mask, inputs.masked_latent.data, null_ctx, t};
    const MatrixF eps_u = backbone.predict_noise(in, {++forward_id, Branch::unconditional});
    in.context = cond.context;
    const MatrixF eps_c = backbone.predict_noise(in, {++forward_id, Branch::conditional});
    const MatrixF eps = eps_u + w * (eps_c - eps_u);
    if (observer) observer(GuidanceStep{step, t, eps_u, eps_c, eps});
    latents = sampler->step(eps, t, latents, rng);
    ++step;
  }
  hooks.remove();

  InpaintResult result;
  result.final_latents = latents;
  result.image = model.codec->decode(Latent{inputs.noise.resolution, latents}, job.image.size());
  if (job.composite) result.image = composite(result.image, job.image, job.masks.union_grid());
  result.composited = job.composite;
  result.backbone_runs = 1;
  result.output_sha256 = image_sha256(result.image);
  if (job.attention_dump_dir) write_attention_maps(*job.attention_dump_dir, last_maps, site_res, cond.prompt);

  nlohmann::json config{{"mode", to_string(job.mode)},
                        {"sampler", to_json(job.sampler)},
                        {"composite", job.composite},
                        {"prompts", job.prompts},
                        {"model_id", backbone.model_id()},
                        {"input_sha256", image_sha256(job.image)}};
  nlohmann::json layout_ids = nlohmann::json::object();
  for (const auto& [r, l] : cond.layouts) layout_ids[to_string(r)] = l->id;
  const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  result.manifest = {{"seed", job.sampler.seed},          {"mode", to_string(job.mode)},
                     {"config", config},                  {"config_hash", config_hash(config)},
                     {"output_sha256", result.output_sha256}, {"composited", result.composited},
                     {"backbone_runs", result.backbone_runs}, {"layout_ids", layout_ids},
                     {"concat_prompt", to_json(cond.prompt)}, {"timings_ms", {{"total", ms}}}};
  return result;
}

InpaintResult inpaint_repeated(const InpaintModel& model, const InpaintJob& job, const GuidanceObserver& observer) {
  const auto start = std::chrono::steady_clock::now();
  require_masks_and_prompts(job.image, job.masks, job.prompts);
  RgbImage current = job.image;
  int passes = 0;
  nlohmann::json pass_log = nlohmann::json::array();
  for (const std::size_t idx : job.masks.draw_order()) {
    InpaintJob pass;
    pass.image = current;
    pass.masks = MaskSet({job.masks[idx]}, job.masks.image_size());
    pass.prompts = {job.prompts[idx]};
    pass.sampler = job.sampler;
    pass.sampler.seed = job.sampler.seed + static_cast<std::uint64_t>(passes);
    pass.mode = InpaintMode::rca_single_pass;
    // Each pass feeds its composited output into the next one.
    pass.composite = true;
    const InpaintResult r = inpaint(model, pass, observer);
    current = r.image;
    pass_log.push_back({{"mask_index", idx}, {"output_sha256", r.output_sha256}});
    ++passes;
  }
  InpaintResult result;
  result.image = current;
  result.composited = true;
  result.backbone_runs = passes;
  result.output_sha256 = image_sha256(result.image);
  nlohmann::json config{{"mode", to_string(InpaintMode::repeated_per_mask)},
                        {"sampler", to_json(job.sampler)},
                        {"prompts", job.prompts},
                        {"model_id", model.backbone->model_id()},
                        {"input_sha256", image_sha256(job.image)}};
  const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  result.manifest = {{"seed", job.sampler.seed},
                     {"mode", to_string(InpaintMode::repeated_per_mask)},
                     {"config", config},
                     {"config_hash", config_hash(config)},
                     {"output_sha256", result.output_sha256},
                     {"composited", true},
                     {"backbone_runs", passes},
                     {"passes", pass_log},
                     {"timings_ms", {{"total", ms}}}};
  return result;
}

InpaintResult run_inpaint_job(const InpaintModel& model, const InpaintJob& job) {
  if (job.mode == InpaintMode::repeated_per_mask) return inpaint_repeated(model, job);
  return inpaint(model, job);
}

void write_inpaint_result(const std::filesystem::path& dir, const InpaintResult& result) {
  write_png(dir / "result.png", result.image);
  write_text_file(dir / "manifest.json", result.manifest.dump(2) + "\n");
}

void write_inpaint_job(const std::filesystem::path& dir, const InpaintJob& job, const InpaintResult& result) {
  std::filesystem::create_directories(dir / "masks");
  write_png(dir / "source.png", job.image);
  for (std::size_t i = 0; i < job.masks.size(); ++i)
    write_mask_png(dir / "masks" / ("mask_" + std::to_string(i) + ".png"), job.masks[i].grid());
  InpaintResult copy = result;
  copy.manifest["prompts"] = job.prompts;
  write_inpaint_result(dir, copy);
}

// ---------------------------------------------------------------------------

void InpaintTrainConfig::validate() const {
  adapter.validate();
  if (!(learning_rate > 0)) throw InvalidInput("learning_rate: must be positive");
  if (!(warmup_fraction > 0 && warmup_fraction < 1)) throw InvalidInput("warmup_fraction: must be in (0, 1)");
  if (!(grad_clip > 0)) throw InvalidInput("grad_clip: must be positive");
  if (batch_size < 1) throw InvalidInput("batch_size: must be >= 1");
  if (epochs < 1 && max_steps < 1) throw InvalidInput("epochs: must be >= 1");
  if (!(text_drop >= 0 && text_drop <= 1)) throw InvalidInput("text_drop: must be in [0, 1]");
  if (train_timesteps < 1) throw InvalidInput("train_timesteps: must be >= 1");
}

nlohmann::json to_json(const InpaintTrainConfig& c) {
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
          {"text_drop", c.text_drop},
          {"train_timesteps", c.train_timesteps},
          {"fixed_micro_batch", c.fixed_micro_batch},
          {"seed", c.seed}};
}

bool should_drop_text(std::size_t n_masks, double probability, Rng& rng) {
  // Draw unconditionally so the random stream does not depend on n.
  const bool draw = rng.bernoulli(probability);
  return n_masks == 1 && draw;
}

TrainReport train_inpainter(const std::vector<InpaintExample>& dataset, const InpaintModel& model,
                            const InpaintTrainConfig& config) {
  config.validate();
  if (dataset.empty()) throw InvalidInput("dataset: no training examples");
  if (!model.backbone || !model.text_encoder || !model.codec) throw InvalidInput("train: model is not loaded");
  InpaintBackbone& backbone = *model.backbone;
  if (model.schedule.train_timesteps != config.train_timesteps) {
    throw InvalidInput("train_timesteps: does not match the model's noise schedule");
  }

  Rng rng(config.seed);
  backbone.inject_adapters(config.adapter, rng);
  const ParameterList<float> params = backbone.parameters();
  TrainReport report;
  report.base_checksum_before = frozen_checksum(params);
  report.trainable_parameters = trainable_parameter_count(params);

  struct Prepared {
    MatrixF x0, mask, masked_latent, fixed_noise;
    int fixed_t = 0;
    Conditioning cond;
    std::size_t n = 0;
  };
  std::vector<Prepared> data;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto& ex = dataset[i];
    require_masks_and_prompts(ex.image, ex.masks, ex.prompts);
    Prepared p;
    const InpaintInputs in = prepare_inputs(ex.image, ex.masks, *model.codec, rng);
    p.x0 = model.codec->encode(ex.image).data;
    p.mask = in.mask;
    p.masked_latent = in.masked_latent.data;
    p.fixed_noise = in.noise.data;
    p.fixed_t = static_cast<int>(rng.index(static_cast<std::size_t>(config.train_timesteps)));
    p.cond = build_conditioning(model, ex.masks, ex.prompts);
    p.n = ex.masks.size();
    data.push_back(std::move(p));
  }
  const MatrixF null_ctx = model.text_encoder->null_context();
  LayoutBundle null_layouts;
  for (const auto& [r, l] : data.front().cond.layouts)
    null_layouts[r] = std::make_shared<const LayoutTensor>(all_ones_layout(l->tokens(), r));

  const LayoutBundle* active = nullptr;
  auto hooks = install_hooks<float>(backbone, [&active](Resolution r) { return active->at(r); });

  const long batch = std::min<long>(config.batch_size, static_cast<long>(data.size()));
  const long per_epoch = (static_cast<long>(data.size()) + batch - 1) / batch;
  const long total = config.max_steps > 0 ? config.max_steps : config.epochs * per_epoch;
  AdamW<float> optimizer(params);
  std::vector<MatrixF> last_good = snapshot_trainable(params);
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t cursor = order.size();
  std::uint64_t forward_id = 0;
  const auto& out_dir = config.output_dir;

  for (long step = 0; step < total; ++step) {
    zero_grads(params);
    double loss = 0;
    for (long b = 0; b < batch; ++b) {
      if (cursor >= order.size()) {
        if (!config.fixed_micro_batch) rng.shuffle(order);
        cursor = 0;
      }
      const Prepared& ex = data[order[cursor++]];
      const MatrixF eps = config.fixed_micro_batch ? ex.fixed_noise : gaussian(rng, ex.x0.rows(), ex.x0.cols());
      const int t = config.fixed_micro_batch ? ex.fixed_t
                                             : static_cast<int>(rng.index(static_cast<std::size_t>(config.train_timesteps)));
      const bool drop = should_drop_text(ex.n, config.text_drop, rng);
      active = drop ? &null_layouts : &ex.cond.layouts;
      const DenoiserInputs in{add_noise(model.schedule, ex.x0, eps, t), ex.mask, ex.masked_latent,
                              drop ? null_ctx : ex.cond.context, t};
      const MatrixF pred = backbone.predict_noise(in, {++forward_id, Branch::conditional}, &rng);
      const MatrixF diff = pred - eps;
      loss += diff.squaredNorm() / static_cast<double>(diff.size()) / static_cast<double>(batch);
      backbone.backward(diff * (2.0f / static_cast<float>(diff.size() * batch)));
    }
    TrainStepLog entry;
    entry.step = step;
    entry.loss = loss;
    if (!std::isfinite(loss)) {
      restore_trainable(params, last_good);
      report.diverged = true;
      if (out_dir) {
        const auto ckpt = *out_dir / "last_good" / "adapter_model.safetensors";
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
    if (out_dir && config.checkpoint_every > 0 && (step + 1) % config.checkpoint_every == 0) {
      const auto ckpt = *out_dir / ("checkpoint-" + std::to_string(step + 1)) / "adapter_model.safetensors";
      save_adapter(ckpt, params, {{"base_model_id", backbone.model_id()}, {"step", step}});
      report.last_good_checkpoint = ckpt;
    }
  }
  hooks.remove();

  report.base_checksum_after = frozen_checksum(params);
  if (out_dir) {
    nlohmann::json manifest = to_json(config);
    manifest["base_model_id"] = backbone.model_id();
    manifest["target_modules"] = backbone.adapter_targets();
    manifest["trainable_parameters"] = report.trainable_parameters;
    manifest["steps"] = report.log.size();
    manifest["config_hash"] = config_hash(to_json(config));
    const auto path = *out_dir / "adapter_model.safetensors";
    save_adapter(path, params, manifest);
    write_train_log_csv(*out_dir / "train_log.csv", report.log);
    report.adapter_path = path;
  }
  return report;
}

}  // namespace mmpaint
