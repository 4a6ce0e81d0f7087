// Copyright 2026 The mmpaint Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>

#include "mmpaint/inpaint.hpp"
#include "toy_fixtures.hpp"

using namespace mmpaint;
using namespace mmpaint::testing;

namespace {

constexpr int kSide = 64;

/// Forwards to a real backbone and records every prediction by branch.
class InstrumentedBackbone : public InpaintBackbone {
 public:
  explicit InstrumentedBackbone(InpaintBackbone& inner) : inner_(inner) {}
  std::string model_id() const override { return inner_.model_id(); }
  Resolution latent_resolution() const override { return inner_.latent_resolution(); }
  int latent_channels() const override { return inner_.latent_channels(); }
  std::vector<CrossAttentionSite<float>*> cross_attention_sites() override { return inner_.cross_attention_sites(); }
  MatrixF predict_noise(const DenoiserInputs& in, const ForwardContext& ctx, Rng* rng) override {
    ++calls;
    MatrixF out = inner_.predict_noise(in, ctx, rng);
    if (nan_after >= 0 && calls > nan_after) out.setConstant(std::numeric_limits<float>::quiet_NaN());
    (ctx.branch == Branch::conditional ? last_cond : last_uncond) = out;
    return out;
  }
  void backward(const MatrixF& g) override { inner_.backward(g); }
  ParameterList<float> parameters() override { return inner_.parameters(); }
  void inject_adapters(const AdapterConfig& c, Rng& rng) override { inner_.inject_adapters(c, rng); }
  std::vector<std::string> adapter_targets() const override { return inner_.adapter_targets(); }

  int calls = 0;
  int nan_after = -1;
  MatrixF last_cond, last_uncond;

 private:
  InpaintBackbone& inner_;
};

InpaintJob two_mask_job(std::uint64_t seed = 3) {
  InpaintJob job;
  job.image = toy_image(kSide, 11);
  job.masks = box_masks(kSide, {{0, 0, 24, 24}, {32, 30, 60, 62}});
  job.prompts = {"a red boat", "a tall green tree"};
  job.sampler.steps = 10;
  job.sampler.seed = seed;
  return job;
}

bool outside_union_identical(const RgbImage& out, const RgbImage& src, const MaskSet& masks) {
  const MaskGrid u = masks.union_grid();
  for (int y = 0; y < src.height(); ++y)
    for (int x = 0; x < src.width(); ++x)
      if (!u(y, x) && !(out.at(y, x) == src.at(y, x))) return false;
  return true;
}

}  // namespace

TEST_CASE("prepare_inputs") {
  const auto stack = make_toy_inpaint_stack(toy_tokenizer(), kSide);
  Rng rng(1);
  const RgbImage img = toy_image(kSide, 2);
  SUBCASE("empty mask set is rejected") { CHECK_THROWS_AS(prepare_inputs(img, MaskSet{}, *stack.codec, rng), InvalidInput); }
  SUBCASE("disjoint masks: total mask is the union") {
    const auto masks = box_masks(kSide, {{0, 0, 16, 16}, {40, 40, 56, 56}});
    const auto in = prepare_inputs(img, masks, *stack.codec, rng);
    CHECK(masks.union_area() == masks[0].area_px() + masks[1].area_px());
    // Block-aligned boxes: 2x2 + 2x2 latent cells.
    CHECK(in.mask.sum() == 8.0f);
  }
  SUBCASE("latent cell active iff any covered pixel is masked") {
    Rng r(9);
    for (int trial = 0; trial < 50; ++trial) {
      const int x0 = static_cast<int>(r.index(60)), y0 = static_cast<int>(r.index(60));
      const int x1 = x0 + 1 + static_cast<int>(r.index(static_cast<std::size_t>(kSide - x0)));
      const int y1 = y0 + 1 + static_cast<int>(r.index(static_cast<std::size_t>(kSide - y0)));
      const auto masks = box_masks(kSide, {{x0, y0, x1, y1}});
      const auto in = prepare_inputs(img, masks, *stack.codec, rng);
      const MaskGrid u = masks.union_grid();
      for (int cy = 0; cy < 8; ++cy)
        for (int cx = 0; cx < 8; ++cx) {
          bool any = false;
          for (int y = cy * 8; y < cy * 8 + 8; ++y)
            for (int x = cx * 8; x < cx * 8 + 8; ++x) any = any || u(y, x);
          REQUIRE((in.mask(cy * 8 + cx, 0) == 1.0f) == any);
        }
    }
  }
  SUBCASE("masked image zeroes the union before encoding") {
    const auto masks = box_masks(kSide, {{0, 0, 8, 8}});
    const auto in = prepare_inputs(img, masks, *stack.codec, rng);
    CHECK(in.masked_latent.data(0, 0) == -1.0f);
    CHECK(in.masked_latent.data(1, 0) == stack.codec->encode(img).data(1, 0));
  }
}

TEST_CASE("noise schedule and samplers") {
  const auto sched = NoiseSchedule::scaled_linear();
  CHECK(sched.alphas_cumprod.size() == 1000);
  CHECK(sched.alpha_bar(0) == doctest::Approx(1 - 0.00085));
  Rng rng(4);
  MatrixF x0(8, 4), eps(8, 4);
  for (Eigen::Index i = 0; i < x0.size(); ++i) {
    x0.data()[i] = static_cast<float>(rng.normal());
    eps.data()[i] = static_cast<float>(rng.normal());
  }
  SUBCASE("add_noise") {
    const MatrixF xt = add_noise(sched, x0, eps, 500);
    const double ab = sched.alpha_bar(500);
    CHECK((xt - (std::sqrt(ab) * x0.cast<double>() + std::sqrt(1 - ab) * eps.cast<double>()).cast<float>())
              .cwiseAbs()
              .maxCoeff() < 1e-6f);
  }
  SUBCASE("PNDM timesteps repeat the second entry") {
    PndmSampler s(sched);
    s.set_timesteps(50);
    const auto& ts = s.timesteps();
    REQUIRE(ts.size() == 51);
    CHECK(ts[0] == 981);
    CHECK(ts[1] == 961);
    CHECK(ts[2] == 961);
    CHECK(ts[3] == 941);
    CHECK(ts.back() == 1);
  }
  SUBCASE("both schemes recover x0 given the exact noise") {
    for (auto scheme : {SamplerScheme::inference_scheme, SamplerScheme::training_scheme}) {
      auto s = make_sampler(scheme, sched);
      s->set_timesteps(scheme == SamplerScheme::inference_scheme ? 50 : 1);
      MatrixF x = add_noise(sched, x0, eps, s->timesteps().front());
      for (int t : s->timesteps()) {
        const double ab = sched.alpha_bar(t);
        const MatrixF e = ((x.cast<double>() - std::sqrt(ab) * x0.cast<double>()) / std::sqrt(1 - ab)).cast<float>();
        x = s->step(e, t, x, rng);
      }
      CHECK((x - x0).cwiseAbs().maxCoeff() < 2e-3f);
    }
  }
}

TEST_CASE("toy denoiser adapter gradients match finite differences") {
  auto stack = make_toy_inpaint_stack(toy_tokenizer(), kSide);
  Rng rng(5);
  stack.denoiser->inject_adapters({4, 4.0, 0.0, ""}, rng);
  auto params = stack.denoiser->parameters();
  for (auto* p : params)
    if (p->trainable)
      for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value.data()[i] = 0.3f * static_cast<float>(rng.normal());

  const auto job = two_mask_job();
  const auto model = stack.model();
  const auto cond = build_conditioning(model, job.masks, job.prompts);
  const auto in0 = prepare_inputs(job.image, job.masks, *stack.codec, rng);
  const DenoiserInputs in{in0.noise.data, in0.mask, in0.masked_latent.data, cond.context, 400};
  auto hooks = install_hooks<float>(*stack.denoiser, [&](Resolution r) { return cond.layouts.at(r); });
  MatrixF R(64, 4);
  for (Eigen::Index i = 0; i < R.size(); ++i) R.data()[i] = static_cast<float>(rng.normal());
  std::uint64_t id = 0;
  auto loss = [&] {
    return static_cast<double>((stack.denoiser->predict_noise(in, {++id, Branch::conditional}).array() * R.array()).sum());
  };
  zero_grads(params);
  loss();
  stack.denoiser->backward(R);
  int checked = 0;
  for (auto* p : params) {
    if (!p->trainable) continue;
    for (int k = 0; k < 3; ++k) {
      const auto i = static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(p->value.size())));
      const float keep = p->value.data()[i];
      const float h = 1e-2f;
      p->value.data()[i] = keep + h;
      const double lp = loss();
      p->value.data()[i] = keep - h;
      const double lm = loss();
      p->value.data()[i] = keep;
      const double numeric = (lp - lm) / (2 * h);
      const double analytic = p->grad.data()[i];
      CHECK(std::abs(analytic - numeric) <= 2e-2 * std::max({std::abs(analytic), std::abs(numeric), 1.0}));
      ++checked;
    }
  }
  CHECK(checked == 48);
}

TEST_CASE("inpaint") {
  auto stack = make_toy_inpaint_stack(toy_tokenizer(), kSide);
  InstrumentedBackbone inst(*stack.denoiser);
  InpaintModel model = stack.model();
  model.backbone = &inst;

  SUBCASE("guided prediction is uncond + w (cond - uncond) at every step") {
    auto job = two_mask_job();
    int steps = 0;
    inpaint(model, job, [&](const GuidanceStep& g) {
      const MatrixF expected = inst.last_uncond + 7.5f * (inst.last_cond - inst.last_uncond);
      CHECK((g.guided - expected).cwiseAbs().maxCoeff() <= 1e-5f);
      ++steps;
    });
    CHECK(steps == 11);
    CHECK(inst.calls == 22);
  }
  SUBCASE("guidance weight 0 ignores the prompts") {
    auto a = two_mask_job();
    auto b = two_mask_job();
    a.sampler.guidance_weight = b.sampler.guidance_weight = 0;
    b.prompts = {"a white cloud", "a small house"};
    CHECK(inpaint(model, a).output_sha256 == inpaint(model, b).output_sha256);
  }
  SUBCASE("concat mode equals rca with all-ones layouts") {
    auto rca = two_mask_job();
    LayoutBundle ones;
    for (auto* s : inst.cross_attention_sites())
      ones[s->resolution()] = std::make_shared<const LayoutTensor>(all_ones_layout(24, s->resolution()));
    rca.layouts = ones;
    auto concat = two_mask_job();
    concat.mode = InpaintMode::concat_single_pass;
    const auto r1 = inpaint(model, rca);
    const auto r2 = inpaint(model, concat);
    CHECK((r1.final_latents - r2.final_latents).cwiseAbs().maxCoeff() <= 1e-5f);
  }
  SUBCASE("rectification changes the output and hooks are removed afterwards") {
    auto rca = two_mask_job();
    auto concat = two_mask_job();
    concat.mode = InpaintMode::concat_single_pass;
    const auto r1 = inpaint(model, rca);
    for (auto* s : inst.cross_attention_sites()) CHECK_FALSE(static_cast<bool>(s->processor()));
    const auto r2 = inpaint(model, concat);
    CHECK((r1.final_latents - r2.final_latents).cwiseAbs().maxCoeff() > 1e-4f);
  }
  SUBCASE("fixed seed reproduces the output hash; compositing keeps unmasked pixels") {
    const auto job = two_mask_job(17);
    const auto r1 = inpaint(model, job);
    const auto r2 = inpaint(model, job);
    CHECK(r1.output_sha256 == r2.output_sha256);
    CHECK(r1.composited);
    CHECK(outside_union_identical(r1.image, job.image, job.masks));
    CHECK(r1.manifest["config_hash"] == r2.manifest["config_hash"]);
    CHECK(r1.manifest["seed"] == 17);
  }
  SUBCASE("layout/backbone mismatch fails before any denoising step") {
    auto job = two_mask_job();
    LayoutBundle partial;
    partial[{8, 8}] = std::make_shared<const LayoutTensor>(all_ones_layout(24, {8, 8}));
    job.layouts = partial;
    CHECK_THROWS_AS(inpaint(model, job), InvalidInput);
    partial[{4, 4}] = std::make_shared<const LayoutTensor>(all_ones_layout(20, {4, 4}));
    job.layouts = partial;
    CHECK_THROWS_AS(inpaint(model, job), InvalidInput);
    CHECK(inst.calls == 0);
  }
  SUBCASE("bad requests") {
    auto job = two_mask_job();
    job.prompts.pop_back();
    CHECK_THROWS_AS(inpaint(model, job), InvalidInput);
    job = two_mask_job();
    job.sampler.steps = 0;
    CHECK_THROWS_AS(inpaint(model, job), InvalidInput);
  }
  SUBCASE("attention maps are dumped on request") {
    auto job = two_mask_job();
    job.sampler.steps = 2;
    const auto dir = std::filesystem::temp_directory_path() / "mmpaint_attn";
    std::filesystem::remove_all(dir);
    job.attention_dump_dir = dir;
    inpaint(model, job);
    CHECK(std::filesystem::exists(dir / "attn_down.attn2_tok0.png"));
    CHECK(std::filesystem::exists(dir / "attn_mid.attn2_tok1.png"));
  }
}

TEST_CASE("inpaint_repeated") {
  auto stack = make_toy_inpaint_stack(toy_tokenizer(), kSide);
  InstrumentedBackbone inst(*stack.denoiser);
  InpaintModel model = stack.model();
  model.backbone = &inst;

  SUBCASE("one pass per mask, unmasked pixels preserved") {
    auto job = two_mask_job();
    job.mode = InpaintMode::repeated_per_mask;
    const auto r = run_inpaint_job(model, job);
    CHECK(r.backbone_runs == 2);
    CHECK(inst.calls == 2 * 2 * 11);
    CHECK(outside_union_identical(r.image, job.image, job.masks));
    // Larger mask first.
    CHECK(r.manifest["passes"][0]["mask_index"] == 1);
  }
  SUBCASE("n = 1 is the single-mask procedure") {
    auto job = two_mask_job();
    job.masks = box_masks(kSide, {{8, 8, 40, 40}});
    job.prompts = {"a red boat"};
    const auto single = inpaint(model, job);
    job.mode = InpaintMode::repeated_per_mask;
    const auto repeated = inpaint_repeated(model, job);
    CHECK(repeated.backbone_runs == 1);
    CHECK(single.output_sha256 == repeated.output_sha256);
  }
}

TEST_CASE("text drop applies to single-mask examples only") {
  Rng rng(21);
  int fired_multi = 0, fired_single = 0;
  for (int i = 0; i < 10000; ++i) fired_multi += should_drop_text(2, 0.1, rng);
  for (int i = 0; i < 10000; ++i) fired_single += should_drop_text(1, 0.1, rng);
  CHECK(fired_multi == 0);
  CHECK(fired_single > 850);
  CHECK(fired_single < 1150);
}

TEST_CASE("train_inpainter overfits a fixed micro-batch") {
  auto stack = make_toy_inpaint_stack(toy_tokenizer(), kSide);
  const auto model = stack.model();
  std::vector<InpaintExample> data;
  data.push_back({toy_image(kSide, 1), box_masks(kSide, {{0, 0, 24, 24}, {32, 30, 60, 62}}), {"a red boat", "a tall tree"}});
  data.push_back({toy_image(kSide, 2), box_masks(kSide, {{8, 8, 40, 48}}), {"a small white house"}});
  data.push_back({toy_image(kSide, 3), box_masks(kSide, {{16, 0, 48, 20}}), {"a white cloud"}});
  data.push_back({toy_image(kSide, 4), box_masks(kSide, {{0, 32, 30, 64}, {34, 34, 64, 64}}), {"a boat", "a tree"}});

  InpaintTrainConfig cfg;
  cfg.max_steps = 300;
  cfg.fixed_micro_batch = true;
  cfg.learning_rate = 1e-2;
  cfg.seed = 5;
  const auto dir = std::filesystem::temp_directory_path() / "mmpaint_train_inpaint";
  std::filesystem::remove_all(dir);
  cfg.output_dir = dir;
  const auto report = train_inpainter(data, model, cfg);

  REQUIRE(report.log.size() == 300);
  MESSAGE("initial loss " << report.log.front().loss << ", final " << report.log.back().loss);
  CHECK(report.log.back().loss <= 0.5 * report.log.front().loss);
  CHECK(report.base_checksum_before == report.base_checksum_after);
  for (const auto& e : report.log) CHECK(e.clipped_grad_norm <= 1.0 + 1e-6);
  CHECK(report.log[0].lr == 0.0);
  CHECK(report.log[3].lr == cfg.learning_rate);

  // r (in + out) per adapted projection: to_q 32->16, to_k 32->16, to_v 32->16, to_out 16->32, two sites.
  CHECK(report.trainable_parameters == 2 * 16 * ((32 + 16) * 4));
  CHECK(std::filesystem::exists(dir / "adapter_model.safetensors"));
  CHECK(std::filesystem::exists(dir / "train_log.csv"));
  const auto manifest = read_adapter_manifest(dir / "adapter_model.safetensors");
  CHECK(manifest["rank"] == 16);
  CHECK(manifest["base_model_id"] == "toy-denoiser-v1");

  // The saved adapter reloads into a fresh backbone with identical outputs.
  auto fresh = make_toy_inpaint_stack(toy_tokenizer(), kSide);
  Rng rng(0);
  fresh.denoiser->inject_adapters(cfg.adapter, rng);
  load_adapter(dir / "adapter_model.safetensors", fresh.denoiser->parameters());
  auto job = two_mask_job();
  job.sampler.steps = 3;
  CHECK(inpaint(fresh.model(), job).output_sha256 == inpaint(model, job).output_sha256);
}

TEST_CASE("train_inpainter aborts on NaN with the last good adapter") {
  auto stack = make_toy_inpaint_stack(toy_tokenizer(), kSide);
  InstrumentedBackbone inst(*stack.denoiser);
  InpaintModel model = stack.model();
  model.backbone = &inst;
  inst.nan_after = 5;
  std::vector<InpaintExample> data{{toy_image(kSide, 1), box_masks(kSide, {{0, 0, 24, 24}}), {"a red boat"}}};
  InpaintTrainConfig cfg;
  cfg.max_steps = 20;
  const auto dir = std::filesystem::temp_directory_path() / "mmpaint_train_nan";
  std::filesystem::remove_all(dir);
  cfg.output_dir = dir;
  const auto report = train_inpainter(data, model, cfg);
  CHECK(report.diverged);
  CHECK(report.log.size() == 5);
  CHECK(report.last_good_step == 4);
  REQUIRE(report.last_good_checkpoint);
  CHECK(std::filesystem::exists(*report.last_good_checkpoint));
}
