// Copyright 2026 The mmpaint Authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance run: one PASS/FAIL line per primary criterion. Exit status is
// non-zero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "metric_oracles.hpp"
#include "mmpaint/annotation.hpp"
#include "mmpaint/hashing.hpp"
#include "mmpaint/inpaint.hpp"
#include "mmpaint/metrics.hpp"
#include "mmpaint/pipeline.hpp"
#include "mmpaint/prompt_codec.hpp"
#include "mmpaint/prompt_layout.hpp"
#include "mmpaint/promptgen.hpp"
#include "mmpaint/rca.hpp"
#include "rca_oracles.hpp"
#include "toy_fixtures.hpp"

using namespace mmpaint;
using namespace mmpaint::testing;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok && pass) {
      pass = false;
      detail.str("");
      detail << what;
    }
  }
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(3) << v;
  return s.str();
}

// ---- attention -------------------------------------------------------------

void rca_equivalence(Outcome& o) {
  const auto t0 = Clock::now();
  Rng rng(20260);
  int instances = 0;
  double worst = 0;
  long zero_checks = 0;
  for (; instances < 1200 && o.pass; ++instances) {
    const int tokens = 1 + static_cast<int>(rng.index(8));
    const Resolution res{1 + static_cast<int>(rng.index(8)), 1 + static_cast<int>(rng.index(8))};
    const int d = 1 + static_cast<int>(rng.index(8));
    const int heads = 1 + static_cast<int>(rng.index(3));
    const auto in = random_inputs<double>(rng, tokens, res, d, heads);
    const auto layout = random_layout(rng, tokens, res);
    const auto got = rca_attention(in, layout);
    const auto want = masked_softmax_oracle(in, layout);
    for (int h = 0; h < heads; ++h) {
      worst = std::max({worst, (got.weights[h] - want.weights[h]).cwiseAbs().maxCoeff(),
                        (got.output[h] - want.output[h]).cwiseAbs().maxCoeff()});
      for (int t = 0; t < tokens; ++t)
        for (int c = 0; c < res.cells(); ++c)
          if (!layout.bits(t, c)) {
            ++zero_checks;
            o.require(got.weights[h](t, c) == 0.0, "disabled entry received non-zero weight");
          }
    }
  }
  // Single precision with large logits: disabled entries still get exactly zero.
  for (int trial = 0; trial < 200 && o.pass; ++trial) {
    auto in = random_inputs<float>(rng, 6, {4, 4}, 4, 2);
    for (auto& k : in.keys) k *= 60.0f;
    const auto layout = random_layout(rng, 6, {4, 4});
    const auto got = rca_attention(in, layout);
    for (int h = 0; h < 2; ++h)
      for (int t = 0; t < 6; ++t)
        for (int c = 0; c < 16; ++c)
          if (!layout.bits(t, c)) {
            ++zero_checks;
            o.require(got.weights[h](t, c) == 0.0f, "float32 disabled entry received non-zero weight");
          }
  }
  const double secs = seconds_since(t0);
  o.require(worst <= 1e-6, "max deviation " + fmt(worst) + " > 1e-6");
  o.require(secs < 30, "runtime " + fmt(secs) + " s >= 30 s");
  if (o.pass)
    o.detail << instances << " instances, max deviation " << fmt(worst) << ", " << zero_checks
             << " disabled entries exactly zero, " << fmt(secs) << " s";
}

void reduction_laws(Outcome& o) {
  Rng rng(77);
  double worst = 0;
  for (int trial = 0; trial < 300; ++trial) {
    const int tokens = 1 + static_cast<int>(rng.index(8));
    const Resolution res{1 + static_cast<int>(rng.index(8)), 1 + static_cast<int>(rng.index(8))};
    const auto in = random_inputs<double>(rng, tokens, res, 1 + static_cast<int>(rng.index(6)), 2);
    const auto a = rca_attention(in, all_ones_layout(tokens, res));
    const auto b = vanilla_attention(in);
    for (int h = 0; h < 2; ++h) worst = std::max(worst, (a.output[h] - b.output[h]).cwiseAbs().maxCoeff());
  }
  o.require(worst <= 1e-6, "all-ones layout deviates from vanilla by " + fmt(worst));

  const PieceTokenizer tok = PieceTokenizer::train({"a red boat on the water", "tall green tree"});
  int single = 0;
  for (int trial = 0; trial < 300 && o.pass; ++trial) {
    const Resolution target{1 + static_cast<int>(rng.index(8)), 1 + static_cast<int>(rng.index(8))};
    const int factor = 1 + static_cast<int>(rng.index(3));
    const Resolution size{target.height * factor, target.width * factor};
    MaskGrid g(size.height, size.width);
    for (int y = 0; y < size.height; ++y)
      for (int x = 0; x < size.width; ++x) g(y, x) = rng.bernoulli(0.3);
    g(static_cast<int>(rng.index(size.height)), static_cast<int>(rng.index(size.width))) = true;
    const MaskSet set({Mask::from_grid(g)}, size);
    const auto cp = concat_and_span({{"a red boat", "red", 0}}, tok, 4 + static_cast<int>(rng.index(12)));
    for (const Resolution r : {size, target}) {
      o.require(build_layout(set, cp, r).bits.all(), "single-mask layout is not all ones");
      ++single;
    }
  }
  if (o.pass)
    o.detail << "300 all-ones instances, max deviation " << fmt(worst) << "; " << single
             << " single-mask layouts all ones";
}

void layout_semantics(Outcome& o) {
  const PieceTokenizer tok =
      PieceTokenizer::train({"red big boat. tall green tree", "a small house near the sea", "green tree. red boat"});
  const std::vector<std::string> texts{"red big boat", "tall green tree", "a small house"};
  Rng rng(4242);
  long cells = 0, overlap_cells = 0;
  for (int trial = 0; trial < 500 && o.pass; ++trial) {
    const Resolution size{1 + static_cast<int>(rng.index(8)), 1 + static_cast<int>(rng.index(8))};
    const int n = 1 + static_cast<int>(rng.index(3));
    std::vector<Mask> masks;
    std::vector<RegionPrompt> prompts;
    for (int i = 0; i < n; ++i) {
      MaskGrid g(size.height, size.width);
      for (int y = 0; y < size.height; ++y)
        for (int x = 0; x < size.width; ++x) g(y, x) = rng.bernoulli(0.4);
      g(static_cast<int>(rng.index(size.height)), static_cast<int>(rng.index(size.width))) = true;
      masks.push_back(Mask::from_grid(g));
      prompts.push_back({texts[i], default_palette()[i].name, static_cast<std::size_t>(i)});
    }
    const int max_len = 16;
    const MaskSet set(masks, size);
    const auto cp = concat_and_span(prompts, tok, max_len);
    const auto layout = build_layout(set, cp, size);
    std::vector<int> owner(max_len, -1);
    for (int i = 0; i < n; ++i)
      for (int t = cp.spans[i].begin; t < cp.spans[i].end; ++t) owner[t] = i;
    for (int y = 0; y < size.height; ++y)
      for (int x = 0; x < size.width; ++x) {
        std::set<int> covering;
        for (int i = 0; i < n; ++i)
          if (masks[i].grid()(y, x)) covering.insert(i);
        overlap_cells += covering.size() > 1;
        for (int t = 0; t < max_len; ++t) {
          // Tokens outside every span stay on; a cell outside all masks keeps
          // every token; otherwise a span is on iff its mask covers the cell.
          const bool want = owner[t] < 0 || covering.empty() || covering.count(owner[t]) > 0;
          o.require(layout.at(t, y, x) == want, "cell (" + std::to_string(y) + "," + std::to_string(x) +
                                                    ") token " + std::to_string(t) + " disagrees");
        }
        ++cells;
      }
  }
  if (o.pass) o.detail << cells << "/" << cells << " cells match (" << overlap_cells << " in overlaps), 500 instances";
}

void gradient_checks(Outcome& o) {
  Rng rng(99);
  double worst = 0;
  int cases = 0;
  // Every 2-token layout over a 2x2 grid that leaves each cell one token.
  for (int code = 0; code < 81; ++code) {
    LayoutTensor layout = all_ones_layout(2, {2, 2});
    int c = code;
    for (int cell = 0; cell < 4; ++cell, c /= 3) {
      const int state = c % 3;  // 0 both, 1 token 0 only, 2 token 1 only
      layout.bits(0, cell) = state != 2;
      layout.bits(1, cell) = state != 1;
    }
    for (int rep = 0; rep < 2; ++rep) {
      const auto in = random_inputs<double>(rng, 2, {2, 2}, 3, 1);
      std::vector<MatrixD> R{MatrixD::Random(4, 3)};
      auto loss = [&](const AttentionInputs<double>& x) {
        return (rca_attention(x, layout).output[0].array() * R[0].array()).sum();
      };
      const auto fwd = rca_attention(in, layout);
      const auto g = attention_backward(in, fwd.weights, R);
      const double step = 1e-4;
      auto probe = [&](std::vector<MatrixD> AttentionInputs<double>::*field, const MatrixD& analytic) {
        for (Eigen::Index i = 0; i < (in.*field)[0].size(); ++i) {
          AttentionInputs<double> plus = in, minus = in;
          (plus.*field)[0].data()[i] += step;
          (minus.*field)[0].data()[i] -= step;
          const double fd = (loss(plus) - loss(minus)) / (2 * step);
          const double a = analytic.data()[i];
          worst = std::max(worst, std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-3}));
        }
      };
      probe(&AttentionInputs<double>::queries, g.queries[0]);
      probe(&AttentionInputs<double>::keys, g.keys[0]);
      probe(&AttentionInputs<double>::values, g.values[0]);
      ++cases;
    }
  }
  o.require(worst <= 1e-2, "max relative error " + fmt(worst) + " > 1e-2");
  if (o.pass) o.detail << cases << " cases over all 81 admissible layouts, max relative error " << fmt(worst);
}

// ---- codec -----------------------------------------------------------------

std::string random_text(Rng& rng) {
  static const std::string alphabet = "abcdefghijklmnopqrstuvwxyz ABCXYZ0123456789.,;:'\"!?-&<>/()";
  std::string s;
  const std::size_t len = 1 + rng.index(30);
  while (s.size() < len) s.push_back(alphabet[rng.index(alphabet.size())]);
  s.erase(0, s.find_first_not_of(' '));
  if (s.empty()) s = "x";
  s.erase(s.find_last_not_of(' ') + 1);
  return s;
}

void codec(Outcome& o) {
  Rng rng(10000);
  const auto& palette = default_palette();
  int roundtrips = 0;
  for (; roundtrips < 10000 && o.pass; ++roundtrips) {
    const int n = 1 + static_cast<int>(rng.index(5));
    std::vector<std::size_t> colors(palette.size());
    for (std::size_t i = 0; i < colors.size(); ++i) colors[i] = i;
    rng.shuffle(colors);
    std::vector<RegionPrompt> prompts;
    std::vector<ColorAssignment> expected;
    for (int i = 0; i < n; ++i) {
      prompts.push_back({random_text(rng), palette[colors[i]].name, static_cast<std::size_t>(i)});
      expected.push_back({static_cast<std::size_t>(i), palette[colors[i]].name});
    }
    std::vector<RegionPrompt> order = prompts;
    rng.shuffle(order);
    const auto parsed = parse_answer(encode_answer(order).raw, expected);
    o.require(parsed.all_ok() && parsed.prompts() == prompts, "parse(encode(x)) != x at example " +
                                                                  std::to_string(roundtrips));
  }

  // Enumerated recovery oracle: every combination of segment forms for up to
  // three colors, in every order.
  enum Form { ok, missing, open_only, close_only, empty_body };
  const std::vector<std::string> names{"red", "green", "blue"};
  const std::vector<std::string> words{"a boat", "the tall tree", "old house"};
  int combos = 0;
  for (int n = 1; n <= 3 && o.pass; ++n) {
    int total = 1;
    for (int i = 0; i < n; ++i) total *= 5;
    std::vector<int> perm(n);
    for (int code = 0; code < total; ++code) {
      std::vector<Form> forms(n);
      for (int i = 0, c = code; i < n; ++i, c /= 5) forms[i] = static_cast<Form>(c % 5);
      for (int i = 0; i < n; ++i) perm[i] = i;
      do {
        std::string raw;
        for (int i : perm) {
          const std::string& c = names[i];
          std::string piece;
          switch (forms[i]) {
            case ok: piece = "<" + c + "> " + words[i] + " </" + c + ">"; break;
            case missing: break;
            case open_only: piece = "<" + c + "> " + words[i]; break;
            case close_only: piece = words[i] + " </" + c + ">"; break;
            case empty_body: piece = "<" + c + ">  </" + c + ">"; break;
          }
          if (!piece.empty()) raw += (raw.empty() ? "" : " ") + piece;
        }
        const auto parsed = parse_answer(raw, std::vector<std::string>(names.begin(), names.begin() + n));
        for (int i = 0; i < n; ++i) {
          const SegmentStatus want = forms[i] == ok          ? SegmentStatus::ok
                                     : forms[i] == missing   ? SegmentStatus::missing
                                     : forms[i] == open_only ? SegmentStatus::malformed_recovered
                                                             : SegmentStatus::malformed;
          o.require(parsed.segments[i].status == want, "status mismatch for '" + raw + "' segment " + names[i]);
          if (forms[i] == ok) o.require(parsed.segments[i].prompt.text == words[i], "text mismatch for '" + raw + "'");
        }
        ++combos;
      } while (std::next_permutation(perm.begin(), perm.end()));
    }
  }
  if (o.pass) o.detail << roundtrips << " round trips exact; " << combos << " enumerated answers match the status oracle";
}

// ---- loss and training -----------------------------------------------------

void loss_contract(Outcome& o) {
  double worst = 0;
  for (int v : {2, 3, 10, 97, 1000, 32000}) {
    const MatrixF logits = MatrixF::Constant(4, v, 1.5f);
    const auto r = lm_loss(logits, {0, v - 1, 1, 2}, {false, true, true, false});
    worst = std::max(worst, std::abs(r.value - std::log(static_cast<double>(v))));
  }
  o.require(worst <= 1e-6, "uniform-logit loss deviates from ln V by " + fmt(worst));
  Rng rng(5);
  int trials = 0;
  for (; trials < 500 && o.pass; ++trials) {
    const int len = 2 + static_cast<int>(rng.index(12));
    const int v = 2 + static_cast<int>(rng.index(40));
    MatrixF logits(len, v);
    for (Eigen::Index i = 0; i < logits.size(); ++i) logits.data()[i] = static_cast<float>(rng.normal() * 4);
    std::vector<int> labels(len);
    std::vector<bool> mask(len);
    for (int p = 0; p < len; ++p) {
      labels[p] = static_cast<int>(rng.index(v));
      mask[p] = rng.bernoulli(0.5);
    }
    mask[rng.index(len)] = true;
    MatrixF perturbed = logits;
    for (int p = 0; p < len; ++p)
      if (!mask[p])
        for (int k = 0; k < v; ++k) perturbed(p, k) = static_cast<float>(rng.normal() * 1000);
    for (auto red : {LossReduction::mean, LossReduction::sum})
      o.require(lm_loss(perturbed, labels, mask, red).value == lm_loss(logits, labels, mask, red).value,
                "masked-out perturbation changed the loss");
  }
  if (o.pass) o.detail << "|loss - ln V| <= " << fmt(worst) << " for V up to 32000; " << trials
                       << " masked-out perturbations leave the loss bit-identical";
}

struct SmokeResult {
  double initial = 0, final_loss = 0, max_clipped = 0, secs = 0;
  std::size_t steps = 0;
  bool checksum_same = false;
};

SmokeResult summarize(const TrainReport& r, Clock::time_point t0) {
  SmokeResult s;
  s.secs = seconds_since(t0);
  s.steps = r.log.size();
  if (!r.log.empty()) {
    s.initial = r.log.front().loss;
    s.final_loss = r.log.back().loss;
  }
  for (const auto& e : r.log) s.max_clipped = std::max(s.max_clipped, e.clipped_grad_norm);
  s.checksum_same = r.base_checksum_before == r.base_checksum_after && !r.base_checksum_before.empty();
  return s;
}

void training_smoke(Outcome& o) {
  constexpr int side = 64;
  const auto tok = toy_tokenizer();
  struct S {
    std::uint64_t seed;
    std::vector<BBox> boxes;
    std::vector<std::string> prompts;
  };
  const std::vector<S> samples{{1, {{0, 0, 24, 24}, {32, 30, 60, 62}}, {"a red boat", "a tall tree"}},
                               {2, {{8, 8, 40, 48}}, {"a small white house"}},
                               {3, {{16, 0, 48, 20}}, {"a white cloud"}},
                               {4, {{0, 32, 30, 64}, {34, 34, 64, 64}}, {"a boat", "a tree"}},
                               {5, {{0, 0, 64, 20}, {40, 0, 64, 64}}, {"the sky", "the water"}},
                               {6, {{20, 20, 44, 44}}, {"a green tree"}},
                               {7, {{0, 0, 30, 30}, {34, 0, 64, 30}, {0, 34, 64, 64}}, {"a cloud", "a boat", "a house"}},
                               {8, {{10, 40, 60, 60}}, {"a wooden boat"}}};

  // Prompt generator: one batch holding all eight examples.
  std::vector<PromptGenExample> pg_data;
  for (const auto& s : samples)
    pg_data.push_back(assemble_example(toy_image(side, s.seed), box_masks(side, s.boxes), s.prompts, default_palette(),
                                       s.seed, *tok, tok->image_id()));
  ToyVlm vlm(tok);
  PromptGenTrainConfig pcfg;
  pcfg.max_steps = 300;
  pcfg.batch_size = 8;
  pcfg.learning_rate = 1e-2;
  pcfg.seed = 3;
  auto t0 = Clock::now();
  const auto pg = summarize(train_promptgen(pg_data, vlm, pcfg), t0);

  auto stack = make_toy_inpaint_stack(tok, side);
  std::vector<InpaintExample> ip_data;
  for (std::size_t i = 0; i < 4; ++i)
    ip_data.push_back({toy_image(side, samples[i].seed), box_masks(side, samples[i].boxes), samples[i].prompts});
  InpaintTrainConfig icfg;
  icfg.max_steps = 300;
  icfg.fixed_micro_batch = true;
  icfg.learning_rate = 1e-2;
  icfg.seed = 5;
  t0 = Clock::now();
  const auto ip = summarize(train_inpainter(ip_data, stack.model(), icfg), t0);

  for (const auto& [name, r, bound] : {std::tuple{"promptgen", pg, 0.5}, std::tuple{"inpainter", ip, 1.0}}) {
    const std::string n = name;
    o.require(r.steps <= 300 && r.steps > 0, n + ": ran " + std::to_string(r.steps) + " steps");
    o.require(r.final_loss <= 0.5 * r.initial, n + ": final loss " + fmt(r.final_loss) + " > 0.5 x " + fmt(r.initial));
    o.require(r.secs < 120, n + ": " + fmt(r.secs) + " s >= 120 s");
    o.require(r.checksum_same, n + ": base weights changed");
    o.require(r.max_clipped <= bound + 1e-6, n + ": clipped grad norm " + fmt(r.max_clipped) + " > " + fmt(bound));
  }
  if (o.pass)
    o.detail << "promptgen " << fmt(pg.initial) << " -> " << fmt(pg.final_loss) << " in " << pg.steps << " steps ("
             << fmt(pg.secs) << " s, max clipped norm " << fmt(pg.max_clipped) << "); inpainter " << fmt(ip.initial)
             << " -> " << fmt(ip.final_loss) << " in " << ip.steps << " steps (" << fmt(ip.secs)
             << " s, max clipped norm " << fmt(ip.max_clipped) << "); base checksums unchanged";
}

// ---- guidance --------------------------------------------------------------

class RecordingBackbone final : public InpaintBackbone {
 public:
  explicit RecordingBackbone(InpaintBackbone& inner) : inner_(inner) {}
  std::string model_id() const override { return inner_.model_id(); }
  Resolution latent_resolution() const override { return inner_.latent_resolution(); }
  int latent_channels() const override { return inner_.latent_channels(); }
  std::vector<CrossAttentionSite<float>*> cross_attention_sites() override { return inner_.cross_attention_sites(); }
  MatrixF predict_noise(const DenoiserInputs& in, const ForwardContext& ctx, Rng* rng) override {
    MatrixF out = inner_.predict_noise(in, ctx, rng);
    (ctx.branch == Branch::conditional ? cond : uncond) = out;
    return out;
  }
  void backward(const MatrixF& g) override { inner_.backward(g); }
  ParameterList<float> parameters() override { return inner_.parameters(); }
  void inject_adapters(const AdapterConfig& c, Rng& rng) override { inner_.inject_adapters(c, rng); }
  std::vector<std::string> adapter_targets() const override { return inner_.adapter_targets(); }

  MatrixF cond, uncond;

 private:
  InpaintBackbone& inner_;
};

void cfg_and_text_drop(Outcome& o) {
  constexpr int side = 64;
  auto stack = make_toy_inpaint_stack(toy_tokenizer(), side);
  RecordingBackbone rec(*stack.denoiser);
  InpaintModel model = stack.model();
  model.backbone = &rec;
  double worst = 0;
  int steps = 0;
  for (auto mode : {InpaintMode::rca_single_pass, InpaintMode::concat_single_pass}) {
    InpaintJob job;
    job.image = toy_image(side, 11);
    job.masks = box_masks(side, {{0, 0, 24, 24}, {32, 30, 60, 62}});
    job.prompts = {"a red boat", "a tall green tree"};
    job.sampler.steps = 12;
    job.sampler.seed = 3;
    job.mode = mode;
    o.require(job.sampler.guidance_weight == 7.5, "default guidance weight is not 7.5");
    inpaint(model, job, [&](const GuidanceStep& g) {
      const MatrixF want = rec.uncond + 7.5f * (rec.cond - rec.uncond);
      worst = std::max(worst, static_cast<double>((g.guided - want).cwiseAbs().maxCoeff()));
      ++steps;
    });
  }
  o.require(worst <= 1e-5, "guided prediction deviates by " + fmt(worst));

  Rng rng(2026);
  int draws_single = 0, fired_single = 0, fired_multi = 0;
  for (int i = 0; i < 10000; ++i) {
    const std::size_t n = 1 + rng.index(5);
    const bool fired = should_drop_text(n, 0.1, rng);
    if (n == 1) {
      ++draws_single;
      fired_single += fired;
    } else {
      fired_multi += fired;
    }
  }
  o.require(fired_multi == 0, std::to_string(fired_multi) + " drops on multi-mask examples");
  o.require(fired_single > 0, "text drop never fired on single-mask examples");
  if (o.pass)
    o.detail << steps << " guided steps, max deviation " << fmt(worst) << "; 10000 draws: " << fired_single << "/"
             << draws_single << " single-mask drops, 0 multi-mask drops";
}

// ---- metrics ---------------------------------------------------------------

void metrics_goldens(Outcome& o) {
  const auto same = text_overlap({{"a red boat on the water", "a red boat on the water"}});
  o.require(std::abs(same.bleu1 - 100) < 1e-9 && std::abs(same.bleu4 - 100) < 1e-9 &&
                std::abs(same.rouge_l - 100) < 1e-9,
            "identical-sentence BLEU/ROUGE != 100");
  FloatImage zero, half;
  for (auto& c : zero.channels) c = Eigen::ArrayXXf::Zero(8, 8);
  for (auto& c : half.channels) c = Eigen::ArrayXXf::Constant(8, 8, 0.5f);
  const double p = psnr(zero, half);
  o.require(std::abs(p - 6.02) <= 0.01, "PSNR(0, 0.5) = " + fmt(p));
  const double sb = self_bleu({"a red boat", "a red boat", "a red boat"});
  o.require(std::abs(sb - 100) < 1e-9, "Self-BLEU of duplicates = " + fmt(sb));
  o.require(distinct_n(words_of("every token here is unique"), 1) == 1.0, "Distinct-1 of unique tokens != 1");

  std::mt19937 g(7);
  double worst = 0;
  int fixtures = 0;
  for (; fixtures < 300; ++fixtures) {
    const auto c = words_of(random_sentence(g, 8, 0, 10));
    std::vector<std::vector<std::string>> refs;
    for (int k = 0; k < 1 + fixtures % 3; ++k) refs.push_back(words_of(random_sentence(g, 8, 1, 10)));
    for (int n : {1, 2, 4}) worst = std::max(worst, std::abs(sentence_bleu(c, refs, {n, 0.1}) - oracle_bleu(c, refs, n, 0.1)));
    const double l = static_cast<double>(oracle_lcs(c, refs[0]));
    const double f = c.empty() || l == 0 ? 0.0 : 2 * l / static_cast<double>(c.size() + refs[0].size());
    worst = std::max(worst, std::abs(rouge_l(c, refs[0]) - f));
    for (int n : {1, 2}) worst = std::max(worst, std::abs(distinct_n(c, n) - oracle_distinct(c, n)));
  }
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const RgbImage a = toy_image(16, rng.next()), b = toy_image(16, rng.next());
    double se = 0;
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x) {
        const Rgb pa = a.at(y, x), pb = b.at(y, x);
        for (const auto [u, v] : {std::pair{pa.r, pb.r}, std::pair{pa.g, pb.g}, std::pair{pa.b, pb.b}}) {
          const double d = (u - v) / 255.0;
          se += d * d;
        }
      }
    const double want = se == 0 ? 100.0 : std::min(100.0, 10 * std::log10(1.0 / (se / (16 * 16 * 3))));
    worst = std::max(worst, std::abs(psnr(a, b) - want));
  }
  o.require(worst <= 1e-6, "fixture metrics deviate from scalar loops by " + fmt(worst));
  if (o.pass)
    o.detail << "goldens exact (PSNR " << fmt(p) << " dB); " << fixtures
             << " text fixtures and 50 image pairs within " << fmt(worst) << " of scalar loops";
}

// ---- dataset rules ---------------------------------------------------------

void dataset_rules(Outcome& o) {
  // Area filter over every box of a 20x20 image (400 px: 1% = 4, 65% = 260).
  const Resolution img{20, 20};
  std::vector<BBox> all, want;
  for (int x0 = 0; x0 < 20; ++x0)
    for (int x1 = x0 + 1; x1 <= 20; ++x1)
      for (int y0 = 0; y0 < 20; ++y0)
        for (int y1 = y0 + 1; y1 <= 20; ++y1) {
          all.push_back({x0, y0, x1, y1});
          long px = 0;
          for (int y = y0; y < y1; ++y)
            for (int x = x0; x < x1; ++x) ++px;
          if (px >= 4 && px <= 260) want.push_back(all.back());
        }
  o.require(filter_bboxes(all, img).kept == want, "area filter disagrees with enumeration");

  // Mask-count and union caps: largest-first admission replayed with pixel loops.
  Rng rng(31);
  const Resolution grid{10, 10};
  int selections = 0;
  for (; selections < 2000 && o.pass; ++selections) {
    const int k = 1 + static_cast<int>(rng.index(9));
    std::vector<Mask> cands;
    for (int i = 0; i < k; ++i) {
      const int w = 1 + static_cast<int>(rng.index(7)), h = 1 + static_cast<int>(rng.index(7));
      const int x = static_cast<int>(rng.index(11 - w)), y = static_cast<int>(rng.index(11 - h));
      cands.push_back(Mask::from_bbox({x, y, x + w, y + h}, grid));
    }
    std::vector<int> order(k);
    for (int i = 0; i < k; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return cands[a].area_px() > cands[b].area_px(); });
    std::vector<std::vector<bool>> covered(10, std::vector<bool>(10, false));
    std::set<std::size_t> expect;
    for (int i : order) {
      if (expect.size() == 5) break;
      int count = 0;
      for (int y = 0; y < 10; ++y)
        for (int x = 0; x < 10; ++x) count += covered[y][x] || cands[i].grid()(y, x);
      if (count > 65) continue;
      for (int y = 0; y < 10; ++y)
        for (int x = 0; x < 10; ++x) covered[y][x] = covered[y][x] || cands[i].grid()(y, x);
      expect.insert(static_cast<std::size_t>(i));
    }
    const auto got = select_training_mask_indices(cands, grid, rng.next());
    o.require(std::set<std::size_t>(got.begin(), got.end()) == expect && got.size() == expect.size(),
              "mask selection disagrees with the replayed rule");
  }

  // Draw order: the smallest covering mask shows; ties go to the later index.
  int overlays = 0;
  for (; overlays < 300 && o.pass; ++overlays) {
    const Resolution size{4 + static_cast<int>(rng.index(20)), 4 + static_cast<int>(rng.index(20))};
    const RgbImage base = toy_image(std::max(size.height, size.width), rng.next());
    const RgbImage image = crop(base, {0, 0, size.width, size.height});
    const int n = 1 + static_cast<int>(rng.index(5));
    std::vector<Mask> masks;
    for (int i = 0; i < n; ++i) {
      const int w = 1 + static_cast<int>(rng.index(size.width)), h = 1 + static_cast<int>(rng.index(size.height));
      const int x = static_cast<int>(rng.index(size.width - w + 1)), y = static_cast<int>(rng.index(size.height - h + 1));
      masks.push_back(Mask::from_bbox({x, y, x + w, y + h}, size));
    }
    const auto overlay = render_overlay(image, MaskSet(masks, size), default_palette(), rng.next());
    std::vector<std::string> color(n);
    for (const auto& a : overlay.color_assignment) color[a.mask_index] = a.color_name;
    for (int y = 0; y < size.height; ++y)
      for (int x = 0; x < size.width; ++x) {
        int best = -1;
        for (int i = 0; i < n; ++i)
          if (masks[i].grid()(y, x) && (best < 0 || masks[i].area_px() <= masks[best].area_px())) best = i;
        const Rgb want_px = best < 0 ? image.at(y, x) : find_color(default_palette(), color[best]).rgb;
        o.require(overlay.pixels.at(y, x) == want_px, "overlay pixel disagrees with the draw-order rule");
      }
  }

  // Collage: ceil(sqrt(k)) square grid, cells sized to the largest crop,
  // row-major top-left pastes, white elsewhere.
  const RgbImage src = toy_image(48, 5);
  int collages = 0;
  for (; collages < 200 && o.pass; ++collages) {
    const int k = 2 + static_cast<int>(rng.index(9));
    std::vector<BBox> boxes;
    for (int i = 0; i < k; ++i) {
      const int w = 1 + static_cast<int>(rng.index(20)), h = 1 + static_cast<int>(rng.index(20));
      const int x = static_cast<int>(rng.index(48 - w + 1)), y = static_cast<int>(rng.index(48 - h + 1));
      boxes.push_back({x, y, x + w, y + h});
    }
    const Collage c = build_collage(src, boxes);
    int s = 1;
    while (s * s < k) ++s;
    int cw = 0, ch = 0;
    for (const auto& b : boxes) cw = std::max(cw, b.width()), ch = std::max(ch, b.height());
    o.require(c.rows == s && c.cols == s && c.cell_width == cw && c.cell_height == ch, "collage grid geometry");
    o.require(c.pixels.height() == s * ch && c.pixels.width() == s * cw, "collage canvas size");
    for (int y = 0; y < s * ch && o.pass; ++y)
      for (int x = 0; x < s * cw; ++x) {
        const int cell = (y / ch) * s + (x / cw);
        Rgb want_px = kCollageFill;
        if (cell < k) {
          const BBox& b = boxes[cell];
          const int dy = y % ch, dx = x % cw;
          if (dy < b.height() && dx < b.width()) want_px = src.at(b.y0 + dy, b.x0 + dx);
        }
        o.require(c.pixels.at(y, x) == want_px, "collage pixel disagrees");
      }
  }
  if (o.pass)
    o.detail << all.size() << " boxes filtered exactly, " << selections << " selections, " << overlays
             << " overlays and " << collages << " collages match their oracles";
}

// ---- end to end ------------------------------------------------------------

/// Answers each overlay it recognises with that example's reference prompts
/// under the overlay's own color tags.
class ReferenceDecoder final : public PromptDecoder {
 public:
  ReferenceDecoder(std::shared_ptr<const PieceTokenizer> tok) : tok_(std::move(tok)) {}

  void add(const RgbImage& overlay, const std::string& answer) {
    overlays_.push_back(overlay);
    auto ids = [&] {
      std::vector<int> out;
      for (const auto& t : tok_->encode(answer)) out.push_back(t.id);
      return out;
    }();
    ids.push_back(tok_->eos_id());
    scripts_.push_back(std::move(ids));
  }

  const Tokenizer& tokenizer() const override { return *tok_; }
  int image_token_id() const override { return tok_->image_id(); }
  VectorF encode_image(const RgbImage& image) const override {
    for (std::size_t i = 0; i < overlays_.size(); ++i)
      if (overlays_[i] == image) return VectorF::Constant(1, static_cast<float>(i));
    throw InvalidInput("unknown overlay");
  }
  VectorF next_token_logits(const std::vector<int>& ids, const VectorF& image, std::size_t prompt_length) override {
    const auto& s = scripts_.at(static_cast<std::size_t>(image(0)));
    VectorF logits = VectorF::Constant(tok_->vocab_size(), -40.0f);
    logits(s[std::min(ids.size() - prompt_length, s.size() - 1)]) = 40.0f;
    return logits;
  }

 private:
  std::shared_ptr<const PieceTokenizer> tok_;
  std::vector<RgbImage> overlays_;
  std::vector<std::vector<int>> scripts_;
};

nlohmann::json reply(const std::string& caption, const nlohmann::json& entities) {
  return {{"schema", "grounded-v1"}, {"caption", caption}, {"entities", entities}};
}

/// Digest of every file under `dir`. JSONL lines are sorted first since
/// worker threads append in completion order; wall-clock timings are dropped.
std::string tree_digest(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::string acc;
  for (const auto& f : files) {
    std::string body = read_text_file(f);
    if (f.extension() == ".jsonl") {
      std::vector<std::string> lines;
      std::istringstream in(body);
      for (std::string l; std::getline(in, l);) lines.push_back(l);
      std::sort(lines.begin(), lines.end());
      body.clear();
      for (const auto& l : lines) body += l + "\n";
    } else if (f.filename() == "manifest.json") {
      auto j = nlohmann::json::parse(body);
      j.erase("timings_ms");
      body = j.dump();
    }
    acc += fs::relative(f, dir).generic_string() + ":" + sha256_hex(body) + "\n";
  }
  return sha256_hex(acc);
}

struct E2eRun {
  std::string digest;
  std::vector<std::string> output_hashes;
  int jobs = 0;
  int multi_mask_jobs = 0;
  bool preserved = true;
  bool suggestions_exact = true;
  PromptGenReport promptgen;
};

E2eRun e2e_once(const fs::path& root, std::uint64_t seed) {
  fs::remove_all(root);
  const auto images = root / "images";
  fs::create_directories(images);
  for (int i = 0; i < 5; ++i) write_png(images / ("img_" + std::to_string(i) + ".png"), toy_image(96, 100 + i));
  std::map<std::string, nlohmann::json> replies{
      {"img_0", reply("a boat under the sky", {{{"noun_chunk", "a boat"}, {"root", "boat"}, {"bboxes", {{0.1, 0.5, 0.5, 0.9}}}},
                                               {{"noun_chunk", "the sky"}, {"root", "sky"}, {"bboxes", {{0.0, 0.0, 1.0, 0.3}}}}})},
      {"img_1", reply("two trees and a house",
                      {{{"noun_chunk", "two trees"}, {"root", "trees"}, {"bboxes", {{0.05, 0.4, 0.25, 0.9}, {0.7, 0.4, 0.9, 0.9}}}},
                       {{"noun_chunk", "a house"}, {"root", "house"}, {"bboxes", {{0.3, 0.3, 0.65, 0.7}}}}})},
      {"img_2", reply("a cloud", {{{"noun_chunk", "a cloud"}, {"root", "cloud"}, {"bboxes", {{0.2, 0.1, 0.6, 0.35}}}}})},
      {"img_3", reply("a tiny bird", {{{"noun_chunk", "a tiny bird"}, {"bboxes", {{0.5, 0.5, 0.52, 0.52}}}}})},
      {"img_4", reply("a dog, a cat and a ball",
                      {{{"noun_chunk", "a dog"}, {"root", "dog"}, {"bboxes", {{0.0, 0.6, 0.3, 1.0}}}},
                       {{"noun_chunk", "a cat"}, {"root", "cat"}, {"bboxes", {{0.4, 0.6, 0.7, 1.0}}}},
                       {{"noun_chunk", "a ball"}, {"root", "ball"}, {"bboxes", {{0.75, 0.1, 0.95, 0.3}}}}})}};
  FixtureGroundingClient grounder(replies);
  auto captioner = make_echo_caption_client();
  ToyEmbeddingClient embedder;
  const auto ann = root / "annotations";
  AnnotationOptions aopts;
  aopts.seed = seed;
  annotate(list_images(images), {&grounder, captioner.get(), &embedder}, ann, aopts);
  const auto store = load_annotations(ann);
  write_text_file(ann / "audit.json", to_json(audit_alignment(store, ann, embedder)).dump(2) + "\n");

  const auto ds = root / "dataset";
  prepare_dataset(store, ann, ds, {64, {}, seed});
  const auto data = load_dataset_bundle(ds);
  const auto examples = eval_examples(data);

  std::vector<std::string> refs;
  for (const auto& e : examples) refs.insert(refs.end(), e.references.begin(), e.references.end());
  const auto tok = build_tokenizer(refs);
  GenerationConfig gen;
  gen.seed = seed;
  gen.num_samples = 2;
  ReferenceDecoder decoder(tok);
  for (const auto& e : examples) {
    const auto overlay = render_overlay(e.image, e.masks, default_palette(), gen.seed);
    std::vector<RegionPrompt> answer;
    for (const auto& a : overlay.color_assignment) answer.push_back({e.references[a.mask_index], a.color_name, a.mask_index});
    decoder.add(overlay.pixels, encode_answer(answer).raw);
  }

  auto stack = make_toy_inpaint_stack(tok, 64);
  E2eRun run;
  const auto jobs = root / "jobs";
  for (const auto& e : examples) {
    const auto s = suggest_prompts(e.image, e.masks, gen, decoder);
    write_text_file(root / "suggestions" / (e.example_id + ".json"), to_json(s).dump(2) + "\n");
    const auto prompts = prompts_by_mask(s.parsed.front(), e.masks.size());
    run.suggestions_exact = run.suggestions_exact && prompts == e.references;
    InpaintJob job{e.image, e.masks, prompts, {}, InpaintMode::rca_single_pass, true, std::nullopt, std::nullopt};
    job.sampler.steps = 8;
    job.sampler.seed = seed;
    const auto result = run_inpaint_job(stack.model(), job);
    write_inpaint_job(jobs / e.example_id, job, result);
    run.output_hashes.push_back(result.output_sha256);
    const MaskGrid u = e.masks.union_grid();
    for (int c = 0; c < 3; ++c) run.preserved = run.preserved && (u || result.image.channel(c).cwiseEqual(e.image.channel(c))).all();
    ++run.jobs;
    run.multi_mask_jobs += e.masks.size() >= 2;
  }
  const auto fidelity = fidelity_suite(jobs, {}, &embedder);
  run.promptgen = evaluate_promptgen(examples, decoder, gen, &embedder);
  write_text_file(root / "reports" / "fidelity.csv", to_csv(fidelity));
  write_text_file(root / "reports" / "promptgen.csv", to_csv(run.promptgen));
  run.digest = tree_digest(root);
  return run;
}

void end_to_end(Outcome& o) {
  const auto t0 = Clock::now();
  const auto base = fs::temp_directory_path() / "mmpaint_acceptance_e2e";
  const auto a = e2e_once(base / "a", 11);
  const auto b = e2e_once(base / "b", 11);
  const double secs = seconds_since(t0);
  o.require(a.jobs >= 2 && a.multi_mask_jobs >= 1, "pipeline produced " + std::to_string(a.jobs) + " jobs");
  o.require(a.suggestions_exact, "suggested prompts do not match the decoder's answers");
  o.require(a.preserved && b.preserved, "composited output changed unmasked pixels");
  o.require(a.output_hashes == b.output_hashes, "rerun produced different output hashes");
  o.require(a.digest == b.digest, "rerun produced different artifacts");
  o.require(std::abs(a.promptgen.overlap.bleu4 - 100) < 1e-9 && std::abs(a.promptgen.accuracy.percent - 100) < 1e-9,
            "reference-echo evaluation is not 100 (BLEU@4 " + fmt(a.promptgen.overlap.bleu4) + ")");
  o.require(secs < 300, "runtime " + fmt(secs) + " s >= 300 s");
  if (o.pass)
    o.detail << a.jobs << " jobs (" << a.multi_mask_jobs << " multi-mask), unmasked pixels bit-exact, rerun artifact digest "
             << a.digest.substr(0, 12) << " reproduced, " << fmt(secs) << " s for two runs";
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<void(Outcome&)>>> criteria{
      {"rca-equivalence", rca_equivalence},     {"reduction-laws", reduction_laws},
      {"layout-semantics", layout_semantics},   {"gradient-checks", gradient_checks},
      {"codec", codec},                         {"loss-contract", loss_contract},
      {"training-smoke", training_smoke},       {"cfg-and-text-drop", cfg_and_text_drop},
      {"metrics-goldens", metrics_goldens},     {"dataset-rules", dataset_rules},
      {"end-to-end", end_to_end}};
  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    Outcome o;
    try {
      fn(o);
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail.str("");
      o.detail << "exception: " << e.what();
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail.str() << std::endl;
  }
  std::cout << (criteria.size() - failed) << "/" << criteria.size() << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
