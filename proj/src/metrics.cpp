// Copyright 2026 The mmpaint Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmpaint/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <iomanip>
#include <set>
#include <sstream>

namespace mmpaint {

namespace {

using Ngram = std::vector<std::string>;

std::map<Ngram, int> ngram_counts(const std::vector<std::string>& tokens, int n) {
  std::map<Ngram, int> counts;
  for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= tokens.size(); ++i)
    ++counts[Ngram(tokens.begin() + static_cast<long>(i), tokens.begin() + static_cast<long>(i) + n)];
  return counts;
}

double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

std::string fmt(const std::optional<double>& v) {
  if (!v) return "";
  std::ostringstream out;
  out << std::fixed << std::setprecision(4) << *v;
  return out.str();
}

nlohmann::json opt_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

}  // namespace

std::vector<std::string> words_of(const std::string& text) {
  std::vector<std::string> out;
  std::string w;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      w.push_back(static_cast<char>(std::tolower(c)));
    } else if (!w.empty()) {
      out.push_back(std::move(w));
      w.clear();
    }
  }
  if (!w.empty()) out.push_back(std::move(w));
  return out;
}

double sentence_bleu(const std::vector<std::string>& candidate,
                     const std::vector<std::vector<std::string>>& references, const BleuOptions& options) {
  if (references.empty()) throw InvalidInput("sentence_bleu: no references");
  if (options.max_n < 1) throw InvalidInput("sentence_bleu: max_n must be >= 1");
  if (!(options.epsilon > 0)) throw InvalidInput("sentence_bleu: epsilon must be positive");
  const std::size_t c = candidate.size();
  if (c == 0) return 0.0;
  const int orders = std::min<int>(options.max_n, static_cast<int>(c));
  double log_sum = 0;
  for (int n = 1; n <= orders; ++n) {
    const auto cand = ngram_counts(candidate, n);
    std::map<Ngram, int> max_ref;
    for (const auto& ref : references)
      for (const auto& [g, k] : ngram_counts(ref, n)) max_ref[g] = std::max(max_ref[g], k);
    int clipped = 0;
    for (const auto& [g, k] : cand) {
      const auto it = max_ref.find(g);
      if (it != max_ref.end()) clipped += std::min(k, it->second);
    }
    const double total = static_cast<double>(c) - n + 1;
    log_sum += std::log((clipped > 0 ? clipped : options.epsilon) / total);
  }
  std::size_t r = references.front().size();
  for (const auto& ref : references) {
    const auto d = [&](std::size_t len) { return len > c ? len - c : c - len; };
    if (d(ref.size()) < d(r) || (d(ref.size()) == d(r) && ref.size() < r)) r = ref.size();
  }
  const double bp = c > r ? 1.0 : std::exp(1.0 - static_cast<double>(r) / static_cast<double>(c));
  return bp * std::exp(log_sum / orders);
}

std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge_l(const std::vector<std::string>& candidate, const std::vector<std::string>& reference) {
  if (candidate.empty() || reference.empty()) return 0.0;
  const double lcs = static_cast<double>(lcs_length(candidate, reference));
  if (lcs == 0) return 0.0;
  const double p = lcs / static_cast<double>(candidate.size());
  const double r = lcs / static_cast<double>(reference.size());
  return 2 * p * r / (p + r);
}

TextOverlap text_overlap(const std::vector<PromptPair>& items, double epsilon) {
  if (items.empty()) throw InvalidInput("text_overlap: no prompt pairs");
  std::vector<double> b1, b4, rl;
  for (const auto& it : items) {
    const auto c = words_of(it.generated), r = words_of(it.reference);
    b1.push_back(sentence_bleu(c, {r}, {1, epsilon}));
    b4.push_back(sentence_bleu(c, {r}, {4, epsilon}));
    rl.push_back(rouge_l(c, r));
  }
  return {100 * mean(b1), 100 * mean(b4), 100 * mean(rl), items.size()};
}

bool root_hit(const std::string& prompt, const std::string& root) {
  const auto target = words_of(root);
  if (target.size() != 1) return false;
  const auto w = words_of(prompt);
  return std::find(w.begin(), w.end(), target.front()) != w.end();
}

AccuracyResult accuracy(const std::vector<AccuracyItem>& items) {
  AccuracyResult r;
  std::size_t hits = 0;
  for (const auto& it : items) {
    if (words_of(it.root).empty()) {
      ++r.skipped;
      continue;
    }
    ++r.scored;
    if (root_hit(it.generated, it.root)) ++hits;
  }
  if (r.scored) r.percent = 100.0 * static_cast<double>(hits) / static_cast<double>(r.scored);
  return r;
}

double distinct_n(const std::vector<std::string>& tokens, int n) {
  if (n < 1) throw InvalidInput("distinct_n: n must be >= 1");
  if (tokens.size() < static_cast<std::size_t>(n)) return 0.0;
  const auto counts = ngram_counts(tokens, n);
  return static_cast<double>(counts.size()) / static_cast<double>(tokens.size() - n + 1);
}

double self_bleu(const std::vector<std::string>& samples, const BleuOptions& options) {
  if (samples.size() < 2) throw InvalidInput("self_bleu: needs at least two samples");
  std::vector<std::vector<std::string>> tok;
  for (const auto& s : samples) tok.push_back(words_of(s));
  std::vector<double> scores;
  for (std::size_t i = 0; i < tok.size(); ++i) {
    std::vector<std::vector<std::string>> refs;
    for (std::size_t j = 0; j < tok.size(); ++j)
      if (j != i) refs.push_back(tok[j]);
    scores.push_back(sentence_bleu(tok[i], refs, options));
  }
  return 100 * mean(scores);
}

Diversity diversity(const std::vector<DiversitySample>& samples, const BleuOptions& options) {
  if (samples.empty()) throw InvalidInput("diversity: no examples");
  const std::size_t k = samples.front().samples.size();
  std::vector<double> d1, d2, sb;
  for (const auto& ex : samples) {
    if (ex.samples.size() != k) throw InvalidInput("diversity: example '" + ex.example_id + "' has a different sample count");
    if (k < 2) throw InvalidInput("diversity: needs at least two samples per example");
    std::vector<double> e1, e2;
    for (const auto& s : ex.samples) {
      const auto t = words_of(s);
      e1.push_back(distinct_n(t, 1));
      e2.push_back(distinct_n(t, 2));
    }
    d1.push_back(mean(e1));
    d2.push_back(mean(e2));
    sb.push_back(self_bleu(ex.samples, options));
  }
  return {mean(d1), mean(d2), mean(sb), samples.size()};
}

double psnr(const FloatImage& result, const FloatImage& reference) {
  if (result.height() != reference.height() || result.width() != reference.width())
    throw InvalidInput("psnr: image sizes differ");
  MaskGrid all = MaskGrid::Constant(result.height(), result.width(), true);
  return masked_psnr(result, reference, all);
}

double psnr(const RgbImage& result, const RgbImage& reference) { return psnr(to_float(result), to_float(reference)); }

double masked_psnr(const FloatImage& result, const FloatImage& reference, const MaskGrid& mask) {
  if (result.height() != reference.height() || result.width() != reference.width() ||
      mask.rows() != result.height() || mask.cols() != result.width())
    throw InvalidInput("psnr: image or mask sizes differ");
  const auto n = mask.count();
  if (n == 0) throw InvalidInput("psnr: empty mask");
  double se = 0;
  for (int c = 0; c < 3; ++c) {
    const Eigen::ArrayXXd d = (result.channels[c] - reference.channels[c]).cast<double>();
    se += (d.square() * mask.cast<double>()).sum();
  }
  const double mse = se / (3.0 * static_cast<double>(n));
  if (mse == 0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

nlohmann::json to_json(const RegionTreatment& t) {
  return {{"darken", t.darken}, {"blur_sigma_frac", t.blur_sigma_frac}};
}

FloatImage gaussian_blur(const FloatImage& image, double sigma) {
  if (sigma <= 0) return image;
  const int radius = static_cast<int>(std::ceil(3 * sigma));
  std::vector<float> k(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0;
  for (int i = -radius; i <= radius; ++i) sum += (k[static_cast<std::size_t>(i + radius)] = static_cast<float>(std::exp(-0.5 * i * i / (sigma * sigma))));
  for (auto& v : k) v = static_cast<float>(v / sum);
  const int h = image.height(), w = image.width();
  FloatImage out;
  for (int c = 0; c < 3; ++c) {
    const auto& src = image.channels[c];
    Eigen::ArrayXXf tmp(h, w), dst(h, w);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        float acc = 0;
        for (int i = -radius; i <= radius; ++i) acc += k[static_cast<std::size_t>(i + radius)] * src(y, std::clamp(x + i, 0, w - 1));
        tmp(y, x) = acc;
      }
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        float acc = 0;
        for (int i = -radius; i <= radius; ++i) acc += k[static_cast<std::size_t>(i + radius)] * tmp(std::clamp(y + i, 0, h - 1), x);
        dst(y, x) = acc;
      }
    out.channels[c] = std::move(dst);
  }
  return out;
}

RgbImage treat_background(const RgbImage& image, const MaskGrid& mask, const RegionTreatment& t) {
  if (mask.rows() != image.height() || mask.cols() != image.width())
    throw InvalidInput("region treatment: mask size differs from the image");
  if (mask.all()) return image;
  const FloatImage blurred = gaussian_blur(to_float(image), t.blur_sigma_frac * std::max(image.height(), image.width()));
  RgbImage bg = to_rgb8(FloatImage{{blurred.channels[0] * static_cast<float>(t.darken),
                                    blurred.channels[1] * static_cast<float>(t.darken),
                                    blurred.channels[2] * static_cast<float>(t.darken)}});
  RgbImage out = image;
  for (int c = 0; c < 3; ++c) out.channel(c) = mask.select(image.channel(c), bg.channel(c));
  return out;
}

double region_clip_sim(const RegionEvalItem& item, EmbeddingClient& embedder, ClipSimMode mode,
                       const RegionTreatment& t) {
  const RgbImage result = treat_background(item.result, item.mask, t);
  if (mode == ClipSimMode::t2i) return cosine_similarity(embedder.embed_text(item.generated_prompt), embedder.embed_image(result));
  if (item.source.size() != item.result.size()) throw InvalidInput("region_clip_sim: source and result sizes differ");
  return cosine_similarity(embedder.embed_image(treat_background(item.source, item.mask, t)), embedder.embed_image(result));
}

double prompt_clip_sim(const std::string& prompt, const RgbImage& image, const MaskGrid& mask,
                       EmbeddingClient& embedder) {
  if (mask.rows() != image.height() || mask.cols() != image.width() || !mask.any())
    throw InvalidInput("prompt_clip_sim: mask must be non-empty and match the image");
  int x0 = image.width(), y0 = image.height(), x1 = 0, y1 = 0;
  for (int y = 0; y < mask.rows(); ++y)
    for (int x = 0; x < mask.cols(); ++x)
      if (mask(y, x)) {
        x0 = std::min(x0, x);
        y0 = std::min(y0, y);
        x1 = std::max(x1, x + 1);
        y1 = std::max(y1, y + 1);
      }
  return cosine_similarity(embedder.embed_text(prompt), embedder.embed_image(crop(image, {x0, y0, x1, y1})));
}

std::vector<FidelityItem> load_fidelity_items(const std::filesystem::path& run_dir) {
  if (!std::filesystem::is_directory(run_dir)) throw InvalidInput("run dir '" + run_dir.string() + "' does not exist");
  std::vector<std::filesystem::path> dirs;
  for (const auto& e : std::filesystem::directory_iterator(run_dir))
    if (e.is_directory() && std::filesystem::exists(e.path() / "result.png")) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  std::vector<FidelityItem> items;
  for (const auto& d : dirs) {
    FidelityItem it;
    it.job_id = d.filename().string();
    it.result = read_png(d / "result.png");
    it.source = read_png(d / "source.png");
    const auto manifest = nlohmann::json::parse(read_text_file(d / "manifest.json"));
    it.prompts = manifest.at("prompts").get<std::vector<std::string>>();
    for (std::size_t i = 0; i < it.prompts.size(); ++i)
      it.masks.push_back(read_mask_png(d / "masks" / ("mask_" + std::to_string(i) + ".png")));
    items.push_back(std::move(it));
  }
  return items;
}

FidelityReport fidelity_suite(const std::filesystem::path& run_dir, const std::vector<FidelityScorer*>& scorers,
                              EmbeddingClient* embedder, const RegionTreatment& t) {
  const auto items = load_fidelity_items(run_dir);
  if (items.empty()) throw InvalidInput("no results in '" + run_dir.string() + "'");
  std::vector<const FidelityItem*> all, multi;
  for (const auto& it : items) {
    all.push_back(&it);
    if (it.masks.size() >= 2) multi.push_back(&it);
  }
  FidelityReport report;
  report.jobs = all.size();
  report.multi_mask_jobs = multi.size();
  report.treatment = t;

  auto evaluate = [&](const std::vector<const FidelityItem*>& set, std::map<std::string, std::optional<double>>& out) {
    for (const auto& c : fidelity_columns()) out[c] = std::nullopt;
    if (set.empty()) return;
    std::vector<double> p, i2i, t2i;
    for (const auto* it : set) {
      p.push_back(psnr(it->result, it->source));
      if (!embedder) continue;
      for (std::size_t m = 0; m < it->masks.size(); ++m) {
        const RegionEvalItem r{it->prompts[m], it->prompts[m], "", it->masks[m], it->source, it->result};
        t2i.push_back(region_clip_sim(r, *embedder, ClipSimMode::t2i, t));
        i2i.push_back(region_clip_sim(r, *embedder, ClipSimMode::i2i, t));
      }
    }
    out["PSNR"] = mean(p);
    if (embedder) {
      out["CLIPSim-I2I"] = 100 * mean(i2i);
      out["CLIPSim-T2I"] = 100 * mean(t2i);
    }
    for (auto* s : scorers) out[s->name()] = s->score(set);
  };
  evaluate(all, report.all);
  evaluate(multi, report.multi_mask);
  return report;
}

nlohmann::json to_json(const FidelityReport& r) {
  nlohmann::json all = nlohmann::json::object(), multi = nlohmann::json::object();
  for (const auto& [k, v] : r.all) all[k] = opt_json(v);
  for (const auto& [k, v] : r.multi_mask) multi[k] = opt_json(v);
  return {{"jobs", r.jobs}, {"multi_mask_jobs", r.multi_mask_jobs}, {"all", all},
          {"multi_mask", multi}, {"region_treatment", to_json(r.treatment)}};
}

std::string to_csv(const FidelityReport& r) {
  std::vector<std::string> cols = fidelity_columns();
  for (const auto& [k, v] : r.all)
    if (std::find(cols.begin(), cols.end(), k) == cols.end()) cols.push_back(k);
  std::string out = "slice,jobs";
  for (const auto& c : cols) out += "," + c;
  out += "\n";
  auto row = [&](const std::string& name, std::size_t jobs, const std::map<std::string, std::optional<double>>& v) {
    out += name + "," + std::to_string(jobs);
    for (const auto& c : cols) {
      const auto it = v.find(c);
      out += "," + (it == v.end() ? std::string() : fmt(it->second));
    }
    out += "\n";
  };
  row("all", r.jobs, r.all);
  row("multi_mask", r.multi_mask_jobs, r.multi_mask);
  return out;
}

nlohmann::json to_json(const PromptGenReport& r) {
  return {{"Accuracy", r.accuracy.percent}, {"accuracy_scored", r.accuracy.scored},
          {"accuracy_skipped", r.accuracy.skipped}, {"BLEU@1", r.overlap.bleu1},
          {"BLEU@4", r.overlap.bleu4}, {"ROUGE-L", r.overlap.rouge_l},
          {"CLIPSim", opt_json(r.clip_sim)}, {"items", r.overlap.items}};
}

std::string to_csv(const PromptGenReport& r) {
  std::string out;
  for (const auto& c : promptgen_columns()) out += (out.empty() ? "" : ",") + c;
  out += "\n" + fmt(r.accuracy.percent) + "," + fmt(r.overlap.bleu1) + "," + fmt(r.overlap.bleu4) + "," +
         fmt(r.overlap.rouge_l) + "," + fmt(r.clip_sim) + "\n";
  return out;
}

}  // namespace mmpaint
