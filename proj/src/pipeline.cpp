// Copyright 2026 The mmpaint Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmpaint/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "mmpaint/image.hpp"

namespace mmpaint {

// ---- tokenizer -------------------------------------------------------------

std::shared_ptr<const PieceTokenizer> build_tokenizer(const std::vector<std::string>& texts, const Palette& palette) {
  std::vector<std::string> corpus = texts;
  const auto& tmpl = default_instruction_template();
  corpus.push_back(tmpl.system_prompt);
  corpus.push_back(tmpl.multi_region);
  corpus.push_back(tmpl.single_region);
  corpus.push_back(" USER: ASSISTANT:");
  for (const auto& c : palette) corpus.push_back("<" + c.name + "> </" + c.name + "> " + c.name + ",");
  return std::make_shared<const PieceTokenizer>(PieceTokenizer::train(corpus));
}

void save_tokenizer(const std::filesystem::path& path, const PieceTokenizer& tokenizer) {
  write_text_file(path, tokenizer.to_json().dump() + "\n");
}

std::shared_ptr<const PieceTokenizer> load_tokenizer(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw InvalidInput("tokenizer '" + path.string() + "' does not exist");
  return std::make_shared<const PieceTokenizer>(PieceTokenizer::from_json(nlohmann::json::parse(read_text_file(path))));
}

// ---- suggestion ------------------------------------------------------------

SuggestOutput suggest_prompts(const RgbImage& image, const MaskSet& masks, const GenerationConfig& config,
                              PromptDecoder& decoder, const Palette& palette) {
  SuggestOutput out;
  out.overlay = render_overlay(image, masks, palette, config.seed);
  std::vector<std::string> colors;
  for (const auto& a : out.overlay.color_assignment) colors.push_back(a.color_name);
  out.instruction = build_instruction(colors, static_cast<int>(masks.size()));
  out.generation = generate_prompts(out.overlay.pixels, out.instruction, config, decoder);
  for (const auto& s : out.generation.samples) out.parsed.push_back(parse_answer(s.raw, out.overlay.color_assignment));
  return out;
}

nlohmann::json to_json(const SuggestOutput& s) {
  nlohmann::json assignment = nlohmann::json::array();
  for (const auto& a : s.overlay.color_assignment) assignment.push_back({{"mask_index", a.mask_index}, {"color", a.color_name}});
  nlohmann::json samples = nlohmann::json::array(), raw = nlohmann::json::array();
  for (std::size_t i = 0; i < s.parsed.size(); ++i) {
    nlohmann::json segs = nlohmann::json::array();
    for (const auto& seg : s.parsed[i].segments)
      segs.push_back({{"color", seg.prompt.color_name},
                      {"mask_index", seg.prompt.mask_index},
                      {"text", seg.prompt.text},
                      {"status", to_string(seg.status)}});
    samples.push_back(std::move(segs));
    raw.push_back(s.generation.samples[i].raw);
  }
  return {{"color_assignment", assignment}, {"samples", samples}, {"raw", raw},
          {"diagnostics", s.generation.diagnostics}, {"template_version", s.instruction.template_version}};
}

// ---- models ----------------------------------------------------------------

namespace {

AdapterConfig adapter_from_manifest(const nlohmann::json& m) {
  AdapterConfig a;
  a.rank = m.at("rank").get<int>();
  a.alpha = m.at("alpha").get<double>();
  a.dropout = m.at("dropout").get<double>();
  a.target_pattern = m.at("target_pattern").get<std::string>();
  return a;
}

void require_file(const std::filesystem::path& p, const std::string& what) {
  if (!std::filesystem::exists(p)) throw InvalidInput(what + " '" + p.string() + "' does not exist");
}

}  // namespace

PromptGenModel load_promptgen_model(const std::filesystem::path& dir) {
  const auto adapter = dir / "adapter_model.safetensors";
  require_file(adapter, "prompt generator adapter");
  PromptGenModel m;
  m.tokenizer = load_tokenizer(dir / "tokenizer.json");
  m.manifest = read_adapter_manifest(adapter);
  m.backbone = std::make_unique<ToyVlm>(m.tokenizer);
  if (m.manifest.value("base_model_id", "") != m.backbone->model_id())
    throw InvalidInput("adapter was trained for '" + m.manifest.value("base_model_id", "") + "', not " +
                       m.backbone->model_id());
  Rng rng(0);
  m.backbone->inject_adapters(adapter_from_manifest(m.manifest), rng);
  load_adapter(adapter, m.backbone->parameters());
  return m;
}

InpaintStackModel load_inpaint_model(const std::filesystem::path& dir, int image_side, int max_tokens) {
  InpaintStackModel m;
  if (dir.empty()) {
    m.stack = make_toy_inpaint_stack(build_tokenizer({}), image_side, max_tokens);
    return m;
  }
  const auto adapter = dir / "adapter_model.safetensors";
  require_file(adapter, "inpainting adapter");
  m.manifest = read_adapter_manifest(adapter);
  m.stack = make_toy_inpaint_stack(load_tokenizer(dir / "tokenizer.json"), image_side, max_tokens);
  Rng rng(0);
  m.stack.denoiser->inject_adapters(adapter_from_manifest(m.manifest), rng);
  load_adapter(adapter, m.stack.denoiser->parameters());
  return m;
}

// ---- training --------------------------------------------------------------

DatasetBundle load_dataset_bundle(const std::filesystem::path& dir) {
  DatasetBundle b;
  b.dir = dir;
  b.examples = load_dataset(dir);
  if (b.examples.empty()) throw InvalidInput("dataset '" + dir.string() + "' has no examples");
  for (const auto& e : b.examples) b.inputs.push_back(load_example_inputs(e, dir));
  return b;
}

namespace {

std::vector<std::string> region_prompts(const DatasetExample& e) {
  std::vector<std::string> p;
  for (const auto& r : e.regions) p.push_back(r.prompt);
  return p;
}

std::vector<std::string> all_prompts(const DatasetBundle& data) {
  std::vector<std::string> texts;
  for (const auto& e : data.examples)
    for (const auto& r : e.regions) texts.push_back(r.prompt);
  return texts;
}

}  // namespace

TrainReport train_promptgen_on_dataset(const DatasetBundle& data, const std::filesystem::path& out_dir,
                                       const AppConfig& config) {
  const auto tokenizer = build_tokenizer(all_prompts(data));
  ToyVlm backbone(tokenizer);
  std::vector<PromptGenExample> examples;
  for (std::size_t i = 0; i < data.examples.size(); ++i)
    examples.push_back(assemble_example(data.inputs[i].first, data.inputs[i].second, region_prompts(data.examples[i]),
                                        default_palette(), config.seed + i, *tokenizer, backbone.image_token_id()));
  std::filesystem::create_directories(out_dir);
  save_tokenizer(out_dir / "tokenizer.json", *tokenizer);
  PromptGenTrainConfig cfg = config.promptgen;
  cfg.output_dir = out_dir;
  return train_promptgen(examples, backbone, cfg);
}

TrainReport train_inpaint_on_dataset(const DatasetBundle& data, const std::filesystem::path& out_dir,
                                     const AppConfig& config) {
  const int side = config.models.inpaint_image_side;
  std::vector<InpaintExample> examples;
  for (std::size_t i = 0; i < data.examples.size(); ++i) {
    const auto& [image, masks] = data.inputs[i];
    if (image.height() != side || image.width() != side)
      throw InvalidInput("models.inpaint_image_side: " + std::to_string(side) + " does not match the dataset images (" +
                         std::to_string(image.height()) + "x" + std::to_string(image.width()) + ")");
    examples.push_back({image, masks, region_prompts(data.examples[i])});
  }
  const auto tokenizer = build_tokenizer(all_prompts(data));
  auto stack = make_toy_inpaint_stack(tokenizer, side, config.models.max_tokens);
  std::filesystem::create_directories(out_dir);
  save_tokenizer(out_dir / "tokenizer.json", *tokenizer);
  InpaintTrainConfig cfg = config.inpaint;
  cfg.output_dir = out_dir;
  return train_inpainter(examples, stack.model(), cfg);
}

// ---- evaluation ------------------------------------------------------------

std::vector<EvalExample> eval_examples(const DatasetBundle& data) {
  std::vector<EvalExample> out;
  for (std::size_t i = 0; i < data.examples.size(); ++i) {
    EvalExample e{data.examples[i].image_id, data.inputs[i].first, data.inputs[i].second, {}, {}};
    for (const auto& r : data.examples[i].regions) {
      e.references.push_back(r.prompt);
      e.roots.push_back(r.root);
    }
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<std::string> prompts_by_mask(const ParsedAnswer& parsed, std::size_t n_masks) {
  std::vector<std::string> out(n_masks);
  for (const auto& p : parsed.prompts())
    if (p.mask_index < n_masks) out[p.mask_index] = p.text;
  return out;
}

PromptGenReport evaluate_promptgen(const std::vector<EvalExample>& examples, PromptDecoder& decoder,
                                   const GenerationConfig& config, EmbeddingClient* embedder, const Palette& palette) {
  if (examples.empty()) throw InvalidInput("evaluate_promptgen: no examples");
  std::vector<AccuracyItem> acc;
  std::vector<PromptPair> pairs;
  double cos_sum = 0;
  std::size_t cos_n = 0;
  for (const auto& ex : examples) {
    GenerationConfig g = config;
    g.num_samples = 1;
    const auto out = suggest_prompts(ex.image, ex.masks, g, decoder, palette);
    const auto texts = prompts_by_mask(out.parsed.front(), ex.masks.size());
    for (std::size_t m = 0; m < ex.masks.size(); ++m) {
      acc.push_back({texts[m], ex.roots[m]});
      pairs.push_back({texts[m], ex.references[m]});
      if (embedder && !texts[m].empty()) {
        cos_sum += prompt_clip_sim(texts[m], ex.image, ex.masks[m].grid(), *embedder);
        ++cos_n;
      }
    }
  }
  PromptGenReport r{accuracy(acc), text_overlap(pairs), std::nullopt};
  if (embedder) r.clip_sim = cos_n ? 100 * cos_sum / static_cast<double>(cos_n) : 0.0;
  return r;
}

std::vector<SweepRow> temperature_sweep(const std::vector<EvalExample>& examples, PromptDecoder& decoder,
                                        const std::vector<double>& temperatures, const GenerationConfig& config,
                                        EmbeddingClient* embedder, const Palette& palette) {
  if (examples.empty()) throw InvalidInput("temperature_sweep: no examples");
  if (temperatures.empty()) throw InvalidInput("temperature_sweep: no temperatures");
  if (config.num_samples < 2) throw InvalidInput("temperature_sweep: num_samples must be >= 2");
  std::vector<SweepRow> rows;
  for (const double t : temperatures) {
    GenerationConfig g = config;
    g.temperature = t;
    std::vector<DiversitySample> div;
    double clip = 0;
    std::size_t clip_n = 0;
    for (const auto& ex : examples) {
      const auto out = suggest_prompts(ex.image, ex.masks, g, decoder, palette);
      DiversitySample d{ex.example_id, {}};
      for (const auto& parsed : out.parsed) {
        std::string joined;
        for (const auto& p : parsed.prompts()) joined += (joined.empty() ? "" : " . ") + p.text;
        d.samples.push_back(joined);
        if (!embedder) continue;
        for (const auto& p : parsed.prompts()) {
          clip += scaled_clip_sim(prompt_clip_sim(p.text, ex.image, ex.masks[p.mask_index].grid(), *embedder));
          ++clip_n;
        }
      }
      div.push_back(std::move(d));
    }
    const Diversity dv = diversity(div);
    SweepRow row{t, std::nullopt, dv.distinct1, dv.self_bleu, examples.size()};
    if (embedder) row.clip_sim = clip_n ? clip / static_cast<double>(clip_n) : 0.0;
    rows.push_back(row);
  }
  return rows;
}

nlohmann::json to_json(const std::vector<SweepRow>& rows) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : rows)
    out.push_back({{"temperature", r.temperature},
                   {"clip_sim_scaled", r.clip_sim ? nlohmann::json(*r.clip_sim) : nlohmann::json(nullptr)},
                   {"distinct1", r.distinct1},
                   {"self_bleu", r.self_bleu},
                   {"examples", r.examples}});
  return out;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream out;
  out << "temperature,clip_sim_scaled,distinct1,self_bleu,examples\n" << std::fixed;
  for (const auto& r : rows) {
    out << std::setprecision(2) << r.temperature << ',' << std::setprecision(4);
    if (r.clip_sim) out << *r.clip_sim;
    out << ',' << r.distinct1 << ',' << r.self_bleu << ',' << r.examples << '\n';
  }
  return out.str();
}

std::string sweep_svg(const std::vector<SweepRow>& rows) {
  if (rows.empty()) throw InvalidInput("sweep_svg: no rows");
  constexpr int kPanelW = 280, kPanelH = 240, kPad = 40;
  struct Series {
    std::string title;
    std::vector<std::optional<double>> y;
  };
  std::vector<Series> series(3);
  series[0].title = "CLIPSim (x2.5)";
  series[1].title = "Distinct-1";
  series[2].title = "Self-BLEU";
  for (const auto& r : rows) {
    series[0].y.push_back(r.clip_sim);
    series[1].y.push_back(r.distinct1);
    series[2].y.push_back(r.self_bleu);
  }
  double tmin = rows.front().temperature, tmax = tmin;
  for (const auto& r : rows) {
    tmin = std::min(tmin, r.temperature);
    tmax = std::max(tmax, r.temperature);
  }
  if (tmax == tmin) tmax = tmin + 1;

  std::ostringstream svg;
  svg << std::fixed << std::setprecision(2);
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << 3 * kPanelW << "\" height=\"" << kPanelH
      << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (int p = 0; p < 3; ++p) {
    const double x0 = p * kPanelW + kPad, x1 = (p + 1) * kPanelW - 10, y0 = kPanelH - kPad, y1 = 25;
    double lo = 0, hi = 0;
    bool any = false;
    for (const auto& v : series[p].y)
      if (v) {
        lo = any ? std::min(lo, *v) : *v;
        hi = any ? std::max(hi, *v) : *v;
        any = true;
      }
    if (hi - lo < 1e-9) {
      lo -= 0.5;
      hi += 0.5;
    }
    svg << "<text x=\"" << (x0 + x1) / 2 << "\" y=\"15\" text-anchor=\"middle\">" << series[p].title << "</text>\n";
    svg << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x1 << "\" y2=\"" << y0 << "\" stroke=\"black\"/>\n";
    svg << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x0 << "\" y2=\"" << y1 << "\" stroke=\"black\"/>\n";
    svg << "<text x=\"" << (x0 + x1) / 2 << "\" y=\"" << kPanelH - 5 << "\" text-anchor=\"middle\">temperature</text>\n";
    if (!any) {
      svg << "<text x=\"" << (x0 + x1) / 2 << "\" y=\"" << (y0 + y1) / 2 << "\" text-anchor=\"middle\">n/a</text>\n";
      continue;
    }
    svg << "<text x=\"" << x0 - 4 << "\" y=\"" << y0 << "\" text-anchor=\"end\">" << lo << "</text>\n";
    svg << "<text x=\"" << x0 - 4 << "\" y=\"" << y1 + 4 << "\" text-anchor=\"end\">" << hi << "</text>\n";
    auto px = [&](double t) { return x0 + (t - tmin) / (tmax - tmin) * (x1 - x0); };
    auto py = [&](double v) { return y0 - (v - lo) / (hi - lo) * (y0 - y1); };
    std::string points;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      svg << "<text x=\"" << px(rows[i].temperature) << "\" y=\"" << y0 + 14 << "\" text-anchor=\"middle\">"
          << rows[i].temperature << "</text>\n";
      if (!series[p].y[i]) continue;
      std::ostringstream pt;
      pt << std::fixed << std::setprecision(2) << px(rows[i].temperature) << ',' << py(*series[p].y[i]);
      points += (points.empty() ? "" : " ") + pt.str();
      svg << "<circle cx=\"" << px(rows[i].temperature) << "\" cy=\"" << py(*series[p].y[i])
          << "\" r=\"3\" fill=\"#1f77b4\"/>\n";
    }
    svg << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.5\" points=\"" << points << "\"/>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

std::vector<double> parse_number_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      throw InvalidInput("expected a comma-separated list of numbers, got '" + text + "'");
    }
    if (item.find_first_not_of(" \t", used) != std::string::npos || !std::isfinite(v))
      throw InvalidInput("expected a comma-separated list of numbers, got '" + text + "'");
    out.push_back(v);
  }
  if (out.empty()) throw InvalidInput("expected a comma-separated list of numbers, got '" + text + "'");
  return out;
}

}  // namespace mmpaint
