// Copyright 2026 The mmpaint Authors
// SPDX-License-Identifier: Apache-2.0

// mmpaint command line: annotate, prepare-dataset, train-promptgen,
// train-inpaint, suggest, inpaint, evaluate and serve.

#include <CLI11.hpp>

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "mmpaint/annotation.hpp"
#include "mmpaint/config.hpp"
#include "mmpaint/image.hpp"
#include "mmpaint/model_clients.hpp"
#include "mmpaint/pipeline.hpp"
#include "mmpaint/service.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mmpaint;

namespace {

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config_path, "TOML configuration file");
  app->add_option("--seed", c.seed, "Run seed; overrides the config and every stage seed");
}

AppConfig resolve(const Common& c) {
  AppConfig cfg = load_config_or_default(c.config_path);
  if (c.seed) cfg.reseed(*c.seed);
  return cfg;
}

/// Decoded model text may hold partial UTF-8 sequences; those bytes are
/// replaced rather than rejected.
std::string dump(const json& j, int indent = 2) { return j.dump(indent, ' ', false, json::error_handler_t::replace); }

void emit(const json& j) { std::cout << dump(j) << "\n"; }

json run_info(const AppConfig& cfg) { return {{"seed", cfg.seed}, {"config_hash", config_hash(cfg)}}; }

std::unique_ptr<EmbeddingClient> make_embedder(const std::string& kind) {
  if (kind == "none") return nullptr;
  if (kind == "toy") return std::make_unique<ToyEmbeddingClient>();
  const auto ep = endpoint_from_env("MMPAINT_EMBED");
  if (!ep) throw InvalidInput("annotation.embedder = \"http\" needs MMPAINT_EMBED_URL");
  return std::make_unique<HttpEmbeddingClient>(*ep);
}

// ---- masks -----------------------------------------------------------------

BBox parse_bbox(const std::string& text) {
  const auto v = parse_number_list(text);
  if (v.size() != 4) throw InvalidInput("--bbox '" + text + "': expected x0,y0,x1,y1");
  return {static_cast<int>(v[0]), static_cast<int>(v[1]), static_cast<int>(v[2]), static_cast<int>(v[3])};
}

MaskSet load_masks(const std::vector<std::string>& pngs, const std::vector<std::string>& boxes, Resolution size,
                   int max_masks) {
  std::vector<Mask> masks;
  for (const auto& p : pngs) {
    MaskGrid g = read_mask_png(p);
    if (g.rows() != size.height || g.cols() != size.width)
      throw InvalidInput("mask '" + p + "' is not at image resolution " + to_string(size));
    masks.push_back(Mask::from_grid(std::move(g)));
  }
  for (const auto& b : boxes) masks.push_back(Mask::from_bbox(parse_bbox(b), size));
  if (masks.empty()) throw InvalidInput("at least one mask is required (--masks or --bbox)");
  return MaskSet(std::move(masks), size, max_masks);
}

// ---- decoders --------------------------------------------------------------

/// A trained prompt generator, or a scripted stand-in that replays answers
/// from a text file (one answer per line).
struct DecoderHandle {
  std::optional<PromptGenModel> model;
  std::unique_ptr<ScriptedDecoder> scripted;
  PromptDecoder* get() const {
    if (scripted) return scripted.get();
    return model ? model->backbone.get() : nullptr;
  }
};

DecoderHandle make_decoder(const std::string& adapter, const std::string& scripted) {
  DecoderHandle h;
  if (!scripted.empty()) {
    std::vector<std::string> lines;
    std::istringstream in(read_text_file(scripted));
    for (std::string line; std::getline(in, line);)
      if (!line.empty()) lines.push_back(line);
    if (lines.empty()) throw InvalidInput("scripted answers '" + scripted + "' are empty");
    auto tok = build_tokenizer(lines);
    h.scripted = std::make_unique<ScriptedDecoder>(tok, tok->image_id(), lines);
  } else if (!adapter.empty()) {
    h.model = load_promptgen_model(adapter);
  }
  return h;
}

// ---- verbs -----------------------------------------------------------------

struct AnnotateArgs {
  std::string images, out, fixtures;
  std::optional<int> workers;
  std::optional<double> min_area, max_area;
};

int cmd_annotate(const Common& c, const AnnotateArgs& a) {
  AppConfig cfg = resolve(c);
  if (a.workers) cfg.annotation.workers = *a.workers;
  if (a.min_area) cfg.dataset.rules.min_area_fraction = *a.min_area;
  if (a.max_area) cfg.dataset.rules.max_area_fraction = *a.max_area;
  if (!a.fixtures.empty()) cfg.annotation.grounding_fixtures = a.fixtures;
  cfg = config_from_json(to_json(cfg));  // re-validate overrides

  std::unique_ptr<GroundingClient> grounder;
  if (cfg.annotation.grounding == "fixture") {
    grounder = std::make_unique<FixtureGroundingClient>(cfg.annotation.grounding_fixtures);
  } else {
    const auto ep = endpoint_from_env("MMPAINT_GROUNDING");
    if (!ep) throw InvalidInput("annotation.grounding = \"http\" needs MMPAINT_GROUNDING_URL");
    grounder = std::make_unique<HttpGroundingClient>(*ep);
  }
  std::unique_ptr<CaptionClient> captioner;
  if (cfg.annotation.caption == "echo") {
    captioner = make_echo_caption_client();
  } else {
    const auto ep = endpoint_from_env("MMPAINT_CAPTION");
    if (!ep) throw InvalidInput("annotation.caption = \"http\" needs MMPAINT_CAPTION_URL");
    captioner = std::make_unique<HttpCaptionClient>(*ep);
  }
  auto embedder = make_embedder(cfg.annotation.embedder);

  AnnotationOptions opts;
  opts.rules = cfg.dataset.rules;
  opts.workers = cfg.annotation.workers;
  opts.caption.token_cap = cfg.annotation.caption_token_cap;
  opts.seed = cfg.seed;
  const auto summary =
      annotate(list_images(a.images), {grounder.get(), captioner.get(), embedder.get()}, a.out, opts);
  json out = run_info(cfg);
  out["summary"] = to_json(summary);
  if (embedder) {
    const auto audit = audit_alignment(load_annotations(a.out, cfg.dataset.rules), a.out, *embedder,
                                       cfg.annotation.audit_threshold);
    write_text_file(fs::path(a.out) / "audit.json", dump(to_json(audit)) + "\n");
    out["audit"] = to_json(audit);
  }
  emit(out);
  return 0;
}

struct PrepareArgs {
  std::string annotations, out;
  std::optional<int> side;
};

int cmd_prepare(const Common& c, const PrepareArgs& a) {
  AppConfig cfg = resolve(c);
  if (a.side) cfg.dataset.side = *a.side;
  cfg = config_from_json(to_json(cfg));
  const auto store = load_annotations(a.annotations, cfg.dataset.rules);
  const auto summary = prepare_dataset(store, a.annotations, a.out, cfg.dataset);
  json out = run_info(cfg);
  out["examples"] = summary.examples;
  out["dropped_images"] = summary.dropped_images;
  json skipped = json::array();
  for (const auto& s : summary.skipped) skipped.push_back(to_json(s));
  out["skipped"] = skipped;
  emit(out);
  return 0;
}

struct TrainArgs {
  std::string dataset, out;
  std::optional<long> max_steps;
  std::optional<int> epochs;
};

json train_summary(const AppConfig& cfg, const TrainReport& r) {
  json out = run_info(cfg);
  out["steps"] = r.log.size();
  if (!r.log.empty()) {
    out["initial_loss"] = r.log.front().loss;
    out["final_loss"] = r.log.back().loss;
  }
  out["trainable_parameters"] = r.trainable_parameters;
  out["base_checksum_unchanged"] = r.base_checksum_before == r.base_checksum_after;
  out["diverged"] = r.diverged;
  if (r.adapter_path) out["adapter"] = r.adapter_path->string();
  return out;
}

int cmd_train_promptgen(const Common& c, const TrainArgs& a) {
  AppConfig cfg = resolve(c);
  if (a.max_steps) cfg.promptgen.max_steps = *a.max_steps;
  if (a.epochs) cfg.promptgen.epochs = *a.epochs;
  cfg = config_from_json(to_json(cfg));
  const auto data = load_dataset_bundle(a.dataset);
  const auto report = train_promptgen_on_dataset(data, a.out, cfg);
  write_train_log_csv(fs::path(a.out) / "train_log.csv", report.log);
  emit(train_summary(cfg, report));
  return report.diverged ? 1 : 0;
}

int cmd_train_inpaint(const Common& c, const TrainArgs& a, std::optional<int> side) {
  AppConfig cfg = resolve(c);
  if (a.max_steps) cfg.inpaint.max_steps = *a.max_steps;
  if (a.epochs) cfg.inpaint.epochs = *a.epochs;
  if (side) cfg.models.inpaint_image_side = *side;
  cfg = config_from_json(to_json(cfg));
  const auto data = load_dataset_bundle(a.dataset);
  const auto report = train_inpaint_on_dataset(data, a.out, cfg);
  write_train_log_csv(fs::path(a.out) / "train_log.csv", report.log);
  emit(train_summary(cfg, report));
  return report.diverged ? 1 : 0;
}

struct InputArgs {
  std::string image;
  std::vector<std::string> masks, boxes;
};

void add_inputs(CLI::App* app, InputArgs& in) {
  app->add_option("--image", in.image, "Source PNG")->required();
  app->add_option("--masks", in.masks, "Binary mask PNGs at image resolution, in order");
  app->add_option("--bbox", in.boxes, "Box mask x0,y0,x1,y1 (after --masks)");
}

struct SuggestArgs {
  InputArgs in;
  std::string adapter, scripted, out;
  std::optional<double> temperature;
  std::optional<int> num_samples, max_new_tokens;
};

int cmd_suggest(const Common& c, const SuggestArgs& a) {
  AppConfig cfg = resolve(c);
  if (a.temperature) cfg.generation.temperature = *a.temperature;
  if (a.num_samples) cfg.generation.num_samples = *a.num_samples;
  if (a.max_new_tokens) cfg.generation.max_new_tokens = *a.max_new_tokens;
  cfg = config_from_json(to_json(cfg));
  const auto decoder = make_decoder(a.adapter.empty() ? cfg.models.promptgen_adapter : a.adapter, a.scripted);
  if (!decoder.get()) throw InvalidInput("no prompt generator: pass --adapter, --scripted or set models.promptgen_adapter");
  const auto image = read_png(a.in.image);
  const auto masks = load_masks(a.in.masks, a.in.boxes, image.size(), cfg.dataset.rules.max_masks);
  const auto s = suggest_prompts(image, masks, cfg.generation, *decoder.get());
  json out = to_json(s);
  out.update(run_info(cfg));
  if (!a.out.empty()) {
    fs::create_directories(a.out);
    write_text_file(fs::path(a.out) / "suggestions.json", dump(out) + "\n");
    write_png(fs::path(a.out) / "overlay.png", s.overlay.pixels);
  }
  emit(out);
  return 0;
}

struct InpaintArgs {
  InputArgs in;
  std::vector<std::string> prompts;
  std::string adapter, out, mode;
  std::optional<int> steps;
  std::optional<double> cfg_weight;
  bool no_composite = false;
};

int cmd_inpaint(const Common& c, const InpaintArgs& a) {
  AppConfig cfg = resolve(c);
  if (!a.mode.empty()) cfg.mode = inpaint_mode_from_string(a.mode);
  if (a.steps) cfg.sampler.steps = *a.steps;
  if (a.cfg_weight) cfg.sampler.guidance_weight = *a.cfg_weight;
  if (a.no_composite) cfg.composite = false;
  cfg = config_from_json(to_json(cfg));
  const auto image = read_png(a.in.image);
  if (image.height() != image.width()) throw InvalidInput("--image must be square, got " + to_string(image.size()));
  const auto masks = load_masks(a.in.masks, a.in.boxes, image.size(), cfg.dataset.rules.max_masks);
  if (a.prompts.size() != masks.size())
    throw ValidationError({{"prompts", "expected " + std::to_string(masks.size()) + " prompts (one per mask), got " +
                                           std::to_string(a.prompts.size())}});
  const auto stack = load_inpaint_model(a.adapter.empty() ? cfg.models.inpaint_adapter : a.adapter, image.height(),
                                        cfg.models.max_tokens);
  InpaintJob job{image, masks, a.prompts, cfg.sampler, cfg.mode, cfg.composite, std::nullopt, std::nullopt};
  auto result = run_inpaint_job(stack.model(), job);
  result.manifest["run_config_hash"] = config_hash(cfg);
  write_inpaint_job(a.out, job, result);
  json out = run_info(cfg);
  out["manifest"] = result.manifest;
  out["result"] = (fs::path(a.out) / "result.png").string();
  emit(out);
  return 0;
}

struct EvaluateArgs {
  std::string dataset, adapter, scripted, runs, out, sweep;
  std::optional<int> num_samples;
  std::optional<double> temperature;
};

int cmd_evaluate(const Common& c, const EvaluateArgs& a) {
  AppConfig cfg = resolve(c);
  if (a.num_samples) cfg.generation.num_samples = *a.num_samples;
  if (a.temperature) cfg.generation.temperature = *a.temperature;
  cfg = config_from_json(to_json(cfg));
  if (a.dataset.empty() && a.runs.empty())
    throw InvalidInput("evaluate needs --dataset (prompt generation) and/or --runs (inpainting results)");
  if (a.out.empty()) throw InvalidInput("--out is required");
  fs::create_directories(a.out);
  const fs::path out_dir = a.out;
  auto embedder = make_embedder(cfg.annotation.embedder);
  json out = run_info(cfg);

  if (!a.dataset.empty()) {
    const auto decoder = make_decoder(a.adapter.empty() ? cfg.models.promptgen_adapter : a.adapter, a.scripted);
    if (!decoder.get()) throw InvalidInput("no prompt generator: pass --adapter, --scripted or set models.promptgen_adapter");
    const auto examples = eval_examples(load_dataset_bundle(a.dataset));
    const auto report = evaluate_promptgen(examples, *decoder.get(), cfg.generation, embedder.get());
    write_text_file(out_dir / "promptgen_report.json", dump(to_json(report)) + "\n");
    write_text_file(out_dir / "promptgen_report.csv", to_csv(report));
    out["promptgen"] = to_json(report);
    if (!a.sweep.empty()) {
      const auto rows = temperature_sweep(examples, *decoder.get(), parse_number_list(a.sweep), cfg.generation,
                                          embedder.get());
      write_text_file(out_dir / "temperature_sweep.json", dump(to_json(rows)) + "\n");
      write_text_file(out_dir / "temperature_sweep.csv", sweep_csv(rows));
      write_text_file(out_dir / "temperature_sweep.svg", sweep_svg(rows));
      out["temperature_sweep"] = to_json(rows);
    }
  } else if (!a.sweep.empty()) {
    throw InvalidInput("--sweep-temperature needs --dataset");
  }

  if (!a.runs.empty()) {
    const auto report = fidelity_suite(a.runs, {}, embedder.get(), cfg.treatment);
    write_text_file(out_dir / "fidelity_report.json", dump(to_json(report)) + "\n");
    write_text_file(out_dir / "fidelity_report.csv", to_csv(report));
    out["fidelity"] = to_json(report);
  }
  write_text_file(out_dir / "evaluation.json", dump(out) + "\n");
  emit(out);
  return 0;
}

std::atomic<bool> g_stop{false};
extern "C" void on_signal(int) { g_stop = true; }

struct ServeArgs {
  std::string host, promptgen_adapter, inpaint_adapter, jobs_dir;
  std::optional<int> port;
};

int cmd_serve(const Common& c, const ServeArgs& a) {
  AppConfig cfg = resolve(c);
  if (!a.host.empty()) cfg.service.host = a.host;
  if (a.port) cfg.service.port = *a.port;
  if (!a.promptgen_adapter.empty()) cfg.models.promptgen_adapter = a.promptgen_adapter;
  if (!a.inpaint_adapter.empty()) cfg.models.inpaint_adapter = a.inpaint_adapter;
  cfg = config_from_json(to_json(cfg));

  std::optional<PromptGenModel> promptgen;
  if (!cfg.models.promptgen_adapter.empty()) promptgen = load_promptgen_model(cfg.models.promptgen_adapter);
  const auto inpaint =
      load_inpaint_model(cfg.models.inpaint_adapter, cfg.models.inpaint_image_side, cfg.models.max_tokens);
  ServiceModels models;
  if (promptgen) models.decoder = promptgen->backbone.get();
  models.inpaint = inpaint.model();

  const fs::path jobs = a.jobs_dir.empty() ? fs::path(cfg.work_dir) / "jobs" : fs::path(a.jobs_dir);
  Service svc(cfg, std::move(models), jobs);
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  const int port = svc.start(cfg.service.host, cfg.service.port);
  json ready = run_info(cfg);
  ready["listening"] = cfg.service.host + ":" + std::to_string(port);
  ready["promptgen_loaded"] = promptgen.has_value();
  std::cout << dump(ready, -1) << std::endl;
  while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  svc.stop();
  return 0;
}

json diagnostic(const std::string& verb, const std::string& kind, const std::string& message) {
  return {{"error", {{"verb", verb}, {"kind", kind}, {"message", message}}}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mmpaint: multi-mask inpainting toolkit"};
  app.require_subcommand(1);
  Common common;

  AnnotateArgs ann;
  auto* annotate_cmd = app.add_subcommand("annotate", "Ground and caption raw images into object records");
  add_common(annotate_cmd, common);
  annotate_cmd->add_option("--images", ann.images, "Directory of PNG images")->required();
  annotate_cmd->add_option("--out", ann.out, "Annotation directory")->required();
  annotate_cmd->add_option("--workers", ann.workers, "Worker threads");
  annotate_cmd->add_option("--min-area", ann.min_area, "Minimum box area fraction");
  annotate_cmd->add_option("--max-area", ann.max_area, "Maximum box area fraction");
  annotate_cmd->add_option("--grounding-fixtures", ann.fixtures, "Directory of canned grounding replies");

  PrepareArgs prep;
  auto* prepare_cmd = app.add_subcommand("prepare-dataset", "Build training examples from annotations");
  add_common(prepare_cmd, common);
  prepare_cmd->add_option("--annotations", prep.annotations, "Annotation directory")->required();
  prepare_cmd->add_option("--out", prep.out, "Dataset directory")->required();
  prepare_cmd->add_option("--side", prep.side, "Square side of prepared images");

  TrainArgs tp;
  auto* tp_cmd = app.add_subcommand("train-promptgen", "Fine-tune the prompt generator adapter");
  add_common(tp_cmd, common);
  tp_cmd->add_option("--dataset", tp.dataset, "Dataset directory")->required();
  tp_cmd->add_option("--out", tp.out, "Adapter directory")->required();
  tp_cmd->add_option("--max-steps", tp.max_steps, "Step budget (overrides epochs)");
  tp_cmd->add_option("--epochs", tp.epochs, "Epochs");

  TrainArgs ti;
  std::optional<int> ti_side;
  auto* ti_cmd = app.add_subcommand("train-inpaint", "Fine-tune the inpainting adapter");
  add_common(ti_cmd, common);
  ti_cmd->add_option("--dataset", ti.dataset, "Dataset directory")->required();
  ti_cmd->add_option("--out", ti.out, "Adapter directory")->required();
  ti_cmd->add_option("--max-steps", ti.max_steps, "Step budget (overrides epochs)");
  ti_cmd->add_option("--epochs", ti.epochs, "Epochs");
  ti_cmd->add_option("--image-side", ti_side, "Image side of the toy stack (must match the dataset)");

  SuggestArgs sug;
  auto* suggest_cmd = app.add_subcommand("suggest", "Suggest per-region prompts");
  add_common(suggest_cmd, common);
  add_inputs(suggest_cmd, sug.in);
  suggest_cmd->add_option("--adapter", sug.adapter, "Prompt generator adapter directory");
  suggest_cmd->add_option("--scripted", sug.scripted, "Replay answers from a file instead of a model");
  suggest_cmd->add_option("--temperature", sug.temperature, "Sampling temperature");
  suggest_cmd->add_option("--num-samples", sug.num_samples, "Suggestion sets");
  suggest_cmd->add_option("--max-new-tokens", sug.max_new_tokens, "Token budget per answer");
  suggest_cmd->add_option("--out", sug.out, "Also write suggestions.json and overlay.png here");

  InpaintArgs inp;
  auto* inpaint_cmd = app.add_subcommand("inpaint", "Inpaint every masked region");
  add_common(inpaint_cmd, common);
  add_inputs(inpaint_cmd, inp.in);
  inpaint_cmd->add_option("--prompts", inp.prompts, "One prompt per mask, same order")->required();
  inpaint_cmd->add_option("--mode", inp.mode, "rca, concat or repeated");
  inpaint_cmd->add_option("--steps", inp.steps, "Sampler steps");
  inpaint_cmd->add_option("--cfg", inp.cfg_weight, "Guidance weight");
  inpaint_cmd->add_flag("--no-composite", inp.no_composite, "Keep generated pixels outside the masks");
  inpaint_cmd->add_option("--adapter", inp.adapter, "Inpainting adapter directory");
  inpaint_cmd->add_option("--out", inp.out, "Job directory")->required();

  EvaluateArgs ev;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Prompt generation and inpainting metrics");
  add_common(evaluate_cmd, common);
  evaluate_cmd->add_option("--dataset", ev.dataset, "Dataset with reference prompts");
  evaluate_cmd->add_option("--adapter", ev.adapter, "Prompt generator adapter directory");
  evaluate_cmd->add_option("--scripted", ev.scripted, "Replay answers from a file instead of a model");
  evaluate_cmd->add_option("--sweep-temperature", ev.sweep, "Comma-separated temperatures");
  evaluate_cmd->add_option("--num-samples", ev.num_samples, "Samples per example");
  evaluate_cmd->add_option("--temperature", ev.temperature, "Temperature of the main report");
  evaluate_cmd->add_option("--runs", ev.runs, "Directory of inpainting job directories");
  evaluate_cmd->add_option("--out", ev.out, "Report directory");

  ServeArgs srv;
  auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP service");
  add_common(serve_cmd, common);
  serve_cmd->add_option("--host", srv.host, "Bind address");
  serve_cmd->add_option("--port", srv.port, "Port (0 picks a free one)");
  serve_cmd->add_option("--promptgen-adapter", srv.promptgen_adapter, "Prompt generator adapter directory");
  serve_cmd->add_option("--inpaint-adapter", srv.inpaint_adapter, "Inpainting adapter directory");
  serve_cmd->add_option("--jobs-dir", srv.jobs_dir, "Job artifact directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    const auto* sub = app.get_subcommands().empty() ? nullptr : app.get_subcommands().front();
    std::cerr << dump(diagnostic(sub ? sub->get_name() : "", "usage", e.what()), -1) << "\n";
    return 2;
  }

  const std::string verb = app.get_subcommands().front()->get_name();
  try {
    if (verb == "annotate") return cmd_annotate(common, ann);
    if (verb == "prepare-dataset") return cmd_prepare(common, prep);
    if (verb == "train-promptgen") return cmd_train_promptgen(common, tp);
    if (verb == "train-inpaint") return cmd_train_inpaint(common, ti, ti_side);
    if (verb == "suggest") return cmd_suggest(common, sug);
    if (verb == "inpaint") return cmd_inpaint(common, inp);
    if (verb == "evaluate") return cmd_evaluate(common, ev);
    if (verb == "serve") return cmd_serve(common, srv);
  } catch (const ValidationError& e) {
    auto d = diagnostic(verb, "validation", e.what());
    d["error"]["fields"] = to_json(e.issues());
    std::cerr << dump(d, -1) << "\n";
    return 2;
  } catch (const InvalidInput& e) {
    std::cerr << dump(diagnostic(verb, "invalid_input", e.what()), -1) << "\n";
    return 2;
  } catch (const ProviderError& e) {
    std::cerr << dump(diagnostic(verb, "provider", e.what()), -1) << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << dump(diagnostic(verb, "internal", e.what()), -1) << "\n";
    return 1;
  }
  return 1;
}
