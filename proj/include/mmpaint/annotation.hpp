// Copyright 2026 The mmpaint Authors
// SPDX-License-Identifier: Apache-2.0

// Object-level annotation of raw images: grounding, per-object captions,
// a restartable JSONL store, alignment audits and training-set preparation.

#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmpaint/mask_geometry.hpp"
#include "mmpaint/model_clients.hpp"
#include "mmpaint/tokenizer.hpp"

namespace mmpaint {

struct GroundedEntity {
  std::string noun_chunk;
  std::string root;  // syntactic head, a single word of noun_chunk
  std::vector<BBox> bboxes;
};

struct GroundedDescription {
  std::string caption;
  std::vector<GroundedEntity> entities;
  /// Entities dropped while parsing, with reasons.
  std::vector<std::string> diagnostics;
};

/// Root of a noun chunk. Supplied by an NLP preprocessing step; the
/// fallback used when a provider omits roots is last_word_root.
using RootExtractor = std::function<std::string(const std::string& noun_chunk)>;

/// Last alphabetic word, lowercased.
std::string last_word_root(const std::string& noun_chunk);

/// Converts a grounded-v1 reply into pixel boxes at `image_size`.
/// Entities without boxes or without a usable root are dropped with a
/// diagnostic. Throws ProviderError when the reply is not grounded-v1.
GroundedDescription parse_grounded_reply(const nlohmann::json& reply, Resolution image_size,
                                         const RootExtractor& root_extractor = last_word_root);

/// Converts location-token markup such as
///   "<phrase>a tree</phrase><object><patch_index_0044><patch_index_0863></object>"
/// (several boxes separated by "</delimiter_of_multi_objects/>") on a
/// bins x bins grid into a grounded-v1 reply. Markup tags are removed from
/// the caption.
nlohmann::json grounded_reply_from_markup(const std::string& markup, int bins = 32);

inline constexpr const char* kGroundingPrompt = "What are the details of this painting?";

GroundedDescription ground_image(const std::string& image_id, const RgbImage& image, GroundingClient& client,
                                 const RootExtractor& root_extractor = last_word_root, std::uint64_t seed = 0);

struct CaptionTemplate {
  /// Placeholder: {noun_chunk}.
  std::string prompt = "What are the details of this image containing {noun_chunk} in a short sentence? "
                       "Ignore the painting style";
  std::string prefix = "The image shows";
};

struct CaptionOptions {
  CaptionTemplate tmpl;
  int token_cap = 40;
  /// Counts tokens with this tokenizer; whitespace-separated words when null.
  const Tokenizer* tokenizer = nullptr;
  std::uint64_t seed = 0;
};

/// First `cap` tokens of `text`, cut at the end of the last kept token.
std::string truncate_tokens(const std::string& text, int cap, const Tokenizer* tokenizer = nullptr);

struct CaptionOutcome {
  std::string caption;  // prefix + reply, capped; empty when invalid
  bool collage_used = false;
  RgbImage visual;      // the crop or collage that was sent
  int attempts = 0;
  bool valid = false;
  std::string diagnostic;
};

/// Crops a single box, or builds a collage when the entity has two or more.
/// An empty reply is retried once with seed + 1.
CaptionOutcome caption_object(const RgbImage& image, const GroundedEntity& entity, CaptionClient& client,
                              const CaptionOptions& options = {});

struct AnnotationRecord {
  std::string image_id;
  int entity_index = 0;
  std::string noun_chunk;
  std::string root;
  std::vector<BBox> bboxes;
  std::string object_caption;
  bool collage_used = false;
  std::optional<double> clip_sim;
  Resolution image_size;
  std::string image_path;  // relative to the annotation directory
  std::string crop_path;
};

nlohmann::json to_json(const AnnotationRecord& r);
/// Validates the schema, the box filter and the caption; throws InvalidInput.
AnnotationRecord annotation_record_from_json(const nlohmann::json& j, const MaskRules& rules = {});

struct ImageEntry {
  std::string image_id;
  std::string image_path;
  std::string caption;
  Resolution size;
  int entity_count = 0;
  std::optional<double> clip_sim;
};

nlohmann::json to_json(const ImageEntry& e);
ImageEntry image_entry_from_json(const nlohmann::json& j);

struct SkipEntry {
  std::string image_id;
  std::optional<int> entity_index;
  std::string reason;
  /// Provider failures are retried on the next run; rule-based skips are not.
  bool retryable = false;
};

nlohmann::json to_json(const SkipEntry& e);

struct ImageSource {
  std::string image_id;
  std::filesystem::path path;
};

/// PNG files directly under `dir`, sorted by name; ids are file stems.
std::vector<ImageSource> list_images(const std::filesystem::path& dir);

struct AnnotationClients {
  GroundingClient* grounder = nullptr;
  CaptionClient* captioner = nullptr;
  EmbeddingClient* embedder = nullptr;  // optional: fills clip_sim
  RootExtractor root_extractor = last_word_root;
};

struct AnnotationOptions {
  MaskRules rules;
  int workers = 4;
  CaptionOptions caption;
  std::uint64_t seed = 0;
};

struct AnnotationSummary {
  int images_total = 0;
  int images_processed = 0;
  int images_already_done = 0;
  int records_written = 0;
  int records_already_done = 0;
  std::vector<SkipEntry> skipped;
};

nlohmann::json to_json(const AnnotationSummary& s);

/// Output layout under `out_dir`: records.jsonl (one line per entity),
/// images.jsonl (one line per finished image), skipped.jsonl and PNG blobs
/// under blobs/. Reruns skip finished images and (image_id, entity_index)
/// keys already present.
AnnotationSummary annotate(const std::vector<ImageSource>& images, const AnnotationClients& clients,
                           const std::filesystem::path& out_dir, const AnnotationOptions& options = {});

struct AnnotationStore {
  std::vector<ImageEntry> images;
  std::vector<AnnotationRecord> records;
};

/// Reads and validates an annotation directory. A torn final line (no
/// trailing newline) is ignored; any other invalid line throws InvalidInput.
AnnotationStore load_annotations(const std::filesystem::path& dir, const MaskRules& rules = {});

struct AuditSummary {
  double threshold = 0.28;
  double global_mean = 0;  // image vs grounded caption
  double local_mean = 0;   // crop or collage vs object caption
  int global_count = 0;
  int local_count = 0;
  std::vector<std::pair<std::string, int>> flagged;  // (image_id, entity_index) below threshold
};

nlohmann::json to_json(const AuditSummary& s);

AuditSummary audit_alignment(const AnnotationStore& store, const std::filesystem::path& dir, EmbeddingClient& embedder,
                             double threshold = 0.28);

struct DatasetOptions {
  int side = 512;
  MaskRules rules;
  std::uint64_t seed = 0;
};

struct DatasetRegion {
  int entity_index = 0;
  std::string noun_chunk;
  std::string root;
  std::string prompt;
  std::vector<BBox> bboxes;  // in the prepared frame
  std::string mask_path;
};

struct DatasetExample {
  std::string image_id;
  std::string image_path;  // prepared side x side image, relative to the dataset directory
  std::vector<DatasetRegion> regions;
};

nlohmann::json to_json(const DatasetExample& e);
DatasetExample dataset_example_from_json(const nlohmann::json& j);

struct DatasetSummary {
  int examples = 0;
  int dropped_images = 0;
  std::vector<SkipEntry> skipped;
};

/// Resizes and center-crops each image, maps entity boxes into that frame,
/// re-applies the area filter and selects training masks with a seed
/// derived from (seed, image_id). Multi-box entities become one mask, the
/// union of their boxes. Writes dataset.jsonl and blobs under `out_dir`.
DatasetSummary prepare_dataset(const AnnotationStore& store, const std::filesystem::path& annotation_dir,
                               const std::filesystem::path& out_dir, const DatasetOptions& options = {});

std::vector<DatasetExample> load_dataset(const std::filesystem::path& dir);

/// Image and masks of a prepared example, in region order.
std::pair<RgbImage, MaskSet> load_example_inputs(const DatasetExample& e, const std::filesystem::path& dir);

}  // namespace mmpaint
