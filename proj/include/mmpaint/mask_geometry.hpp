// Copyright 2026 The mmpaint Authors
// SPDX-License-Identifier: Apache-2.0

// Binary masks, dataset selection rules, colored overlays and collages.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmpaint/image.hpp"
#include "mmpaint/types.hpp"

namespace mmpaint {

enum class MaskSource { bbox, freehand };

std::string to_string(MaskSource source);
MaskSource mask_source_from_string(const std::string& text);

class Mask {
 public:
  /// Filled rectangle; the box is clipped to the image.
  static Mask from_bbox(const BBox& box, Resolution image_size);
  static Mask from_grid(MaskGrid grid);

  const MaskGrid& grid() const { return grid_; }
  MaskSource source() const { return source_; }
  const std::optional<BBox>& bbox() const { return bbox_; }
  long long area_px() const { return area_px_; }
  Resolution size() const {
    return {static_cast<int>(grid_.rows()), static_cast<int>(grid_.cols())};
  }

 private:
  Mask(MaskGrid grid, MaskSource source, std::optional<BBox> box);

  MaskGrid grid_;
  MaskSource source_ = MaskSource::freehand;
  std::optional<BBox> bbox_;
  long long area_px_ = 0;
};

struct MaskRules {
  double min_area_fraction = 0.01;
  double max_area_fraction = 0.65;
  int max_masks = 5;
  double total_area_cap = 0.65;
};

/// Ordered masks over one image; 1 <= n <= max_masks.
class MaskSet {
 public:
  /// Empty placeholder; operations that consume masks reject it.
  MaskSet() = default;
  MaskSet(std::vector<Mask> masks, Resolution image_size, int max_masks = MaskRules{}.max_masks);

  const std::vector<Mask>& masks() const { return masks_; }
  const Mask& operator[](std::size_t i) const { return masks_[i]; }
  std::size_t size() const { return masks_.size(); }
  Resolution image_size() const { return image_size_; }

  MaskGrid union_grid() const;
  long long union_area() const { return union_grid().count(); }

  /// Indices ordered by descending area, ties by index.
  std::vector<std::size_t> draw_order() const;

 private:
  std::vector<Mask> masks_;
  Resolution image_size_;
};

struct BBoxDiagnostic {
  std::size_t index = 0;
  std::string reason;
};

struct BBoxFilterResult {
  std::vector<BBox> kept;
  std::vector<BBoxDiagnostic> rejected;
};

/// Keeps boxes whose area fraction lies in [min_area_fraction, max_area_fraction].
BBoxFilterResult filter_bboxes(const std::vector<BBox>& boxes, Resolution image_size,
                               const MaskRules& rules = {});

/// Largest-first greedy admission under the mask-count and union-area caps,
/// then a seeded shuffle. Empty result means the image has no valid masks.
std::optional<MaskSet> select_training_masks(const std::vector<Mask>& candidates,
                                             Resolution image_size, std::uint64_t seed,
                                             const MaskRules& rules = {});

/// The same selection as candidate indices, in final (shuffled) order.
std::vector<std::size_t> select_training_mask_indices(const std::vector<Mask>& candidates, Resolution image_size,
                                                     std::uint64_t seed, const MaskRules& rules = {});

struct PaletteColor {
  std::string name;
  Rgb rgb;
};

using Palette = std::vector<PaletteColor>;

/// red, green, blue, yellow, purple.
const Palette& default_palette();

/// Throws InvalidInput unless names are distinct single lowercase ASCII words
/// and colors are distinct.
void validate_palette(const Palette& palette);

const PaletteColor& find_color(const Palette& palette, const std::string& name);

struct ColorAssignment {
  std::size_t mask_index = 0;
  std::string color_name;
  friend bool operator==(const ColorAssignment&, const ColorAssignment&) = default;
};

struct ColoredOverlayImage {
  RgbImage pixels;
  /// In draw order (largest mask first).
  std::vector<ColorAssignment> color_assignment;
};

ColoredOverlayImage render_overlay(const RgbImage& image, const MaskSet& masks,
                                   const Palette& palette, std::uint64_t seed);

struct CollagePlacement {
  std::size_t bbox_index = 0;
  int row = 0;
  int col = 0;
};

struct Collage {
  RgbImage pixels;
  int rows = 0;
  int cols = 0;
  int cell_width = 0;
  int cell_height = 0;
  std::vector<CollagePlacement> placements;
};

inline constexpr Rgb kCollageFill{255, 255, 255};

/// Square grid of crops, ceil(sqrt(k)) per side, cells sized to the largest
/// crop, crops pasted top-left, unused cells white.
Collage build_collage(const RgbImage& image, const std::vector<BBox>& boxes);

nlohmann::json mask_sidecar(const Mask& mask);
/// Writes <stem>.png and <stem>.json.
void save_mask(const std::filesystem::path& stem, const Mask& mask);
Mask load_mask(const std::filesystem::path& stem);

nlohmann::json to_json(const BBox& box);
BBox bbox_from_json(const nlohmann::json& j);

}  // namespace mmpaint
