// Copyright 2026 The mmpaint Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmpaint/mask_geometry.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>

#include "mmpaint/random.hpp"

namespace mmpaint {

std::string to_string(MaskSource source) {
  return source == MaskSource::bbox ? "bbox" : "freehand";
}

MaskSource mask_source_from_string(const std::string& text) {
  if (text == "bbox") return MaskSource::bbox;
  if (text == "freehand") return MaskSource::freehand;
  throw InvalidInput("unknown mask source '" + text + "'");
}

Mask::Mask(MaskGrid grid, MaskSource source, std::optional<BBox> box)
    : grid_(std::move(grid)), source_(source), bbox_(box), area_px_(grid_.count()) {}

Mask Mask::from_bbox(const BBox& box, Resolution image_size) {
  if (!box.well_formed()) throw InvalidInput("malformed bbox");
  BBox clipped{std::clamp(box.x0, 0, image_size.width), std::clamp(box.y0, 0, image_size.height),
               std::clamp(box.x1, 0, image_size.width), std::clamp(box.y1, 0, image_size.height)};
  if (!clipped.well_formed()) throw InvalidInput("bbox lies outside the image");
  MaskGrid grid = MaskGrid::Constant(image_size.height, image_size.width, false);
  grid.block(clipped.y0, clipped.x0, clipped.height(), clipped.width()).setConstant(true);
  return Mask(std::move(grid), MaskSource::bbox, clipped);
}

Mask Mask::from_grid(MaskGrid grid) { return Mask(std::move(grid), MaskSource::freehand, {}); }

MaskSet::MaskSet(std::vector<Mask> masks, Resolution image_size, int max_masks)
    : masks_(std::move(masks)), image_size_(image_size) {
  if (masks_.empty()) throw InvalidInput("mask set must contain at least one mask");
  if (static_cast<int>(masks_.size()) > max_masks) {
    throw InvalidInput("mask set holds " + std::to_string(masks_.size()) +
                       " masks, the limit is " + std::to_string(max_masks));
  }
  for (const auto& m : masks_) {
    if (m.size() != image_size_) throw InvalidInput("mask size does not match image size");
  }
}

MaskGrid MaskSet::union_grid() const {
  MaskGrid u = MaskGrid::Constant(image_size_.height, image_size_.width, false);
  for (const auto& m : masks_) u = u || m.grid();
  return u;
}

std::vector<std::size_t> MaskSet::draw_order() const {
  std::vector<std::size_t> order(masks_.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return masks_[a].area_px() > masks_[b].area_px();
  });
  return order;
}

BBoxFilterResult filter_bboxes(const std::vector<BBox>& boxes, Resolution image_size,
                               const MaskRules& rules) {
  BBoxFilterResult result;
  const double image_area = static_cast<double>(image_size.height) * image_size.width;
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const BBox& b = boxes[i];
    if (!b.well_formed()) {
      result.rejected.push_back({i, "malformed bbox (x1<=x0 or y1<=y0)"});
      continue;
    }
    if (b.x0 < 0 || b.y0 < 0 || b.x1 > image_size.width || b.y1 > image_size.height) {
      result.rejected.push_back({i, "bbox exceeds image bounds"});
      continue;
    }
    const double fraction = static_cast<double>(b.area()) / image_area;
    if (fraction < rules.min_area_fraction) {
      result.rejected.push_back({i, "area below minimum fraction"});
    } else if (fraction > rules.max_area_fraction) {
      result.rejected.push_back({i, "area above maximum fraction"});
    } else {
      result.kept.push_back(b);
    }
  }
  return result;
}

std::vector<std::size_t> select_training_mask_indices(const std::vector<Mask>& candidates, Resolution image_size,
                                                     std::uint64_t seed, const MaskRules& rules) {
  std::vector<std::size_t> order(candidates.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return candidates[a].area_px() > candidates[b].area_px();
  });

  const double cap = rules.total_area_cap * image_size.height * image_size.width;
  MaskGrid covered = MaskGrid::Constant(image_size.height, image_size.width, false);
  std::vector<std::size_t> kept;
  for (std::size_t idx : order) {
    if (static_cast<int>(kept.size()) >= rules.max_masks) break;
    const Mask& m = candidates[idx];
    if (m.size() != image_size) throw InvalidInput("candidate mask size mismatch");
    MaskGrid trial = covered || m.grid();
    if (static_cast<double>(trial.count()) > cap) continue;
    covered = std::move(trial);
    kept.push_back(idx);
  }
  Rng rng(seed);
  rng.shuffle(kept);
  return kept;
}

std::optional<MaskSet> select_training_masks(const std::vector<Mask>& candidates,
                                             Resolution image_size, std::uint64_t seed,
                                             const MaskRules& rules) {
  const auto kept = select_training_mask_indices(candidates, image_size, seed, rules);
  if (kept.empty()) return std::nullopt;
  std::vector<Mask> masks;
  for (auto i : kept) masks.push_back(candidates[i]);
  return MaskSet(std::move(masks), image_size, rules.max_masks);
}

const Palette& default_palette() {
  static const Palette palette{{"red", {255, 0, 0}},
                               {"green", {0, 255, 0}},
                               {"blue", {0, 0, 255}},
                               {"yellow", {255, 255, 0}},
                               {"purple", {128, 0, 128}}};
  return palette;
}

void validate_palette(const Palette& palette) {
  std::set<std::string> names;
  std::set<std::tuple<int, int, int>> colors;
  for (const auto& c : palette) {
    if (c.name.empty() ||
        !std::all_of(c.name.begin(), c.name.end(), [](char ch) { return ch >= 'a' && ch <= 'z'; })) {
      throw InvalidInput("palette color name '" + c.name + "' must be a single lowercase word");
    }
    if (!names.insert(c.name).second) throw InvalidInput("duplicate palette name " + c.name);
    if (!colors.insert({c.rgb.r, c.rgb.g, c.rgb.b}).second) {
      throw InvalidInput("duplicate palette color for " + c.name);
    }
  }
}

const PaletteColor& find_color(const Palette& palette, const std::string& name) {
  for (const auto& c : palette)
    if (c.name == name) return c;
  throw InvalidInput("color '" + name + "' not in palette");
}

ColoredOverlayImage render_overlay(const RgbImage& image, const MaskSet& masks,
                                   const Palette& palette, std::uint64_t seed) {
  validate_palette(palette);
  if (masks.size() > palette.size()) {
    std::string names;
    for (const auto& c : palette) names += (names.empty() ? "" : ", ") + c.name;
    throw InvalidInput("need " + std::to_string(masks.size()) + " colors but palette has " +
                       std::to_string(palette.size()) + ": [" + names + "]");
  }
  if (image.size() != masks.image_size()) throw InvalidInput("overlay: image/mask size mismatch");

  std::vector<std::size_t> color_order(palette.size());
  std::iota(color_order.begin(), color_order.end(), 0);
  Rng rng(seed);
  rng.shuffle(color_order);

  ColoredOverlayImage out;
  out.pixels = image;
  for (std::size_t idx : masks.draw_order()) {
    const PaletteColor& color = palette[color_order[idx]];
    out.pixels = fill_masked(out.pixels, masks[idx].grid(), color.rgb);
    out.color_assignment.push_back({idx, color.name});
  }
  return out;
}

Collage build_collage(const RgbImage& image, const std::vector<BBox>& boxes) {
  if (boxes.size() < 2) throw InvalidInput("collage needs at least two boxes");
  Collage c;
  for (const auto& b : boxes) {
    if (!b.well_formed()) throw InvalidInput("malformed bbox in collage");
    c.cell_width = std::max(c.cell_width, b.width());
    c.cell_height = std::max(c.cell_height, b.height());
  }
  int side = 1;
  while (static_cast<std::size_t>(side) * side < boxes.size()) ++side;
  c.rows = side;
  c.cols = side;
  c.pixels = RgbImage(side * c.cell_height, side * c.cell_width, kCollageFill);
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const int row = static_cast<int>(i) / side;
    const int col = static_cast<int>(i) % side;
    const RgbImage piece = crop(image, boxes[i]);
    for (int ch = 0; ch < 3; ++ch) {
      c.pixels.channel(ch).block(row * c.cell_height, col * c.cell_width, piece.height(),
                                 piece.width()) = piece.channel(ch);
    }
    c.placements.push_back({i, row, col});
  }
  return c;
}

nlohmann::json to_json(const BBox& box) { return nlohmann::json::array({box.x0, box.y0, box.x1, box.y1}); }

BBox bbox_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 4) throw InvalidInput("bbox must be [x0, y0, x1, y1]");
  return {j[0].get<int>(), j[1].get<int>(), j[2].get<int>(), j[3].get<int>()};
}

nlohmann::json mask_sidecar(const Mask& mask) {
  nlohmann::json j;
  j["source"] = to_string(mask.source());
  j["bbox"] = mask.bbox() ? to_json(*mask.bbox()) : nlohmann::json(nullptr);
  j["area_px"] = mask.area_px();
  return j;
}

void save_mask(const std::filesystem::path& stem, const Mask& mask) {
  auto png = stem;
  png += ".png";
  auto sidecar = stem;
  sidecar += ".json";
  write_mask_png(png, mask.grid());
  std::ofstream(sidecar) << mask_sidecar(mask).dump(2) << "\n";
}

Mask load_mask(const std::filesystem::path& stem) {
  auto png = stem;
  png += ".png";
  auto sidecar = stem;
  sidecar += ".json";
  MaskGrid grid = read_mask_png(png);
  nlohmann::json meta;
  if (std::ifstream in(sidecar); in) in >> meta;
  if (!meta.is_null() && meta.value("source", "freehand") == "bbox" && meta["bbox"].is_array()) {
    Mask m = Mask::from_bbox(bbox_from_json(meta["bbox"]),
                             {static_cast<int>(grid.rows()), static_cast<int>(grid.cols())});
    if (!(m.grid() == grid).all()) throw InvalidInput("mask png disagrees with its bbox sidecar");
    return m;
  }
  return Mask::from_grid(std::move(grid));
}

}  // namespace mmpaint
