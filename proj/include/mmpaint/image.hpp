// Copyright 2026 The mmpaint Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mmpaint/types.hpp"

namespace mmpaint {

struct Rgb {
  std::uint8_t r = 0;
  std::uint8_t g = 0;
  std::uint8_t b = 0;
  friend bool operator==(const Rgb&, const Rgb&) = default;
};

/// 8-bit RGB image stored as three planar channels.
class RgbImage {
 public:
  using Channel = Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

  RgbImage() = default;
  RgbImage(int height, int width, Rgb fill = {});

  int height() const { return static_cast<int>(channels_[0].rows()); }
  int width() const { return static_cast<int>(channels_[0].cols()); }
  Resolution size() const { return {height(), width()}; }
  bool empty() const { return channels_[0].size() == 0; }

  Rgb at(int y, int x) const {
    return {channels_[0](y, x), channels_[1](y, x), channels_[2](y, x)};
  }
  void set(int y, int x, Rgb c) {
    channels_[0](y, x) = c.r;
    channels_[1](y, x) = c.g;
    channels_[2](y, x) = c.b;
  }

  Channel& channel(int c) { return channels_[c]; }
  const Channel& channel(int c) const { return channels_[c]; }

  friend bool operator==(const RgbImage& a, const RgbImage& b);

 private:
  std::array<Channel, 3> channels_;
};

/// Planar float image, values nominally in [0, 1].
struct FloatImage {
  std::array<Eigen::ArrayXXf, 3> channels;

  int height() const { return static_cast<int>(channels[0].rows()); }
  int width() const { return static_cast<int>(channels[0].cols()); }
};

FloatImage to_float(const RgbImage& image);
RgbImage to_rgb8(const FloatImage& image);

/// Copies the pixels inside `box` (clipped to the image).
RgbImage crop(const RgbImage& image, const BBox& box);

RgbImage resize_bilinear(const RgbImage& image, int height, int width);

/// Maps source pixel coordinates into a resized-then-center-cropped frame.
struct ResizeCropTransform {
  double scale = 1.0;
  int offset_x = 0;
  int offset_y = 0;
  int side = 0;

  /// Transformed box, clipped to the square frame; may be malformed if the
  /// box falls entirely into the cropped-away margin.
  BBox apply(const BBox& box) const;
};

ResizeCropTransform resize_crop_transform(Resolution source, int side);

/// Resizes the shorter side to `side`, then center-crops to side x side.
RgbImage resize_center_crop(const RgbImage& image, int side);

/// Sets every pixel with mask == true to `fill`.
RgbImage fill_masked(const RgbImage& image, const MaskGrid& mask, Rgb fill = {});

/// Pixels where `mask` is false are taken from `source`, the rest from `generated`.
RgbImage composite(const RgbImage& generated, const RgbImage& source,
                   const MaskGrid& mask);

// PNG codec (8-bit). Masks are single-channel 0/255.
std::vector<std::uint8_t> encode_png(const RgbImage& image);
RgbImage decode_png(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_mask_png(const MaskGrid& mask);
/// Any pixel with luminance > 127 is inside the mask.
MaskGrid decode_mask_png(std::span<const std::uint8_t> bytes);

RgbImage read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const RgbImage& image);
MaskGrid read_mask_png(const std::filesystem::path& path);
void write_mask_png(const std::filesystem::path& path, const MaskGrid& mask);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path,
                      std::span<const std::uint8_t> bytes);
std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

}  // namespace mmpaint
