// Copyright 2026 The mmpaint Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmpaint/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>

#include <png.h>

namespace mmpaint {

RgbImage::RgbImage(int height, int width, Rgb fill) {
  if (height < 0 || width < 0) throw InvalidInput("negative image size");
  channels_[0] = Channel::Constant(height, width, fill.r);
  channels_[1] = Channel::Constant(height, width, fill.g);
  channels_[2] = Channel::Constant(height, width, fill.b);
}

bool operator==(const RgbImage& a, const RgbImage& b) {
  if (a.size() != b.size()) return false;
  for (int c = 0; c < 3; ++c) {
    if (!(a.channels_[c] == b.channels_[c]).all()) return false;
  }
  return true;
}

FloatImage to_float(const RgbImage& image) {
  FloatImage out;
  for (int c = 0; c < 3; ++c) out.channels[c] = image.channel(c).cast<float>() / 255.0f;
  return out;
}

RgbImage to_rgb8(const FloatImage& image) {
  RgbImage out(image.height(), image.width());
  for (int c = 0; c < 3; ++c) {
    out.channel(c) = (image.channels[c].max(0.0f).min(1.0f) * 255.0f)
                         .round()
                         .cast<std::uint8_t>();
  }
  return out;
}

RgbImage crop(const RgbImage& image, const BBox& box) {
  const int x0 = std::clamp(box.x0, 0, image.width());
  const int x1 = std::clamp(box.x1, 0, image.width());
  const int y0 = std::clamp(box.y0, 0, image.height());
  const int y1 = std::clamp(box.y1, 0, image.height());
  if (x1 <= x0 || y1 <= y0) throw InvalidInput("crop box is empty after clipping");
  RgbImage out(y1 - y0, x1 - x0);
  for (int c = 0; c < 3; ++c) {
    out.channel(c) = image.channel(c).block(y0, x0, y1 - y0, x1 - x0);
  }
  return out;
}

RgbImage resize_bilinear(const RgbImage& image, int height, int width) {
  if (image.empty() || height <= 0 || width <= 0) throw InvalidInput("resize of empty image");
  if (height == image.height() && width == image.width()) return image;
  RgbImage out(height, width);
  const double sy = static_cast<double>(image.height()) / height;
  const double sx = static_cast<double>(image.width()) / width;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, image.height() - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, image.height() - 1);
    const double wy = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, image.width() - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, image.width() - 1);
      const double wx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        const auto& ch = image.channel(c);
        const double v = (1 - wy) * ((1 - wx) * ch(y0, x0) + wx * ch(y0, x1)) +
                         wy * ((1 - wx) * ch(y1, x0) + wx * ch(y1, x1));
        out.channel(c)(y, x) = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
      }
    }
  }
  return out;
}

ResizeCropTransform resize_crop_transform(Resolution source, int side) {
  if (source.height <= 0 || source.width <= 0 || side <= 0) {
    throw InvalidInput("resize_crop_transform: empty size");
  }
  ResizeCropTransform t;
  t.side = side;
  t.scale = static_cast<double>(side) / std::min(source.height, source.width);
  const int scaled_w = std::max(side, static_cast<int>(std::lround(source.width * t.scale)));
  const int scaled_h = std::max(side, static_cast<int>(std::lround(source.height * t.scale)));
  t.offset_x = (scaled_w - side) / 2;
  t.offset_y = (scaled_h - side) / 2;
  return t;
}

BBox ResizeCropTransform::apply(const BBox& box) const {
  auto map = [&](int v, int offset) {
    return std::clamp(static_cast<int>(std::lround(v * scale)) - offset, 0, side);
  };
  return {map(box.x0, offset_x), map(box.y0, offset_y), map(box.x1, offset_x),
          map(box.y1, offset_y)};
}

RgbImage resize_center_crop(const RgbImage& image, int side) {
  const auto t = resize_crop_transform(image.size(), side);
  const int scaled_w = std::max(side, static_cast<int>(std::lround(image.width() * t.scale)));
  const int scaled_h = std::max(side, static_cast<int>(std::lround(image.height() * t.scale)));
  const RgbImage scaled = resize_bilinear(image, scaled_h, scaled_w);
  return crop(scaled, {t.offset_x, t.offset_y, t.offset_x + side, t.offset_y + side});
}

RgbImage fill_masked(const RgbImage& image, const MaskGrid& mask, Rgb fill) {
  if (mask.rows() != image.height() || mask.cols() != image.width()) {
    throw InvalidInput("fill_masked: mask does not match image size");
  }
  RgbImage out = image;
  const std::array<std::uint8_t, 3> values{fill.r, fill.g, fill.b};
  for (int c = 0; c < 3; ++c) {
    out.channel(c) = mask.select(RgbImage::Channel::Constant(mask.rows(), mask.cols(), values[c]),
                                 image.channel(c));
  }
  return out;
}

RgbImage composite(const RgbImage& generated, const RgbImage& source, const MaskGrid& mask) {
  if (generated.size() != source.size() || mask.rows() != source.height() ||
      mask.cols() != source.width()) {
    throw InvalidInput("composite: size mismatch");
  }
  RgbImage out = source;
  for (int c = 0; c < 3; ++c) {
    out.channel(c) = mask.select(generated.channel(c), source.channel(c));
  }
  return out;
}

namespace {

std::vector<std::uint8_t> encode_raw(const std::uint8_t* data, int height, int width,
                                     png_uint_32 format) {
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(width);
  img.height = static_cast<png_uint_32>(height);
  img.format = format;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&img, nullptr, &size, 0, data, 0, nullptr)) {
    throw std::runtime_error(std::string("png encode failed: ") + img.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&img, out.data(), &size, 0, data, 0, nullptr)) {
    throw std::runtime_error(std::string("png encode failed: ") + img.message);
  }
  out.resize(size);
  return out;
}

std::vector<std::uint8_t> decode_raw(std::span<const std::uint8_t> bytes, png_uint_32 format,
                                     int& height, int& width) {
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size())) {
    throw InvalidInput(std::string("png decode failed: ") + img.message);
  }
  img.format = format;
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buffer.data(), 0, nullptr)) {
    png_image_free(&img);
    throw InvalidInput(std::string("png decode failed: ") + img.message);
  }
  height = static_cast<int>(img.height);
  width = static_cast<int>(img.width);
  return buffer;
}

}  // namespace

std::vector<std::uint8_t> encode_png(const RgbImage& image) {
  const int h = image.height();
  const int w = image.width();
  std::vector<std::uint8_t> interleaved(static_cast<size_t>(h) * w * 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        interleaved[(static_cast<size_t>(y) * w + x) * 3 + c] = image.channel(c)(y, x);
  return encode_raw(interleaved.data(), h, w, PNG_FORMAT_RGB);
}

RgbImage decode_png(std::span<const std::uint8_t> bytes) {
  int h = 0;
  int w = 0;
  const auto raw = decode_raw(bytes, PNG_FORMAT_RGB, h, w);
  RgbImage out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        out.channel(c)(y, x) = raw[(static_cast<size_t>(y) * w + x) * 3 + c];
  return out;
}

std::vector<std::uint8_t> encode_mask_png(const MaskGrid& mask) {
  const int h = static_cast<int>(mask.rows());
  const int w = static_cast<int>(mask.cols());
  std::vector<std::uint8_t> gray(static_cast<size_t>(h) * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) gray[static_cast<size_t>(y) * w + x] = mask(y, x) ? 255 : 0;
  return encode_raw(gray.data(), h, w, PNG_FORMAT_GRAY);
}

MaskGrid decode_mask_png(std::span<const std::uint8_t> bytes) {
  int h = 0;
  int w = 0;
  const auto raw = decode_raw(bytes, PNG_FORMAT_GRAY, h, w);
  MaskGrid out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) out(y, x) = raw[static_cast<size_t>(y) * w + x] > 127;
  return out;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::string read_text_file(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return {bytes.begin(), bytes.end()};
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

RgbImage read_png(const std::filesystem::path& path) { return decode_png(read_file_bytes(path)); }

void write_png(const std::filesystem::path& path, const RgbImage& image) {
  write_file_bytes(path, encode_png(image));
}

MaskGrid read_mask_png(const std::filesystem::path& path) {
  return decode_mask_png(read_file_bytes(path));
}

void write_mask_png(const std::filesystem::path& path, const MaskGrid& mask) {
  write_file_bytes(path, encode_mask_png(mask));
}

}  // namespace mmpaint
