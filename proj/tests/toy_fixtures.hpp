// Copyright 2026 The mmpaint Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <memory>
#include <string>
#include <vector>

#include "mmpaint/inpaint.hpp"
#include "mmpaint/mask_geometry.hpp"
#include "mmpaint/random.hpp"
#include "mmpaint/tokenizer.hpp"

namespace mmpaint::testing {

inline std::shared_ptr<const PieceTokenizer> toy_tokenizer() {
  static const auto tok = std::make_shared<const PieceTokenizer>(PieceTokenizer::train(
      {"a red boat on the water", "a tall green tree", "a small white house", "a white cloud in the sky",
       "a wooden boat. a tall tree", "<red> a boat </red> <blue> a tree </blue>"}));
  return tok;
}

/// Smooth colour gradient plus seeded noise.
inline RgbImage toy_image(int side, std::uint64_t seed) {
  Rng rng(seed);
  RgbImage img(side, side);
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x) {
      auto jitter = [&] { return static_cast<int>(rng.index(32)); };
      img.set(y, x, {static_cast<std::uint8_t>((x * 200) / side + jitter()),
                     static_cast<std::uint8_t>((y * 200) / side + jitter()),
                     static_cast<std::uint8_t>(((x + y) * 100) / side + jitter())});
    }
  return img;
}

inline MaskSet box_masks(int side, const std::vector<BBox>& boxes) {
  std::vector<Mask> masks;
  for (const auto& b : boxes) masks.push_back(Mask::from_bbox(b, {side, side}));
  return MaskSet(std::move(masks), {side, side});
}

}  // namespace mmpaint::testing
