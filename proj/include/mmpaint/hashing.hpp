// Copyright 2026 The mmpaint Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mmpaint {

std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_hex(std::string_view text);

std::string base64_encode(std::span<const std::uint8_t> bytes);
/// Throws InvalidInput on characters outside the standard alphabet.
std::vector<std::uint8_t> base64_decode(std::string_view text);

/// Writes `bytes` under dir/<sha256 prefix>/<sha256><ext> unless already
/// present; returns the path.
std::filesystem::path store_content_addressed(const std::filesystem::path& dir,
                                              std::span<const std::uint8_t> bytes,
                                              std::string_view extension);

}  // namespace mmpaint
