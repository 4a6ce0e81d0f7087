// Copyright 2026 The mmpaint Authors
// SPDX-License-Identifier: Apache-2.0

// Reader and writer for the safetensors container (little-endian u64 header
// length, JSON header, raw tensor bytes). Only F32 tensors of rank <= 2.

#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "mmpaint/types.hpp"

namespace mmpaint {

struct TensorFile {
  std::map<std::string, MatrixF> tensors;
  std::map<std::string, std::string> metadata;
};

std::string encode_safetensors(const TensorFile& file);
TensorFile decode_safetensors(const std::string& bytes);

void save_safetensors(const std::filesystem::path& path, const TensorFile& file);
TensorFile load_safetensors(const std::filesystem::path& path);

}  // namespace mmpaint
