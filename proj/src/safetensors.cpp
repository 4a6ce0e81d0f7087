// Copyright 2026 The mmpaint Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmpaint/safetensors.hpp"

#include <cstdint>
#include <cstring>
#include <json.hpp>

#include "mmpaint/image.hpp"

namespace mmpaint {

namespace {

using RowMajorF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void put_u64_le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64_le(const std::string& in) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(in[static_cast<std::size_t>(i)]);
  return v;
}

}  // namespace

std::string encode_safetensors(const TensorFile& file) {
  nlohmann::ordered_json header = nlohmann::ordered_json::object();
  if (!file.metadata.empty()) header["__metadata__"] = file.metadata;
  std::string data;
  for (const auto& [name, m] : file.tensors) {
    const RowMajorF rm = m;
    const std::size_t begin = data.size();
    data.append(reinterpret_cast<const char*>(rm.data()), sizeof(float) * static_cast<std::size_t>(rm.size()));
    header[name] = {{"dtype", "F32"},
                    {"shape", {m.rows(), m.cols()}},
                    {"data_offsets", {begin, data.size()}}};
  }
  std::string h = header.dump();
  while (h.size() % 8 != 0) h.push_back(' ');
  std::string out;
  put_u64_le(out, h.size());
  return out + h + data;
}

TensorFile decode_safetensors(const std::string& bytes) {
  if (bytes.size() < 8) throw InvalidInput("safetensors: truncated header length");
  const std::uint64_t n = get_u64_le(bytes);
  if (n > bytes.size() - 8) throw InvalidInput("safetensors: header length exceeds file size");
  const auto header = nlohmann::json::parse(bytes.substr(8, n), nullptr, false);
  if (header.is_discarded() || !header.is_object()) throw InvalidInput("safetensors: header is not a JSON object");
  const std::size_t base = 8 + n;
  TensorFile file;
  for (const auto& [name, entry] : header.items()) {
    if (name == "__metadata__") {
      for (const auto& [k, v] : entry.items()) file.metadata[k] = v.get<std::string>();
      continue;
    }
    if (entry.value("dtype", "") != "F32") throw InvalidInput("safetensors: tensor " + name + " is not F32");
    const auto shape = entry.at("shape").get<std::vector<std::int64_t>>();
    const auto off = entry.at("data_offsets").get<std::vector<std::size_t>>();
    if (shape.size() > 2 || off.size() != 2 || off[1] < off[0]) throw InvalidInput("safetensors: bad entry " + name);
    const std::int64_t rows = shape.empty() ? 1 : shape[0];
    const std::int64_t cols = shape.size() == 2 ? shape[1] : 1;
    if (static_cast<std::size_t>(rows * cols) * sizeof(float) != off[1] - off[0] || base + off[1] > bytes.size()) {
      throw InvalidInput("safetensors: tensor " + name + " has inconsistent size");
    }
    RowMajorF rm(rows, cols);
    std::memcpy(rm.data(), bytes.data() + base + off[0], off[1] - off[0]);
    file.tensors[name] = rm;
  }
  return file;
}

void save_safetensors(const std::filesystem::path& path, const TensorFile& file) {
  write_text_file(path, encode_safetensors(file));
}

TensorFile load_safetensors(const std::filesystem::path& path) { return decode_safetensors(read_text_file(path)); }

}  // namespace mmpaint
