// Copyright 2026 The mmpaint Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmpaint/training.hpp"

#include <fstream>
#include <iomanip>

#include "mmpaint/image.hpp"
#include "mmpaint/safetensors.hpp"

namespace mmpaint {

void save_adapter(const std::filesystem::path& path, const ParameterList<float>& params,
                  const nlohmann::json& manifest) {
  TensorFile file;
  for (const auto* p : params)
    if (p->trainable) file.tensors[p->name] = p->value;
  file.metadata["format"] = "pt";
  save_safetensors(path, file);
  write_text_file(path.parent_path() / "adapter_config.json", manifest.dump(2) + "\n");
}

void load_adapter(const std::filesystem::path& path, const ParameterList<float>& params) {
  const TensorFile file = load_safetensors(path);
  for (auto* p : params) {
    if (!p->trainable) continue;
    const auto it = file.tensors.find(p->name);
    if (it == file.tensors.end()) throw InvalidInput("adapter is missing tensor " + p->name);
    if (it->second.rows() != p->value.rows() || it->second.cols() != p->value.cols()) {
      throw InvalidInput("adapter tensor " + p->name + " has the wrong shape");
    }
    p->value = it->second;
  }
}

nlohmann::json read_adapter_manifest(const std::filesystem::path& adapter_path) {
  return nlohmann::json::parse(read_text_file(adapter_path.parent_path() / "adapter_config.json"));
}

void write_train_log_csv(const std::filesystem::path& path, const std::vector<TrainStepLog>& log) {
  std::ostringstream out;
  out << "step,loss,lr,grad_norm\n" << std::setprecision(9);
  for (const auto& r : log) out << r.step << ',' << r.loss << ',' << r.lr << ',' << r.grad_norm << '\n';
  write_text_file(path, out.str());
}

std::vector<MatrixF> snapshot_trainable(const ParameterList<float>& params) {
  std::vector<MatrixF> out;
  for (const auto* p : params)
    if (p->trainable) out.push_back(p->value);
  return out;
}

void restore_trainable(const ParameterList<float>& params, const std::vector<MatrixF>& snapshot) {
  std::size_t i = 0;
  for (auto* p : params)
    if (p->trainable) p->value = snapshot.at(i++);
}

}  // namespace mmpaint
