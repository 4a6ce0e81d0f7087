// Copyright 2026 The mmpaint Authors
// SPDX-License-Identifier: Apache-2.0

// Shared training bookkeeping: step logs, reports and adapter artifacts.

#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmpaint/nn.hpp"

namespace mmpaint {

struct TrainStepLog {
  long step = 0;
  double loss = 0;
  double lr = 0;
  double grad_norm = 0;          // before clipping
  double clipped_grad_norm = 0;  // after clipping
};

struct TrainReport {
  std::vector<TrainStepLog> log;
  std::string base_checksum_before;
  std::string base_checksum_after;
  std::size_t trainable_parameters = 0;
  bool diverged = false;
  long last_good_step = -1;
  std::optional<std::filesystem::path> adapter_path;
  std::optional<std::filesystem::path> last_good_checkpoint;
};

/// Writes the trainable parameters to `path` (safetensors) and `manifest`
/// to the sibling adapter_config.json.
void save_adapter(const std::filesystem::path& path, const ParameterList<float>& params,
                  const nlohmann::json& manifest);
/// Loads tensors by name into matching trainable parameters; every trainable
/// parameter must be present with the same shape.
void load_adapter(const std::filesystem::path& path, const ParameterList<float>& params);

nlohmann::json read_adapter_manifest(const std::filesystem::path& adapter_path);

/// Columns: step, loss, lr, grad_norm.
void write_train_log_csv(const std::filesystem::path& path, const std::vector<TrainStepLog>& log);

/// In-memory copy of the trainable tensors, used to roll back on divergence.
std::vector<MatrixF> snapshot_trainable(const ParameterList<float>& params);
void restore_trainable(const ParameterList<float>& params, const std::vector<MatrixF>& snapshot);

}  // namespace mmpaint
