// Copyright 2026 The mmpaint Authors
// SPDX-License-Identifier: Apache-2.0

// Minimal trainable building blocks for the in-tree toy backbones: linear
// layers with low-rank adapters, AdamW, the warmup schedule and global-norm
// gradient clipping. Row-major batches: inputs are rows x in_features.

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mmpaint/hashing.hpp"
#include "mmpaint/random.hpp"
#include "mmpaint/types.hpp"

namespace mmpaint {

template <typename Scalar>
struct Parameter {
  std::string name;
  Matrix<Scalar> value;
  Matrix<Scalar> grad;
  bool trainable = false;

  void zero_grad() {
    if (trainable) grad.setZero(value.rows(), value.cols());
  }
};

template <typename Scalar>
using ParameterList = std::vector<Parameter<Scalar>*>;

struct AdapterConfig {
  int rank = 16;
  double alpha = 16.0;
  double dropout = 0.05;
  std::string target_pattern;

  double scaling() const { return alpha / rank; }
  void validate() const {
    if (rank < 1) throw InvalidInput("adapter rank must be >= 1");
    if (alpha <= 0) throw InvalidInput("adapter alpha must be positive");
    if (dropout < 0 || dropout >= 1) throw InvalidInput("adapter dropout must be in [0, 1)");
  }
};

/// y = x W^T + b + s * (drop(x) A^T) B^T with W, b frozen. B starts at zero so
/// an injected adapter leaves the layer's function unchanged.
template <typename Scalar>
class LoraLinear {
 public:
  LoraLinear() = default;
  LoraLinear(std::string name, int in_features, int out_features, Rng& rng, Scalar init_scale = Scalar(-1)) {
    if (init_scale < 0) init_scale = Scalar(1) / std::sqrt(static_cast<Scalar>(in_features));
    weight_.name = name + ".weight";
    bias_.name = name + ".bias";
    weight_.value.resize(out_features, in_features);
    for (Eigen::Index i = 0; i < weight_.value.size(); ++i)
      weight_.value.data()[i] = static_cast<Scalar>(rng.normal()) * init_scale;
    bias_.value = Matrix<Scalar>::Zero(1, out_features);
    name_ = std::move(name);
  }

  const std::string& name() const { return name_; }
  int in_features() const { return static_cast<int>(weight_.value.cols()); }
  int out_features() const { return static_cast<int>(weight_.value.rows()); }
  bool has_adapter() const { return rank_ > 0; }

  void inject_adapter(const AdapterConfig& cfg, Rng& rng) {
    cfg.validate();
    rank_ = cfg.rank;
    scaling_ = static_cast<Scalar>(cfg.scaling());
    dropout_ = cfg.dropout;
    lora_a_.name = name_ + ".lora_A.weight";
    lora_b_.name = name_ + ".lora_B.weight";
    lora_a_.trainable = lora_b_.trainable = true;
    lora_a_.value.resize(rank_, in_features());
    const Scalar bound = Scalar(1) / std::sqrt(static_cast<Scalar>(in_features()));
    for (Eigen::Index i = 0; i < lora_a_.value.size(); ++i)
      lora_a_.value.data()[i] = static_cast<Scalar>((2 * rng.uniform() - 1)) * bound;
    lora_b_.value = Matrix<Scalar>::Zero(out_features(), rank_);
    lora_a_.zero_grad();
    lora_b_.zero_grad();
  }

  /// `dropout_rng` null means evaluation mode.
  Matrix<Scalar> forward(const Matrix<Scalar>& x, Rng* dropout_rng = nullptr) {
    if (x.cols() != in_features()) {
      throw InvalidInput(name_ + ": expected " + std::to_string(in_features()) + " input features, got " +
                         std::to_string(x.cols()));
    }
    Matrix<Scalar> y = (x * weight_.value.transpose()).rowwise() + bias_.value.row(0);
    if (rank_ > 0) {
      drop_ = Matrix<Scalar>::Ones(x.rows(), x.cols());
      if (dropout_rng && dropout_ > 0) {
        const Scalar kept = Scalar(1) / static_cast<Scalar>(1 - dropout_);
        for (Eigen::Index i = 0; i < drop_.size(); ++i)
          drop_.data()[i] = dropout_rng->bernoulli(dropout_) ? Scalar(0) : kept;
      }
      xd_ = x.cwiseProduct(drop_);
      xa_ = xd_ * lora_a_.value.transpose();
      y += scaling_ * (xa_ * lora_b_.value.transpose());
    }
    return y;
  }

  /// Accumulates adapter gradients for the most recent forward and returns dL/dx.
  Matrix<Scalar> backward(const Matrix<Scalar>& dy) {
    Matrix<Scalar> dx = dy * weight_.value;
    if (rank_ > 0) {
      const Matrix<Scalar> dyb = dy * lora_b_.value;  // rows x r
      lora_b_.grad += scaling_ * dy.transpose() * xa_;
      lora_a_.grad += scaling_ * dyb.transpose() * xd_;
      const Matrix<Scalar> dxd = (scaling_ * dyb * lora_a_.value).cwiseProduct(drop_);
      dx += dxd;
    }
    return dx;
  }

  void collect(ParameterList<Scalar>& out) {
    out.push_back(&weight_);
    out.push_back(&bias_);
    if (rank_ > 0) {
      out.push_back(&lora_a_);
      out.push_back(&lora_b_);
    }
  }

  Parameter<Scalar>& weight() { return weight_; }
  Parameter<Scalar>& bias() { return bias_; }
  Parameter<Scalar>& lora_a() { return lora_a_; }
  Parameter<Scalar>& lora_b() { return lora_b_; }

 private:
  std::string name_;
  Parameter<Scalar> weight_, bias_, lora_a_, lora_b_;
  int rank_ = 0;
  Scalar scaling_ = Scalar(0);
  double dropout_ = 0;
  Matrix<Scalar> drop_, xd_, xa_;
};

template <typename Scalar>
std::size_t trainable_parameter_count(const ParameterList<Scalar>& params) {
  std::size_t n = 0;
  for (const auto* p : params)
    if (p->trainable) n += static_cast<std::size_t>(p->value.size());
  return n;
}

template <typename Scalar>
void zero_grads(const ParameterList<Scalar>& params) {
  for (auto* p : params) p->zero_grad();
}

/// SHA-256 over the names and raw bytes of every frozen parameter.
template <typename Scalar>
std::string frozen_checksum(const ParameterList<Scalar>& params) {
  std::string buf;
  for (const auto* p : params) {
    if (p->trainable) continue;
    buf += p->name;
    buf.append(reinterpret_cast<const char*>(p->value.data()), sizeof(Scalar) * p->value.size());
  }
  return sha256_hex(buf);
}

template <typename Scalar>
double global_grad_norm(const ParameterList<Scalar>& params) {
  double s = 0;
  for (const auto* p : params)
    if (p->trainable) s += p->grad.template cast<double>().squaredNorm();
  return std::sqrt(s);
}

/// Rescales gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
template <typename Scalar>
double clip_grad_norm(const ParameterList<Scalar>& params, double max_norm) {
  const double norm = global_grad_norm(params);
  if (norm > max_norm) {
    const auto factor = static_cast<Scalar>(max_norm / (norm + 1e-6));
    for (auto* p : params)
      if (p->trainable) p->grad *= factor;
  }
  return norm;
}

/// Learning rate at `step` (0-based): linear ramp from 0 over
/// ceil(warmup_fraction * total_steps) steps, then constant.
inline double warmup_constant_lr(double peak, long step, long total_steps, double warmup_fraction) {
  if (total_steps < 1) throw InvalidInput("total_steps must be >= 1");
  if (warmup_fraction <= 0 || warmup_fraction >= 1) throw InvalidInput("warmup_fraction must be in (0, 1)");
  const long warmup = static_cast<long>(std::ceil(warmup_fraction * static_cast<double>(total_steps)));
  if (step >= warmup) return peak;
  return peak * static_cast<double>(step) / static_cast<double>(warmup);
}

template <typename Scalar>
class AdamW {
 public:
  struct Options {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
  };

  AdamW(ParameterList<Scalar> params, Options opt) : params_(std::move(params)), opt_(opt) {
    for (auto* p : params_) {
      m_.push_back(Matrix<Scalar>::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(Matrix<Scalar>::Zero(p->value.rows(), p->value.cols()));
    }
  }
  explicit AdamW(ParameterList<Scalar> params) : AdamW(std::move(params), Options{}) {}

  void step(double lr) {
    ++t_;
    const double bc1 = 1 - std::pow(opt_.beta1, t_);
    const double bc2 = 1 - std::pow(opt_.beta2, t_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto* p = params_[i];
      if (!p->trainable) continue;
      m_[i] = Scalar(opt_.beta1) * m_[i] + Scalar(1 - opt_.beta1) * p->grad;
      v_[i] = Scalar(opt_.beta2) * v_[i] + Scalar(1 - opt_.beta2) * p->grad.cwiseProduct(p->grad);
      if (opt_.weight_decay > 0) p->value *= Scalar(1 - lr * opt_.weight_decay);
      const auto mhat = m_[i].array() / Scalar(bc1);
      const auto vhat = v_[i].array() / Scalar(bc2);
      p->value.array() -= Scalar(lr) * mhat / (vhat.sqrt() + Scalar(opt_.eps));
    }
  }

  long steps_taken() const { return t_; }

 private:
  ParameterList<Scalar> params_;
  Options opt_;
  std::vector<Matrix<Scalar>> m_, v_;
  long t_ = 0;
};

}  // namespace mmpaint
