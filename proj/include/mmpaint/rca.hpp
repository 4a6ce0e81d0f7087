// Copyright 2026 The mmpaint Authors
// SPDX-License-Identifier: Apache-2.0

// Rectified cross-attention: attention logits whose (token, cell) entries are
// disabled by a binary layout before the softmax over tokens, plus the hook
// contract for swapping it into a backbone's cross-attention layers.

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mmpaint/prompt_layout.hpp"
#include "mmpaint/types.hpp"

namespace mmpaint {

/// Per-head query/key/value matrices. Queries are cells x d (cells in
/// row-major order over `resolution`), keys tokens x d, values tokens x d_v.
template <typename Scalar>
struct AttentionInputs {
  std::vector<Matrix<Scalar>> queries;
  std::vector<Matrix<Scalar>> keys;
  std::vector<Matrix<Scalar>> values;
  Resolution resolution;
  Scalar scale = Scalar(1);

  static AttentionInputs make(std::vector<Matrix<Scalar>> q, std::vector<Matrix<Scalar>> k,
                              std::vector<Matrix<Scalar>> v, Resolution resolution) {
    AttentionInputs in{std::move(q), std::move(k), std::move(v), resolution, Scalar(1)};
    in.validate_shapes();
    in.scale = Scalar(1) / std::sqrt(static_cast<Scalar>(in.queries.front().cols()));
    return in;
  }

  int heads() const { return static_cast<int>(queries.size()); }
  int tokens() const { return static_cast<int>(keys.front().rows()); }
  int cells() const { return resolution.cells(); }

  void validate_shapes() const {
    if (queries.empty() || queries.size() != keys.size() || keys.size() != values.size()) {
      throw InvalidInput("attention: head counts of Q, K, V differ or are zero");
    }
    const auto d = queries.front().cols();
    if (d <= 0) throw InvalidInput("attention: head dimension must be positive");
    for (std::size_t h = 0; h < queries.size(); ++h) {
      if (queries[h].rows() != resolution.cells() || queries[h].cols() != d ||
          keys[h].cols() != d || keys[h].rows() != keys.front().rows() ||
          values[h].rows() != keys[h].rows() || values[h].cols() != values.front().cols()) {
        throw InvalidInput("attention: inconsistent Q/K/V shapes at head " + std::to_string(h));
      }
    }
  }
};

/// Per-head logits Q K^T * scale, laid out tokens x cells.
template <typename Scalar>
std::vector<Matrix<Scalar>> attention_logits(const AttentionInputs<Scalar>& in) {
  in.validate_shapes();
  std::vector<Matrix<Scalar>> logits;
  logits.reserve(in.queries.size());
  for (int h = 0; h < in.heads(); ++h) {
    logits.push_back((in.keys[h] * in.queries[h].transpose()) * in.scale);
  }
  return logits;
}

/// Value used for a disabled logit: the most negative finite value, so the
/// softmax weight underflows to exactly zero without producing NaN.
template <typename Scalar>
constexpr Scalar rectified_logit() {
  return std::numeric_limits<Scalar>::lowest();
}

enum class FullyMaskedPolicy { error, fallback_unrectified };

class FullyMaskedCell : public std::runtime_error {
 public:
  explicit FullyMaskedCell(int cell)
      : std::runtime_error("layout disables every token at cell " + std::to_string(cell)), cell_(cell) {}
  int cell() const { return cell_; }

 private:
  int cell_;
};

template <typename Scalar>
struct RectifiedMap {
  std::vector<Matrix<Scalar>> logits;
  std::string layout_id;
  /// Cells left unrectified under FullyMaskedPolicy::fallback_unrectified.
  std::vector<int> fallback_cells;
};

template <typename Scalar>
RectifiedMap<Scalar> rectify(std::vector<Matrix<Scalar>> logits, const LayoutTensor& layout,
                             FullyMaskedPolicy policy = FullyMaskedPolicy::error) {
  RectifiedMap<Scalar> out;
  out.layout_id = layout.id;
  if (logits.empty()) return out;
  if (layout.bits.rows() != logits.front().rows() || layout.bits.cols() != logits.front().cols()) {
    throw InvalidInput("rectify: layout " + std::to_string(layout.bits.rows()) + "x" +
                       std::to_string(layout.bits.cols()) + " does not match logits " +
                       std::to_string(logits.front().rows()) + "x" +
                       std::to_string(logits.front().cols()));
  }
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> active = layout.bits;
  const auto any = active.colwise().any();
  for (Eigen::Index c = 0; c < active.cols(); ++c) {
    if (any(c)) continue;
    if (policy == FullyMaskedPolicy::error) throw FullyMaskedCell(static_cast<int>(c));
    active.col(c).setConstant(true);
    out.fallback_cells.push_back(static_cast<int>(c));
  }
  const Matrix<Scalar> floor = Matrix<Scalar>::Constant(active.rows(), active.cols(), rectified_logit<Scalar>());
  for (auto& l : logits) l = active.select(l, floor);
  out.logits = std::move(logits);
  return out;
}

/// Softmax over tokens (rows) for every cell (column).
template <typename Scalar>
Matrix<Scalar> softmax_over_tokens(const Matrix<Scalar>& logits) {
  Matrix<Scalar> w(logits.rows(), logits.cols());
  for (Eigen::Index c = 0; c < logits.cols(); ++c) {
    const Scalar m = logits.col(c).maxCoeff();
    // Vectorized exp can return a subnormal rather than 0 for the rectified
    // logit, so disabled entries are zeroed explicitly.
    const auto disabled = logits.col(c).array() == rectified_logit<Scalar>();
    w.col(c) = disabled.select(Scalar(0), (logits.col(c).array() - m).exp()).matrix();
    w.col(c) /= w.col(c).sum();
  }
  return w;
}

template <typename Scalar>
struct AttentionResult {
  std::vector<Matrix<Scalar>> output;   // per head, cells x d_v
  std::vector<Matrix<Scalar>> weights;  // per head, tokens x cells
};

template <typename Scalar>
AttentionResult<Scalar> attend(const AttentionInputs<Scalar>& in, const std::vector<Matrix<Scalar>>& logits) {
  AttentionResult<Scalar> r;
  for (int h = 0; h < in.heads(); ++h) {
    r.weights.push_back(softmax_over_tokens<Scalar>(logits[h]));
    r.output.push_back(r.weights.back().transpose() * in.values[h]);
  }
  return r;
}

template <typename Scalar>
AttentionResult<Scalar> vanilla_attention(const AttentionInputs<Scalar>& in) {
  return attend(in, attention_logits(in));
}

/// The same layout applies to every head.
template <typename Scalar>
AttentionResult<Scalar> rca_attention(const AttentionInputs<Scalar>& in, const LayoutTensor& layout,
                                      FullyMaskedPolicy policy = FullyMaskedPolicy::error) {
  if (layout.resolution != in.resolution) {
    throw InvalidInput("rca: layout resolution " + to_string(layout.resolution) +
                       " does not match attention resolution " + to_string(in.resolution));
  }
  const RectifiedMap<Scalar> rect = rectify(attention_logits(in), layout, policy);
  return attend(in, rect.logits);
}

template <typename Scalar>
struct AttentionGradients {
  std::vector<Matrix<Scalar>> queries;
  std::vector<Matrix<Scalar>> keys;
  std::vector<Matrix<Scalar>> values;
};

/// Backward pass given the forward softmax weights. Disabled entries have
/// zero weight and therefore pass no gradient.
template <typename Scalar>
AttentionGradients<Scalar> attention_backward(const AttentionInputs<Scalar>& in,
                                              const std::vector<Matrix<Scalar>>& weights,
                                              const std::vector<Matrix<Scalar>>& grad_output) {
  AttentionGradients<Scalar> g;
  for (int h = 0; h < in.heads(); ++h) {
    const Matrix<Scalar>& P = weights[h];       // tokens x cells
    const Matrix<Scalar>& dO = grad_output[h];  // cells x d_v
    g.values.push_back(P * dO);
    const Matrix<Scalar> dP = in.values[h] * dO.transpose();  // tokens x cells
    const auto col_dot = (dP.array() * P.array()).colwise().sum();
    Matrix<Scalar> dS = (P.array() * (dP.array().rowwise() - col_dot)).matrix();
    dS *= in.scale;
    g.queries.push_back(dS.transpose() * in.keys[h]);
    g.keys.push_back(dS * in.queries[h]);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Backbone hook contract

enum class Branch { conditional, unconditional };

struct ForwardContext {
  std::uint64_t forward_id = 0;
  Branch branch = Branch::conditional;
};

template <typename Scalar>
using AttentionProcessor =
    std::function<AttentionResult<Scalar>(const AttentionInputs<Scalar>&, const ForwardContext&)>;

/// One cross-attention call site of a backbone at a fixed latent resolution.
template <typename Scalar>
class CrossAttentionSite {
 public:
  CrossAttentionSite(std::string name, Resolution resolution)
      : name_(std::move(name)), resolution_(resolution) {}

  const std::string& name() const { return name_; }
  Resolution resolution() const { return resolution_; }

  AttentionResult<Scalar> operator()(const AttentionInputs<Scalar>& in, const ForwardContext& ctx) const {
    return processor_ ? processor_(in, ctx) : vanilla_attention(in);
  }

  const AttentionProcessor<Scalar>& processor() const { return processor_; }
  void set_processor(AttentionProcessor<Scalar> p) { processor_ = std::move(p); }

 private:
  std::string name_;
  Resolution resolution_;
  AttentionProcessor<Scalar> processor_;
};

template <typename Scalar>
class CrossAttentionBackbone {
 public:
  virtual ~CrossAttentionBackbone() = default;
  virtual std::vector<CrossAttentionSite<Scalar>*> cross_attention_sites() = 0;
};

class UnsupportedBackbone : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using LayoutProvider = std::function<std::shared_ptr<const LayoutTensor>(Resolution)>;

template <typename Scalar>
using AttentionObserver =
    std::function<void(const std::string& site, const ForwardContext&, const AttentionResult<Scalar>&)>;

struct HookOptions {
  FullyMaskedPolicy policy = FullyMaskedPolicy::error;
};

/// Restores the processors it replaced when removed or destroyed.
template <typename Scalar>
class RcaHookHandle {
 public:
  RcaHookHandle() = default;
  RcaHookHandle(const RcaHookHandle&) = delete;
  RcaHookHandle& operator=(const RcaHookHandle&) = delete;
  RcaHookHandle(RcaHookHandle&& other) noexcept { *this = std::move(other); }
  RcaHookHandle& operator=(RcaHookHandle&& other) noexcept {
    if (this != &other) {
      remove();
      saved_ = std::move(other.saved_);
      other.saved_.clear();
    }
    return *this;
  }
  ~RcaHookHandle() { remove(); }

  bool active() const { return !saved_.empty(); }

  void remove() {
    for (auto& [site, previous] : saved_) site->set_processor(std::move(previous));
    saved_.clear();
  }

 private:
  template <typename S>
  friend RcaHookHandle<S> install_hooks(CrossAttentionBackbone<S>&, LayoutProvider, HookOptions,
                                        AttentionObserver<S>);
  std::vector<std::pair<CrossAttentionSite<Scalar>*, AttentionProcessor<Scalar>>> saved_;
};

/// Every site consults `provider` for the layout at its resolution, at most
/// once per resolution per forward pass. Only the conditional branch is
/// rectified; the unconditional branch keeps vanilla attention.
template <typename Scalar>
RcaHookHandle<Scalar> install_hooks(CrossAttentionBackbone<Scalar>& backbone, LayoutProvider provider,
                                    HookOptions options = {}, AttentionObserver<Scalar> observer = {}) {
  auto sites = backbone.cross_attention_sites();
  if (sites.empty()) throw UnsupportedBackbone("backbone exposes no cross-attention sites");

  struct Cache {
    std::uint64_t forward_id = 0;
    bool valid = false;
    std::map<Resolution, std::shared_ptr<const LayoutTensor>> layouts;
  };
  auto cache = std::make_shared<Cache>();

  RcaHookHandle<Scalar> handle;
  for (auto* site : sites) {
    handle.saved_.emplace_back(site, site->processor());
    site->set_processor([cache, provider, options, observer, name = site->name()](
                            const AttentionInputs<Scalar>& in, const ForwardContext& ctx) {
      AttentionResult<Scalar> result;
      if (ctx.branch == Branch::unconditional) {
        result = vanilla_attention(in);
      } else {
        if (!cache->valid || cache->forward_id != ctx.forward_id) {
          cache->layouts.clear();
          cache->forward_id = ctx.forward_id;
          cache->valid = true;
        }
        auto it = cache->layouts.find(in.resolution);
        if (it == cache->layouts.end()) it = cache->layouts.emplace(in.resolution, provider(in.resolution)).first;
        if (!it->second) throw InvalidInput("no layout for resolution " + to_string(in.resolution));
        if (it->second->tokens() != in.tokens()) {
          throw InvalidInput("layout has " + std::to_string(it->second->tokens()) +
                             " token rows but the attention has " + std::to_string(in.tokens()));
        }
        result = rca_attention(in, *it->second, options.policy);
      }
      if (observer) observer(name, ctx, result);
      return result;
    });
  }
  return handle;
}

}  // namespace mmpaint
