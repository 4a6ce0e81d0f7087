// Copyright 2026 The mmpaint Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <limits>

#include "mmpaint/random.hpp"
#include "mmpaint/rca.hpp"
#include "rca_oracles.hpp"

using namespace mmpaint;
using namespace mmpaint::testing;

TEST_CASE("attention logits") {
  SUBCASE("d = 1 unit vectors give pairwise dot products") {
    MatrixD q(2, 1), k(2, 1), v(2, 1);
    q << 1, -1;
    k << 1, -1;
    v << 3, 4;
    const auto in = AttentionInputs<double>::make({q}, {k}, {v}, {1, 2});
    const auto l = attention_logits(in)[0];
    CHECK(l(0, 0) == 1.0);
    CHECK(l(0, 1) == -1.0);
    CHECK(l(1, 0) == -1.0);
    CHECK(l(1, 1) == 1.0);
  }
  SUBCASE("random 2-token x 2x2 instances match the scalar-loop oracle") {
    Rng rng(1);
    for (int trial = 0; trial < 100; ++trial) {
      const auto in = random_inputs<double>(rng, 2, {2, 2}, 3, 2);
      const auto logits = attention_logits(in);
      const auto oracle = naive_logits(in);
      for (int h = 0; h < in.heads(); ++h) CHECK((logits[h] - oracle[h]).cwiseAbs().maxCoeff() <= 1e-6);
    }
  }
  SUBCASE("scale is exactly 1/sqrt(d)") {
    Rng rng(2);
    const auto in = random_inputs<double>(rng, 3, {2, 2}, 4, 1);
    CHECK(in.scale == 1.0 / std::sqrt(4.0));
    const auto l = attention_logits(in)[0];
    const MatrixD raw = in.keys[0] * in.queries[0].transpose();
    CHECK((l - raw / 2.0).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("shape mismatch is a hard error") {
    CHECK_THROWS_AS(AttentionInputs<double>::make({MatrixD::Zero(4, 2)}, {MatrixD::Zero(3, 3)},
                                                  {MatrixD::Zero(3, 2)}, {2, 2}),
                    InvalidInput);
    CHECK_THROWS_AS(AttentionInputs<double>::make({MatrixD::Zero(5, 2)}, {MatrixD::Zero(3, 2)},
                                                  {MatrixD::Zero(3, 2)}, {2, 2}),
                    InvalidInput);
  }
}

TEST_CASE("rectify") {
  Rng rng(3);
  SUBCASE("all-ones layout is a no-op") {
    const auto in = random_inputs<double>(rng, 4, {3, 3}, 2, 2);
    const auto logits = attention_logits(in);
    const auto r = rectify(logits, all_ones_layout(4, {3, 3}));
    for (int h = 0; h < 2; ++h) CHECK(r.logits[h] == logits[h]);
  }
  SUBCASE("two tokens, 1x2 cells, direct case split") {
    const auto in = random_inputs<double>(rng, 2, {1, 2}, 2, 1);
    LayoutTensor layout = all_ones_layout(2, {1, 2});
    layout.bits(0, 1) = false;  // token 0 only at cell 0
    layout.bits(1, 0) = false;  // token 1 only at cell 1
    const auto logits = attention_logits(in)[0];
    const auto r = rectify(std::vector<MatrixD>{logits}, layout).logits[0];
    CHECK(r(0, 0) == logits(0, 0));
    CHECK(r(1, 1) == logits(1, 1));
    CHECK(r(0, 1) == rectified_logit<double>());
    CHECK(r(1, 0) == rectified_logit<double>());
  }
  SUBCASE("idempotent") {
    const auto in = random_inputs<double>(rng, 4, {2, 2}, 2, 1);
    const auto layout = random_layout(rng, 4, {2, 2});
    const auto once = rectify(attention_logits(in), layout);
    const auto twice = rectify(once.logits, layout);
    CHECK(once.logits[0] == twice.logits[0]);
  }
  SUBCASE("fully masked cell: error by default, fallback on request") {
    const auto in = random_inputs<double>(rng, 2, {1, 2}, 2, 1);
    LayoutTensor layout = all_ones_layout(2, {1, 2});
    layout.bits.col(1).setConstant(false);
    CHECK_THROWS_AS(rectify(attention_logits(in), layout), FullyMaskedCell);
    const auto r = rectify(attention_logits(in), layout, FullyMaskedPolicy::fallback_unrectified);
    CHECK(r.fallback_cells == std::vector<int>{1});
    CHECK(r.logits[0].col(1) == attention_logits(in)[0].col(1));
  }
  SUBCASE("layout shape mismatch") {
    const auto in = random_inputs<double>(rng, 2, {1, 2}, 2, 1);
    CHECK_THROWS_AS(rectify(attention_logits(in), all_ones_layout(3, {1, 2})), InvalidInput);
  }
}

TEST_CASE("rectified softmax matches brute-force masked softmax") {
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const auto in = random_inputs<double>(rng, 4, {4, 4}, 3, 2);
    const auto layout = random_layout(rng, 4, {4, 4});
    const auto result = rca_attention(in, layout);
    const auto oracle = masked_softmax_oracle(in, layout);
    for (int h = 0; h < in.heads(); ++h) {
      REQUIRE((result.weights[h] - oracle.weights[h]).cwiseAbs().maxCoeff() <= 1e-6);
      REQUIRE((result.output[h] - oracle.output[h]).cwiseAbs().maxCoeff() <= 1e-6);
      for (int t = 0; t < in.tokens(); ++t)
        for (int c = 0; c < in.cells(); ++c)
          if (!layout.bits(t, c)) REQUIRE(result.weights[h](t, c) == 0.0);
      CHECK((result.weights[h].colwise().sum().array() - 1.0).abs().maxCoeff() <= 1e-6);
    }
  }
}

TEST_CASE("zero-weight guarantee holds in single precision with extreme logits") {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    auto in = random_inputs<float>(rng, 5, {3, 3}, 4, 2);
    for (auto& k : in.keys) k *= 50.0f;  // large-magnitude logits
    const auto layout = random_layout(rng, 5, {3, 3});
    const auto result = rca_attention(in, layout);
    for (int h = 0; h < in.heads(); ++h) {
      REQUIRE(result.weights[h].allFinite());
      for (int t = 0; t < 5; ++t)
        for (int c = 0; c < 9; ++c)
          if (!layout.bits(t, c)) REQUIRE(result.weights[h](t, c) == 0.0f);
    }
  }
}

TEST_CASE("rca_attention reductions and exclusivity") {
  Rng rng(6);
  SUBCASE("all-ones layout equals vanilla attention") {
    for (int trial = 0; trial < 50; ++trial) {
      const auto in = random_inputs<double>(rng, 6, {3, 4}, 5, 3);
      const auto a = rca_attention(in, all_ones_layout(6, {3, 4}));
      const auto b = vanilla_attention(in);
      for (int h = 0; h < 3; ++h) CHECK((a.output[h] - b.output[h]).cwiseAbs().maxCoeff() <= 1e-6);
    }
  }
  SUBCASE("a cell restricted to one span mixes only that span and the specials") {
    const auto in = random_inputs<double>(rng, 6, {2, 2}, 3, 1);
    LayoutTensor layout = all_ones_layout(6, {2, 2});
    // tokens 0 and 5 special, span A = {1,2}, span B = {3,4}; cell 0 belongs to A only.
    layout.bits(3, 0) = false;
    layout.bits(4, 0) = false;
    const auto r = rca_attention(in, layout);
    CHECK(r.weights[0](3, 0) == 0.0);
    CHECK(r.weights[0](4, 0) == 0.0);
    MatrixD expected = MatrixD::Zero(1, 3);
    for (int t : {0, 1, 2, 5}) expected += r.weights[0](t, 0) * in.values[0].row(t);
    CHECK((r.output[0].row(0) - expected).cwiseAbs().maxCoeff() <= 1e-12);
  }
  SUBCASE("permuting token rows of logits and layout permutes the rectified map") {
    const auto in = random_inputs<double>(rng, 5, {2, 3}, 2, 1);
    const auto layout = random_layout(rng, 5, {2, 3});
    const std::vector<int> perm{3, 0, 4, 1, 2};
    MatrixD logits = attention_logits(in)[0];
    MatrixD permuted_logits(5, 6);
    LayoutTensor permuted_layout = layout;
    for (int t = 0; t < 5; ++t) {
      permuted_logits.row(t) = logits.row(perm[t]);
      permuted_layout.bits.row(t) = layout.bits.row(perm[t]);
    }
    const auto a = rectify(std::vector<MatrixD>{logits}, layout).logits[0];
    const auto b = rectify(std::vector<MatrixD>{permuted_logits}, permuted_layout).logits[0];
    for (int t = 0; t < 5; ++t) CHECK(b.row(t) == a.row(perm[t]));
  }
  SUBCASE("layout resolution mismatch is rejected") {
    const auto in = random_inputs<double>(rng, 3, {2, 2}, 2, 1);
    CHECK_THROWS_AS(rca_attention(in, all_ones_layout(3, {1, 4})), InvalidInput);
  }
}

TEST_CASE("analytic gradients match central finite differences") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const auto in = random_inputs<double>(rng, 2, {2, 2}, 3, 1);
    LayoutTensor layout = all_ones_layout(2, {2, 2});
    layout.bits(1, 0) = false;  // cell 0 isolated to token 0
    layout.bits(0, 3) = false;  // cell 3 isolated to token 1
    const auto report = gradient_check(in, layout, 1e-3);
    CHECK(report.max_relative_error <= 1e-2);
  }
}

TEST_CASE("rectified-out key/value rows receive no gradient from isolated cells") {
  Rng rng(8);
  const auto in = random_inputs<double>(rng, 2, {1, 2}, 2, 1);
  LayoutTensor layout = all_ones_layout(2, {1, 2});
  layout.bits(1, 0) = false;
  layout.bits(0, 1) = false;
  const auto fwd = rca_attention(in, layout);
  // Loss depends only on cell 0, which sees token 0 alone.
  std::vector<MatrixD> grad_out{MatrixD::Zero(2, 2)};
  grad_out[0].row(0) = MatrixD::Ones(1, 2);
  const auto g = attention_backward(in, fwd.weights, grad_out);
  CHECK(g.keys[0].row(1).cwiseAbs().maxCoeff() == 0.0);
  CHECK(g.values[0].row(1).cwiseAbs().maxCoeff() == 0.0);
  // A single admitted token gets weight 1 regardless of its logit.
  CHECK(g.keys[0].row(0).cwiseAbs().maxCoeff() == doctest::Approx(0.0));
  CHECK(g.values[0].row(0).sum() == doctest::Approx(2.0));
}

namespace {

class TwoSiteBackbone : public CrossAttentionBackbone<double> {
 public:
  TwoSiteBackbone() : fine_("down.attn", {8, 8}), coarse_("mid.attn", {4, 4}) {
    Rng rng(99);
    inputs_fine_ = random_inputs<double>(rng, 6, {8, 8}, 4, 2);
    inputs_coarse_ = random_inputs<double>(rng, 6, {4, 4}, 4, 2);
  }
  std::vector<CrossAttentionSite<double>*> cross_attention_sites() override { return {&fine_, &coarse_}; }

  MatrixD forward(Branch branch = Branch::conditional) {
    const ForwardContext ctx{++forward_id_, branch};
    const auto a = fine_(inputs_fine_, ctx);
    const auto b = coarse_(inputs_coarse_, ctx);
    MatrixD out(1, 2);
    out << a.output[0].sum() + a.output[1].sum(), b.output[0].sum() + b.output[1].sum();
    return out;
  }

 private:
  CrossAttentionSite<double> fine_;
  CrossAttentionSite<double> coarse_;
  AttentionInputs<double> inputs_fine_;
  AttentionInputs<double> inputs_coarse_;
  std::uint64_t forward_id_ = 0;
};

class NoSiteBackbone : public CrossAttentionBackbone<double> {
 public:
  std::vector<CrossAttentionSite<double>*> cross_attention_sites() override { return {}; }
};

}  // namespace

TEST_CASE("install_hooks contract") {
  TwoSiteBackbone backbone;
  const MatrixD vanilla = backbone.forward();
  Rng rng(10);
  const auto fine = std::make_shared<LayoutTensor>(random_layout(rng, 6, {8, 8}));
  const auto coarse = std::make_shared<LayoutTensor>(random_layout(rng, 6, {4, 4}));

  SUBCASE("provider queried once per resolution per forward") {
    std::map<Resolution, int> calls;
    auto handle = install_hooks<double>(backbone, [&](Resolution r) -> std::shared_ptr<const LayoutTensor> {
      ++calls[r];
      return r == Resolution{8, 8} ? fine : coarse;
    });
    backbone.forward();
    backbone.forward();
    CHECK(calls[{8, 8}] == 2);
    CHECK(calls[{4, 4}] == 2);
  }
  SUBCASE("install then remove restores bit-identical outputs") {
    {
      auto handle = install_hooks<double>(backbone, [&](Resolution r) -> std::shared_ptr<const LayoutTensor> {
        return r == Resolution{8, 8} ? fine : coarse;
      });
      CHECK(backbone.forward() != vanilla);
      handle.remove();
      CHECK_FALSE(handle.active());
    }
    CHECK(backbone.forward() == vanilla);
  }
  SUBCASE("handle destruction also removes the hooks") {
    {
      auto handle = install_hooks<double>(backbone, [&](Resolution r) -> std::shared_ptr<const LayoutTensor> {
        return r == Resolution{8, 8} ? fine : coarse;
      });
    }
    CHECK(backbone.forward() == vanilla);
  }
  SUBCASE("all-ones provider reproduces vanilla outputs") {
    auto handle = install_hooks<double>(backbone, [](Resolution r) {
      return std::make_shared<const LayoutTensor>(all_ones_layout(6, r));
    });
    CHECK((backbone.forward() - vanilla).cwiseAbs().maxCoeff() <= 1e-5);
  }
  SUBCASE("unconditional branch is never rectified") {
    int calls = 0;
    auto handle = install_hooks<double>(backbone, [&](Resolution r) -> std::shared_ptr<const LayoutTensor> {
      ++calls;
      return r == Resolution{8, 8} ? fine : coarse;
    });
    CHECK(backbone.forward(Branch::unconditional) == vanilla);
    CHECK(calls == 0);
  }
  SUBCASE("backbones without sites are unsupported") {
    NoSiteBackbone none;
    CHECK_THROWS_AS(install_hooks<double>(none, [](Resolution) { return nullptr; }), UnsupportedBackbone);
  }
}
