// Copyright 2026 The AltUp Toolkit Authors.
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "altup/grad_check.hpp"
#include "altup/rng.hpp"
#include "altup/seq_altup.hpp"

namespace altup {
namespace {

Tensor random(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape));
  fill_uniform(t.data(), lo, hi, rng);
  return t;
}

double max_rel(const Tensor& a, const Tensor& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i)
    worst = std::max(worst, std::abs(a[i] - b[i]) / std::max(1e-300, std::abs(b[i])));
  return worst;
}

TEST(SampledPositions, Stride) {
  EXPECT_EQ(sampled_positions(7, 3), (std::vector<std::size_t>{0, 3, 6}));
  EXPECT_EQ(sampled_positions(6, 3), (std::vector<std::size_t>{0, 3}));
  EXPECT_EQ(sampled_positions(1, 4), (std::vector<std::size_t>{0}));
}

TEST(SeqAltUp, StrideOneUnitGainIsThePlainLayer) {
  Rng rng(1);
  for (int trial = 0; trial < 10; ++trial) {
    LayerParams inner = LayerParams::init(8, 2, 16, rng);
    std::uniform_real_distribution<double> u(-2, 2);
    SeqAltUpParams p = SeqAltUpParams::init(1, u(rng), u(rng), 1.0);
    Tensor x = random({5, 8}, rng);
    EXPECT_LT(max_rel(seq_altup_forward(x, inner, p, true), layer_forward(x, inner, true)), 1e-12);
  }
}

TEST(SeqAltUp, ZeroGainSkipsTheLayer) {
  Rng rng(2);
  LayerParams inner = LayerParams::init(4, 1, 8, rng);
  SeqAltUpParams p = SeqAltUpParams::init(3, 1.0, 0.0, 0.0);
  Tensor x = random({7, 4}, rng);
  EXPECT_EQ(seq_altup_forward(x, inner, p, true).values(), x.values());
}

TEST(SeqAltUp, HandEvaluatedThreeTokenExample) {
  Tensor x = Tensor::from({3, 2}, {1, 2, 3, 4, 5, 6});
  Tensor coeffs = Tensor::from({3}, {0, 1, 1});
  Tensor y = seq_altup_forward(x, coeffs, 2, [](const Tensor& s) { return s; });
  EXPECT_EQ(y.values(), (std::vector<double>{1, 2, 1, 2, 5, 6}));
}

TEST(SeqAltUp, GeneralFormula) {
  Rng rng(3);
  const std::size_t T = 7, d = 3, k = 3;
  Tensor x = random({T, d}, rng), c = random({3}, rng);
  auto sq = [](const Tensor& s) { return mul(s, s); };
  Tensor y = seq_altup_forward(x, c, k, sq);
  const double a1 = c[0], a2 = c[1], b = c[2];
  for (std::size_t i = 0; i < T; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      const std::size_t s = (i / k) * k;
      const double hat_i = a1 * x.at(i, j) + a2 * x.at(s, j);
      const double hat_s = a1 * x.at(s, j) + a2 * x.at(s, j);
      const double tilde = x.at(s, j) * x.at(s, j);
      EXPECT_NEAR(y.at(i, j), hat_i + b * (tilde - hat_s), 1e-14);
    }
}

TEST(SeqAltUp, RejectsEmptySequence) {
  Rng rng(4);
  LayerParams inner = LayerParams::init(4, 1, 8, rng);
  EXPECT_THROW(seq_altup_forward(Tensor::zeros({0, 4}), inner, SeqAltUpParams::init(2), true), ShapeError);
  EXPECT_THROW(stride_and_skip_forward(Tensor::zeros({0, 4}), inner, 2), ShapeError);
  EXPECT_THROW(SeqAltUpParams::init(0), ConfigError);
}

TEST(SeqAltUp, InnerLayerSeesCeilTOverKPositions) {
  Rng rng(5);
  LayerParams inner = LayerParams::init(4, 1, 8, rng);
  for (std::size_t T : {1u, 4u, 9u, 16u})
    for (std::size_t k : {1u, 2u, 4u}) {
      Tensor x = random({T, 4}, rng);
      reset_counters();
      seq_altup_forward(x, inner, SeqAltUpParams::init(k), true);
      EXPECT_EQ(counters().layer_calls, 1u);
      EXPECT_EQ(counters().layer_positions, (T + k - 1) / k);
      reset_counters();
      stride_and_skip_forward(x, inner, k);
      EXPECT_EQ(counters().layer_positions, (T + k - 1) / k);
    }
}

TEST(SeqAltUp, CoefficientGradientsPassGradCheck) {
  Rng rng(6);
  for (std::size_t k : {1u, 2u, 4u}) {
    LayerParams inner = LayerParams::init(4, 2, 8, rng);
    SeqAltUpParams p = SeqAltUpParams::init(k, 0.8, 0.4, 0.7);
    Tensor x = random({6, 4}, rng), w = random({6, 4}, rng);
    std::vector<NamedTensor> params{{"x", x}, {"coeffs", p.coeffs}};
    for (auto& n : inner.named("inner.")) params.push_back(n);
    EXPECT_LT(grad_check([&] { return sum(mul(seq_altup_forward(x, inner, p, true), w)); }, params, 1e-6), 1e-4)
        << "k=" << k;
  }
}

TEST(SeqAltUp, ContextReachesSkippedTokensOnlyWithSeqAltUp) {
  Rng rng(7);
  LayerParams inner = LayerParams::init(4, 1, 8, rng);
  const std::size_t T = 8, k = 4;
  Tensor x = random({T, 4}, rng);
  Tensor x2 = Tensor::from(x.shape(), x.values());
  for (std::size_t c = 0; c < 4; ++c) x2.data()[4 * 4 + c] += 1.0;  // sampled position 4

  SeqAltUpParams p = SeqAltUpParams::init(k, 1.0, 0.0, 1.0);
  Tensor a = seq_altup_forward(x, inner, p, true), b = seq_altup_forward(x2, inner, p, true);
  bool changed = false;
  for (std::size_t i : {5u, 6u, 7u})
    for (std::size_t c = 0; c < 4; ++c) changed = changed || a.at(i, c) != b.at(i, c);
  EXPECT_TRUE(changed);

  Tensor s = stride_and_skip_forward(x, inner, k), s2 = stride_and_skip_forward(x2, inner, k);
  for (std::size_t i : {1u, 2u, 3u, 5u, 6u, 7u})
    for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(s.at(i, c), s2.at(i, c));
}

TEST(StrideAndSkip, Examples) {
  Rng rng(8);
  LayerParams inner = LayerParams::init(4, 2, 8, rng);
  Tensor x = random({4, 4}, rng);
  EXPECT_EQ(stride_and_skip_forward(x, inner, 1).values(), layer_forward(x, inner, true).values());
  EXPECT_EQ(stride_and_skip_forward(x, 2, [](const Tensor& s) { return s; }).values(), x.values());
  Tensor y = stride_and_skip_forward(x, inner, 2);
  Tensor sub = layer_forward(gather_rows(x, {0, 2}), inner, true);
  for (std::size_t c = 0; c < 4; ++c) {
    EXPECT_EQ(y.at(1, c), x.at(1, c));
    EXPECT_EQ(y.at(3, c), x.at(3, c));
    EXPECT_EQ(y.at(0, c), sub.at(0, c));
    EXPECT_EQ(y.at(2, c), sub.at(1, c));
  }
}

TEST(AveragePool, Examples) {
  Rng rng(9);
  Tensor x = random({4, 3}, rng);
  EXPECT_EQ(average_pool_seq(x, 1).values(), x.values());
  Tensor p = average_pool_seq(x, 2);
  ASSERT_EQ(p.shape(), (Shape{2, 3}));
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_DOUBLE_EQ(p.at(0, c), (x.at(0, c) + x.at(1, c)) / 2);
    EXPECT_DOUBLE_EQ(p.at(1, c), (x.at(2, c) + x.at(3, c)) / 2);
  }
  Tensor flat = Tensor::full({7, 2}, 0.375);
  Tensor q = average_pool_seq(flat, 3);
  ASSERT_EQ(q.shape(), (Shape{3, 2}));
  for (double v : q.values()) EXPECT_EQ(v, 0.375);
}

}  // namespace
}  // namespace altup
