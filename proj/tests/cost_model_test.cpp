// Copyright 2026 The AltUp Toolkit Authors.
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <sstream>
#include <vector>

#include <gtest/gtest.h>

#include "altup/cost_model.hpp"
#include "altup/seq_altup.hpp"

namespace altup {
namespace {

ModelSpec make_spec(Variant v, std::size_t K = 2) {
  ModelSpec s;
  s.model = {16, 4, 4, 24, 19, 12};
  s.variant = v;
  if (uses_altup(v)) {
    s.altup = AltUpSettings{};
    s.altup->K = K;
  }
  if (uses_seq(v)) s.seq = SeqSettings{};
  return s;
}

TEST(LayerFlops, Structure) {
  const auto base = layer_flops(8, 64, 256);
  const auto wide = layer_flops(8, 128, 512);
  EXPECT_GE(wide.ffn, 2 * base.ffn);
  EXPECT_LE(wide.ffn, 4 * base.ffn);
  const auto longer = layer_flops(16, 64, 256);
  EXPECT_EQ(longer.attention_scores, 4 * base.attention_scores);
  EXPECT_EQ(layer_flops(8, 64, 256, 4).total(), base.total());
  EXPECT_THROW(layer_flops(0, 4, 4), RangeError);
}

TEST(LayerFlops, MatchInstrumentedCounter) {
  Rng rng(1);
  for (std::size_t d : {4u, 8u, 16u})
    for (std::size_t heads : {1u, 2u, 4u})
      for (std::size_t N : {1u, 3u, 8u}) {
        const std::size_t h = 2 * d + 1;
        LayerParams p = LayerParams::init(d, heads, h, rng);
        Tensor x = Tensor::zeros({N, d});
        fill_uniform(x.data(), -1, 1, rng);
        reset_counters();
        layer_forward(x, p, true);
        EXPECT_EQ(counters().macs, layer_flops(N, d, h, heads).total()) << d << " " << heads << " " << N;
      }
}

TEST(AltUpOverhead, ClosedForm) {
  EXPECT_EQ(altup_overhead(64, 1), 3u * 64);
  EXPECT_EQ(altup_overhead(64, 2), 2u * 3 * 64 + 4 * 64);
  const double ratio = double(altup_overhead(512, 2)) / double(layer_flops(1, 512, 2048).ffn);
  EXPECT_LT(ratio, 0.01);
  double prev = 0;
  for (std::uint64_t K : {8u, 64u, 1024u}) {
    const double r = double(altup_overhead(512, 2 * K)) / double(altup_overhead(512, K));
    EXPECT_GT(r, prev);
    EXPECT_LT(r, 4.0);
    prev = r;
  }
  EXPECT_NEAR(prev, 4.0, 0.01);
}

TEST(ActivationMemory, Formula) {
  const double s = 512, b = 8, h = 512, L = 12, a = 8;
  EXPECT_DOUBLE_EQ(activation_memory(s, b, h, L, a, MemoryVariant::dense), s * b * h * L * 74);
  EXPECT_DOUBLE_EQ(activation_memory(s, b, h, L, a, MemoryVariant::altup_k2), s * b * h * L * 77);
  EXPECT_DOUBLE_EQ(activation_memory(s, b, 2 * h, L, 2 * a, MemoryVariant::dense),
                   2 * activation_memory(s, b, h, L, a, MemoryVariant::dense));
}

TEST(ActivationMemory, AltUpDeltaBelowTenPercent) {
  for (double s : {64.0, 512.0, 2048.0})
    for (double h : {256.0, 1024.0, 4096.0})
      for (double a : {1.0, 8.0, 64.0}) {
        if (a * s < h) continue;
        const double dense = activation_memory(s, 2, h, 4, a, MemoryVariant::dense);
        const double delta = activation_memory(s, 2, h, 4, a, MemoryVariant::altup_k2) - dense;
        EXPECT_LT(delta / dense, 0.1) << s << " " << h << " " << a;
      }
}

TEST(CountParams, AltUpDoublesAndRecycledKeepsEmbedding) {
  const auto dense = count_params(make_spec(Variant::dense));
  const auto altup = count_params(make_spec(Variant::altup, 2));
  const auto recycled = count_params(make_spec(Variant::recycled_altup, 2));
  EXPECT_EQ(altup.embedding_params, 2 * dense.embedding_params);
  EXPECT_EQ(recycled.embedding_params, dense.embedding_params);
  EXPECT_EQ(altup.non_embedding_params - dense.non_embedding_params, 4u * 6 + 16);  // L(K^2+K) + wider final LN
  EXPECT_EQ(recycled.non_embedding_params - dense.non_embedding_params, 4u * 6);
}

TEST(CountParams, MemoryTableExample) {
  ModelSpec s = make_spec(Variant::dense);
  s.model.d_model = 64;
  s.model.n_heads = 4;
  MemoryConfig mc;
  mc.lookup = LookupKind::hyperplane_lsh;
  mc.n = 128;
  mc.rank = 16;
  s.memory = mc;
  s.memory_layers = {1};
  ModelSpec plain = s;
  plain.memory.reset();
  plain.memory_layers.clear();
  const auto with = count_params(s), without = count_params(plain);
  EXPECT_EQ(with.non_embedding_params - without.non_embedding_params, 262144u);
  EXPECT_EQ(with.memory_params, 2u * 16 * 128 * 64);
  Model m(s, 3), p(plain, 3);
  EXPECT_EQ(m.census().non_embedding - p.census().non_embedding, 262144u);
}

TEST(CountParams, EqualsConstructedModelCensus) {
  std::vector<ModelSpec> grid;
  for (Variant v : kAllVariants) grid.push_back(make_spec(v));
  for (std::size_t K : {1u, 3u, 4u}) grid.push_back(make_spec(Variant::altup, K));
  grid.push_back(make_spec(Variant::recycled_altup, 4));
  for (LookupKind lk : {LookupKind::softmax, LookupKind::token_id, LookupKind::hyperplane_lsh, LookupKind::minhash})
    for (ExpertKind ek : {ExpertKind::matrix, ExpertKind::constant}) {
      ModelSpec s = make_spec(lk == LookupKind::softmax ? Variant::altup : Variant::seq_altup);
      MemoryConfig mc;
      mc.lookup = lk;
      mc.expert = ek;
      mc.n = (lk == LookupKind::token_id || lk == LookupKind::minhash) ? s.model.vocab_size : 7;
      mc.rank = 3;
      mc.top_k = 2;
      s.memory = mc;
      if (ek == ExpertKind::constant) s.memory_layers = {0, 2};
      grid.push_back(s);
    }
  ASSERT_GE(grid.size(), 12u);
  for (const auto& s : grid) {
    Model m(s, 7);
    const auto c = m.census();
    const auto r = count_params(s);
    std::size_t scalars = 0;
    for (const auto& p : m.parameters()) scalars += p.tensor.numel();
    EXPECT_EQ(r.embedding_params, c.embedding) << variant_name(s.variant);
    EXPECT_EQ(r.non_embedding_params, c.non_embedding) << variant_name(s.variant);
    EXPECT_EQ(r.total_params(), scalars);
  }
}

TEST(CountParams, SeqAltUpInnerComputeScalesWithStride) {
  Rng rng(2);
  const std::size_t d = 8, h = 12;
  LayerParams p = LayerParams::init(d, 2, h, rng);
  for (std::size_t T : {4u, 7u, 8u})
    for (std::size_t k : {1u, 2u, 4u}) {
      Tensor x = Tensor::zeros({T, d});
      fill_uniform(x.data(), -1, 1, rng);
      reset_counters();
      layer_forward(x, p, true);
      const auto full_positions = counters().layer_positions;
      reset_counters();
      seq_altup_forward(x, p, SeqAltUpParams::init(k), true);
      const std::size_t sub = (T + k - 1) / k;
      EXPECT_EQ(counters().layer_positions * T, full_positions * sub);
      EXPECT_EQ(counters().macs, layer_flops(sub, d, h).total());
      const auto lin = layer_flops(sub, d, h), full = layer_flops(T, d, h);
      EXPECT_EQ((lin.attention_projections + lin.ffn) * T, (full.attention_projections + full.ffn) * sub);
    }
}

TEST(CountParams, ReportJsonAndText) {
  ModelSpec s = make_spec(Variant::altup, 2);
  const auto r = count_params(s, {4, 2});
  nlohmann::json j = r;
  EXPECT_EQ(j["embedding_params"], r.embedding_params);
  EXPECT_EQ(j["total_params"], r.total_params());
  EXPECT_FALSE(j["assumptions"].empty());
  EXPECT_EQ(r.altup_overhead_flops_per_token, altup_overhead(16, 2));
  EXPECT_EQ(r.flops_per_token_per_layer, layer_flops(12, 16, 24).total() / 12);
  EXPECT_EQ(r.activation_memory_bytes,
            static_cast<std::uint64_t>(std::llround(2 * activation_memory(12, 4, 16, 4, 4, MemoryVariant::altup_k2))));
  std::ostringstream os;
  write_text(os, r);
  EXPECT_NE(os.str().find("non_embedding_params"), std::string::npos);
}

}  // namespace
}  // namespace altup
