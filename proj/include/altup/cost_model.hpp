// Copyright 2026 The AltUp Toolkit Authors.
// SPDX-License-Identifier: Apache-2.0

// Closed-form parameter, FLOP and activation-memory accounting. FLOPs are
// multiply-accumulates of matrix products only; softmax, layer norm and
// activations are not counted.

#pragma once

#include <cmath>
#include <cstdint>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "altup/errors.hpp"
#include "altup/model.hpp"

namespace altup {

struct LayerFlops {
  std::uint64_t attention_projections = 0;  // 4 N d^2
  std::uint64_t attention_scores = 0;       // 2 N^2 d
  std::uint64_t ffn = 0;                    // 3 N d h
  std::uint64_t attention() const { return attention_projections + attention_scores; }
  std::uint64_t total() const { return attention() + ffn; }
};

/// Multiply-accumulates of one transformer layer over N positions. The head
/// count does not change the total: each head does N^2 d/a work, a times.
inline LayerFlops layer_flops(std::uint64_t N, std::uint64_t d, std::uint64_t ffn_hidden, std::uint64_t a = 1) {
  if (N == 0 || d == 0 || ffn_hidden == 0 || a == 0) throw RangeError("layer_flops: arguments must be positive");
  return {4 * N * d * d, 2 * N * N * d, 3 * N * d * ffn_hidden};
}

/// Predict is K^2 scalar-vector products summed into K vectors, K(2K-1)d;
/// correct is one multiply-add per block, 2Kd.
inline std::uint64_t altup_overhead(std::uint64_t d, std::uint64_t K) {
  if (K == 0) throw RangeError("altup_overhead: K must be >= 1");
  return K * (2 * K - 1) * d + 2 * K * d;
}

enum class MemoryVariant { dense, altup_k2 };

/// s b h L (34 + 5 a s / h), plus 3 s b h L for AltUp with K = 2. Abstract
/// units; multiply by an element size for bytes.
inline double activation_memory(double s, double b, double h, double L, double a, MemoryVariant v) {
  if (s <= 0 || b <= 0 || h <= 0 || L <= 0 || a <= 0) throw RangeError("activation_memory: arguments must be positive");
  const double base = s * b * h * L;
  const double dense = base * (34.0 + 5.0 * a * s / h);
  return v == MemoryVariant::dense ? dense : dense + 3.0 * base;
}

struct CostOptions {
  std::size_t batch = 1;
  std::size_t element_bytes = 1;
};

struct CostReport {
  std::uint64_t embedding_params = 0;
  std::uint64_t non_embedding_params = 0;
  std::uint64_t untied_embedding_params = 0;  // with a separate output table
  std::uint64_t memory_params = 0;            // part of non_embedding
  std::uint64_t router_params = 0;            // part of non_embedding
  std::uint64_t flops_per_token_per_layer = 0;
  std::uint64_t altup_overhead_flops_per_token = 0;
  std::uint64_t activation_memory_bytes = 0;
  std::vector<std::string> assumptions;

  std::uint64_t total_params() const { return embedding_params + non_embedding_params; }
};

inline void to_json(nlohmann::json& j, const CostReport& r) {
  j = nlohmann::json{{"embedding_params", r.embedding_params},
                     {"non_embedding_params", r.non_embedding_params},
                     {"total_params", r.total_params()},
                     {"untied_embedding_params", r.untied_embedding_params},
                     {"memory_params", r.memory_params},
                     {"router_params", r.router_params},
                     {"flops_per_token_per_layer", r.flops_per_token_per_layer},
                     {"altup_overhead_flops_per_token", r.altup_overhead_flops_per_token},
                     {"activation_memory_bytes", r.activation_memory_bytes},
                     {"assumptions", r.assumptions}};
}

inline void write_text(std::ostream& os, const CostReport& r) {
  auto row = [&](const char* k, std::uint64_t v) {
    os << "  " << k << std::string(34 - std::string(k).size(), ' ') << v << "\n";
  };
  os << "cost report\n";
  row("embedding_params", r.embedding_params);
  row("non_embedding_params", r.non_embedding_params);
  row("total_params", r.total_params());
  row("untied_embedding_params", r.untied_embedding_params);
  row("memory_params", r.memory_params);
  row("router_params", r.router_params);
  row("flops_per_token_per_layer", r.flops_per_token_per_layer);
  row("altup_overhead_flops_per_token", r.altup_overhead_flops_per_token);
  row("activation_memory_bytes", r.activation_memory_bytes);
  os << "assumptions\n";
  for (const auto& a : r.assumptions) os << "  - " << a << "\n";
}

/// Scalars in one memory table plus its router, if any.
inline std::pair<std::uint64_t, std::uint64_t> memory_param_count(const MemoryConfig& m, std::uint64_t d) {
  const std::uint64_t table =
      m.expert == ExpertKind::constant ? m.n * d : 2 * std::max<std::uint64_t>(m.rank, 1) * m.n * d;
  const std::uint64_t router = m.lookup == LookupKind::softmax ? m.n * d : 0;
  return {table, router};
}

inline CostReport count_params(const ModelSpec& spec, const CostOptions& opt = {}) {
  spec.validate();
  const ModelConfig& m = spec.model;
  const std::uint64_t d = m.d_model, V = m.vocab_size, L = m.n_layers, h = m.ffn_hidden;
  const std::uint64_t K = spec.K();
  CostReport r;
  r.embedding_params = V * spec.table_width();
  r.untied_embedding_params = r.embedding_params + V * spec.head_width();

  std::uint64_t non_emb = m.max_seq_len * d + L * LayerParams::count(d, h) + spec.head_width();
  if (uses_altup(spec.variant)) non_emb += L * (K * K + K);
  if (spec.variant == Variant::seq_altup) {
    auto [lo, hi] = spec.seq_range();
    non_emb += 3 * (hi - lo);
  }
  if (spec.memory) {
    auto [table, router] = memory_param_count(*spec.memory, d);
    const std::uint64_t layers = spec.memory_layers.empty() ? L : spec.memory_layers.size();
    r.memory_params = layers * table;
    r.router_params = layers * router;
    non_emb += r.memory_params + r.router_params;
  }
  r.non_embedding_params = non_emb;

  const std::uint64_t N = m.max_seq_len;
  r.flops_per_token_per_layer = layer_flops(N, d, h, m.n_heads).total() / N;
  r.altup_overhead_flops_per_token = uses_altup(spec.variant) ? altup_overhead(d, K) : 0;
  const MemoryVariant mv = uses_altup(spec.variant) && K == 2 ? MemoryVariant::altup_k2 : MemoryVariant::dense;
  r.activation_memory_bytes = static_cast<std::uint64_t>(
      std::llround(activation_memory(static_cast<double>(N), static_cast<double>(opt.batch), static_cast<double>(d),
                                     static_cast<double>(L), static_cast<double>(m.n_heads), mv) *
                   static_cast<double>(opt.element_bytes)));

  auto& as = r.assumptions;
  as.push_back("input and output embeddings tied; untied_embedding_params adds a separate output table");
  as.push_back("embedding_params counts token tables only; learned positional table is non-embedding");
  as.push_back("FLOPs are matrix-product multiply-accumulates at N = max_seq_len: 4Nd^2 + 2N^2 d + 3Ndh");
  as.push_back("softmax, layer norm, GELU and the output head are not counted in per-layer FLOPs");
  as.push_back("activation memory is s b h L (34 + 5 a s / h) with s = max_seq_len, h = d_model, times " +
               std::to_string(opt.element_bytes) + " byte(s) per unit");
  if (uses_altup(spec.variant) && K != 2)
    as.push_back("activation memory uses the dense formula; the AltUp delta is only defined for K = 2");
  if (spec.variant == Variant::sum_baseline)
    as.push_back("sum baseline: 2d-wide table, output head tied to its first half");
  if (spec.memory)
    as.push_back("memory tables: 2 max(rank,1) n d scalars each (n d for constant experts), plus n d router weights for softmax lookup");
  return r;
}

}  // namespace altup
