// Copyright 2026 The AltUp Toolkit Authors.
// SPDX-License-Identifier: Apache-2.0

// Alternating Updates: a K*d-wide representation updated by a d-wide layer.
//
//   predict  x_hat^i = sum_j P[i,j] x^j
//   compute  y       = L(x^{j*})
//   correct  x_new^i = x_hat^i + g[i] (y - x_hat^{j*})
//
// Sub-blocks are contiguous d-wide slices of the last axis.

#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "altup/errors.hpp"
#include "altup/tensor.hpp"
#include "altup/transformer.hpp"

namespace altup {

enum class Selection { same, alternating };

struct AltUpConfig {
  std::size_t K = 2;
  Selection selection = Selection::alternating;
  std::size_t j_fixed = 0;  // used by Selection::same
  std::size_t d = 0;        // sub-block width

  void validate(std::size_t width) const {
    if (K == 0) throw ConfigError("altup: K must be >= 1");
    if (K * d != width)
      throw ConfigError("altup: K*d = " + std::to_string(K * d) + " does not match width " +
                        std::to_string(width));
    if (j_fixed >= K) throw ConfigError("altup: j_fixed outside [0,K)");
  }
};

struct AltUpLayerParams {
  Tensor P;  // [K,K]
  Tensor g;  // [K]
  LayerParams inner;

  std::size_t K() const { return g.numel(); }

  /// P = p_diag * I, g = g_init.
  static AltUpLayerParams init(std::size_t K, LayerParams inner, double p_diag = 1.0,
                               double g_init = 1.0) {
    AltUpLayerParams p;
    p.P = Tensor::zeros({K, K}, true);
    for (std::size_t i = 0; i < K; ++i) p.P.data()[i * K + i] = p_diag;
    p.g = Tensor::full({K}, g_init, true);
    p.inner = std::move(inner);
    return p;
  }
};

inline std::size_t select_block(std::size_t layer_index, const AltUpConfig& cfg) {
  return cfg.selection == Selection::same ? cfg.j_fixed : layer_index % cfg.K;
}

/// One AltUp layer around an arbitrary width-d map `inner` (Tensor -> Tensor).
/// `inner` is invoked exactly once, on sub-block j_star.
template <class Inner>
Tensor altup_layer_forward(const Tensor& x_old, const Tensor& P, const Tensor& g,
                           std::size_t j_star, Inner&& inner) {
  const std::size_t K = g.numel();
  if (P.numel() != K * K) throw ShapeError("altup: P must be KxK, got " + to_string(P.shape()));
  if (j_star >= K) throw RangeError("altup: j* = " + std::to_string(j_star) + " outside [0,K)");
  if (x_old.last_dim() % K != 0)
    throw ShapeError("altup: width " + std::to_string(x_old.last_dim()) + " is not a multiple of K=" +
                     std::to_string(K));
  std::vector<Tensor> blocks = split(x_old, K);

  std::vector<Tensor> pred(K);
  for (std::size_t i = 0; i < K; ++i) {
    Tensor acc = mul_entry(blocks[0], P, i * K);
    for (std::size_t j = 1; j < K; ++j) acc = add(acc, mul_entry(blocks[j], P, i * K + j));
    pred[i] = acc;
  }

  Tensor computed = inner(blocks[j_star]);

  // Block j* is evaluated as (1 - g) x_hat + g y, which equals the correction
  // formula and reproduces y exactly when g = 1.
  Tensor one_minus_g = sub(Tensor::full(g.shape(), 1.0), g);
  Tensor delta = sub(computed, pred[j_star]);
  std::vector<Tensor> out(K);
  for (std::size_t i = 0; i < K; ++i) {
    if (i == j_star)
      out[i] = add(mul_entry(pred[i], one_minus_g, i), mul_entry(computed, g, i));
    else
      out[i] = add(pred[i], mul_entry(delta, g, i));
  }
  return K == 1 ? out.front() : concat(out);
}

inline Tensor altup_layer_forward(const Tensor& x_old, const AltUpLayerParams& params,
                                  std::size_t j_star, bool causal) {
  return altup_layer_forward(x_old, params.P, params.g, j_star, [&](const Tensor& block) {
    return layer_forward(block, params.inner, causal);
  });
}

/// Sum baseline: extra embedding features added to the token representation.
inline Tensor sum_consume(const Tensor& x, const Tensor& extra) {
  if (x.shape() != extra.shape()) detail::shape_mismatch("sum_consume", x, extra);
  return add(x, extra);
}

/// d-wide lookup replicated K times -> [N, K*d].
inline Tensor recycled_embed(std::span<const int> token_ids, const Tensor& table, std::size_t K) {
  if (K == 0) throw ConfigError("recycled_embed: K must be >= 1");
  Tensor row = embed(token_ids, table);
  if (K == 1) return row;
  return concat(std::vector<Tensor>(K, row));
}

/// Sum of the K contiguous sub-blocks -> [N, d].
inline Tensor recycled_downproject(const Tensor& x, std::size_t K) {
  std::vector<Tensor> blocks = split(x, K);
  Tensor acc = blocks[0];
  for (std::size_t i = 1; i < K; ++i) acc = add(acc, blocks[i]);
  return acc;
}

struct AltUpParamCount {
  std::size_t per_layer_extra = 0;
  std::size_t embedding_extra = 0;
};

inline AltUpParamCount altup_param_count(const ModelConfig& model, const AltUpConfig& cfg,
                                         bool recycled) {
  return {cfg.K * cfg.K + cfg.K, recycled ? 0 : (cfg.K - 1) * model.vocab_size * model.d_model};
}

}  // namespace altup
