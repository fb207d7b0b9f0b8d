// Copyright 2026 The AltUp Toolkit Authors.
// SPDX-License-Identifier: Apache-2.0

// Baseline transformer pieces: embedding lookup, a pre-layer-norm layer with
// multi-head self-attention and a gated-GELU feed-forward block, and a tied
// linear head.

#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "altup/errors.hpp"
#include "altup/grad_check.hpp"
#include "altup/rng.hpp"
#include "altup/tensor.hpp"

namespace altup {

struct ModelConfig {
  std::size_t d_model = 32;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t ffn_hidden = 64;
  std::size_t vocab_size = 0;
  std::size_t max_seq_len = 32;

  void validate() const {
    if (d_model == 0 || n_layers == 0 || n_heads == 0 || ffn_hidden == 0 || vocab_size == 0 ||
        max_seq_len == 0)
      throw ConfigError("model: every dimension must be positive");
    if (d_model % n_heads != 0)
      throw ConfigError("model: d_model " + std::to_string(d_model) + " not divisible by n_heads " +
                        std::to_string(n_heads));
  }
};

/// Normal(0, 1/sqrt(fan_in)) matrix.
inline Tensor init_matrix(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  Tensor t = Tensor::zeros({fan_in, fan_out}, true);
  fill_normal(t.data(), 1.0 / std::sqrt(static_cast<double>(fan_in)), rng);
  return t;
}

struct LayerParams {
  std::size_t n_heads = 1;
  Tensor wq, wk, wv, wo;        // [d,d]
  Tensor w_gate, w_up, w_down;  // [d,h], [d,h], [h,d]
  Tensor ln1, ln2;              // [d]

  std::size_t width() const { return wq.dim(0); }
  std::size_t hidden() const { return w_up.dim(1); }

  static LayerParams init(std::size_t width, std::size_t n_heads, std::size_t hidden, Rng& rng) {
    if (width % n_heads != 0) throw ConfigError("layer: width not divisible by heads");
    LayerParams p;
    p.n_heads = n_heads;
    p.wq = init_matrix(width, width, rng);
    p.wk = init_matrix(width, width, rng);
    p.wv = init_matrix(width, width, rng);
    p.wo = init_matrix(width, width, rng);
    p.w_gate = init_matrix(width, hidden, rng);
    p.w_up = init_matrix(width, hidden, rng);
    p.w_down = init_matrix(hidden, width, rng);
    p.ln1 = Tensor::full({width}, 1.0, true);
    p.ln2 = Tensor::full({width}, 1.0, true);
    return p;
  }

  /// Parameters in a fixed order, names prefixed with `prefix`.
  std::vector<NamedTensor> named(const std::string& prefix) const {
    return {{prefix + "wq", wq},         {prefix + "wk", wk},     {prefix + "wv", wv},
            {prefix + "wo", wo},         {prefix + "w_gate", w_gate}, {prefix + "w_up", w_up},
            {prefix + "w_down", w_down}, {prefix + "ln1", ln1},   {prefix + "ln2", ln2}};
  }

  static std::size_t count(std::size_t width, std::size_t hidden) {
    return 4 * width * width + 3 * width * hidden + 2 * width;
  }
};

inline Tensor embed(std::span<const int> token_ids, const Tensor& table) {
  return embedding(table, token_ids);
}

inline void check_finite(const Tensor& t, const char* what) {
  for (double v : t.data())
    if (!std::isfinite(v)) throw NumericError(std::string(what) + ": non-finite output", what);
}

/// Pre-LN residual layer: x + Attn(LN(x)), then + FFN(LN(.)), where
/// FFN(z) = down(gelu(gate z) * (up z)).
inline Tensor layer_forward(const Tensor& x, const LayerParams& p, bool causal) {
  detail::require_rank2("layer_forward", x);
  const std::size_t n = x.dim(0), d = p.width();
  if (x.dim(1) != d)
    throw ShapeError("layer_forward: input " + to_string(x.shape()) + " for layer width " +
                     std::to_string(d));
  Counters& c = counters();
  ++c.layer_calls;
  c.layer_positions += n;

  const std::size_t heads = p.n_heads, dh = d / heads;
  const double scale_factor = 1.0 / std::sqrt(static_cast<double>(dh));

  Tensor h = layer_norm(x, p.ln1);
  Tensor q = matmul(h, p.wq);
  Tensor k = matmul(h, p.wk);
  Tensor v = matmul(h, p.wv);
  std::vector<Tensor> head_out;
  head_out.reserve(heads);
  for (std::size_t i = 0; i < heads; ++i) {
    Tensor qi = heads == 1 ? q : slice_last(q, i * dh, dh);
    Tensor ki = heads == 1 ? k : slice_last(k, i * dh, dh);
    Tensor vi = heads == 1 ? v : slice_last(v, i * dh, dh);
    Tensor att = softmax(scale(matmul_nt(qi, ki), scale_factor), causal);
    head_out.push_back(matmul(att, vi));
  }
  Tensor attn = matmul(heads == 1 ? head_out.front() : concat(head_out), p.wo);
  Tensor x1 = add(x, attn);

  Tensor h2 = layer_norm(x1, p.ln2);
  Tensor ffn = matmul(mul(gelu(matmul(h2, p.w_gate)), matmul(h2, p.w_up)), p.w_down);
  Tensor out = add(x1, ffn);
#ifndef NDEBUG
  check_finite(out, "layer_forward");
#endif
  (void)n;
  return out;
}

/// logits = x table^T
inline Tensor lm_head(const Tensor& x, const Tensor& table) { return matmul_nt(x, table); }

}  // namespace altup
