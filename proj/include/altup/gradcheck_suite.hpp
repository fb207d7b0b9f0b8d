// Copyright 2026 The AltUp Toolkit Authors.
// SPDX-License-Identifier: Apache-2.0

// Finite-difference gradient checks over every layer variant on small
// instances (d = 8, N = 4, |V| = 11). Each case builds embedding -> layer(s)
// -> tied head -> cross-entropy, so table, layer and variant scalars are all
// differentiated.

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "altup/altup_layer.hpp"
#include "altup/grad_check.hpp"
#include "altup/memory.hpp"
#include "altup/rng.hpp"
#include "altup/seq_altup.hpp"
#include "altup/tensor.hpp"
#include "altup/transformer.hpp"

namespace altup {

struct GradCase {
  std::string name;
  GradCheckReport report;
};

struct GradSuiteOptions {
  std::size_t d = 8;
  std::size_t heads = 2;
  std::size_t hidden = 16;
  std::size_t vocab = 11;
  std::size_t seq_len = 4;
  double eps = 1e-6;
  std::uint64_t seed = 2024;
};

namespace detail {

struct GradFixture {
  std::vector<int> ids, targets;
  Tensor gamma;

  GradFixture(const GradSuiteOptions& o, Rng& rng) {
    std::uniform_int_distribution<int> tok(0, static_cast<int>(o.vocab) - 1);
    for (std::size_t i = 0; i < o.seq_len; ++i) ids.push_back(tok(rng));
    for (std::size_t i = 0; i < o.seq_len; ++i) targets.push_back(tok(rng));
    gamma = Tensor::zeros({o.d});
    fill_uniform(gamma.data(), 0.5, 1.5, rng);
  }

  Tensor loss(const Tensor& h, const Tensor& table) const {
    Tensor g = gamma;
    if (h.last_dim() != g.numel()) g = Tensor::full({h.last_dim()}, 1.0);
    return cross_entropy(lm_head(layer_norm(h, g), table), targets);
  }
};

inline Tensor table_for(std::size_t vocab, std::size_t width, Rng& rng) {
  Tensor t = Tensor::zeros({vocab, width}, true);
  fill_normal(t.data(), 1.0 / std::sqrt(static_cast<double>(width)), rng);
  return t;
}

/// P = I + small noise and g away from 1, so every scalar has a non-trivial
/// gradient.
inline AltUpLayerParams noisy_altup(std::size_t K, LayerParams inner, Rng& rng) {
  AltUpLayerParams a = AltUpLayerParams::init(K, std::move(inner));
  std::vector<double> noise(K * K);
  fill_uniform(noise, -0.2, 0.2, rng);
  for (std::size_t i = 0; i < K * K; ++i) a.P.data()[i] += noise[i];
  fill_uniform(a.g.data(), 0.5, 1.5, rng);
  return a;
}

inline std::vector<NamedTensor> with(std::vector<NamedTensor> base, std::vector<NamedTensor> more) {
  for (auto& m : more) base.push_back(std::move(m));
  return base;
}

}  // namespace detail

inline std::vector<GradCase> run_gradient_suite(const GradSuiteOptions& o = {}) {
  std::vector<GradCase> out;
  auto check = [&](std::string name, const std::function<Tensor()>& f, std::vector<NamedTensor> params) {
    out.push_back({std::move(name), grad_check_report(f, std::move(params), o.eps)});
  };
  Rng rng(o.seed);
  detail::GradFixture fx(o, rng);
  const bool causal = true;

  {
    Tensor table = detail::table_for(o.vocab, o.d, rng);
    LayerParams layer = LayerParams::init(o.d, o.heads, o.hidden, rng);
    check("dense", [&] { return fx.loss(layer_forward(embed(fx.ids, table), layer, causal), table); },
          detail::with({{"table", table}}, layer.named("layer.")));
  }

  for (std::size_t K : {1u, 2u, 4u}) {
    for (Selection sel : {Selection::same, Selection::alternating}) {
      Tensor table = detail::table_for(o.vocab, K * o.d, rng);
      AltUpLayerParams l0 = detail::noisy_altup(K, LayerParams::init(o.d, o.heads, o.hidden, rng), rng);
      AltUpLayerParams l1 = detail::noisy_altup(K, LayerParams::init(o.d, o.heads, o.hidden, rng), rng);
      AltUpConfig cfg{K, sel, K - 1, o.d};
      auto f = [&, cfg] {
        Tensor x = embed(fx.ids, table);
        x = altup_layer_forward(x, l0, select_block(0, cfg), causal);
        x = altup_layer_forward(x, l1, select_block(1, cfg), causal);
        return fx.loss(x, table);
      };
      auto params = detail::with({{"table", table}, {"l0.P", l0.P}, {"l0.g", l0.g}, {"l1.P", l1.P}, {"l1.g", l1.g}},
                                 detail::with(l0.inner.named("l0."), l1.inner.named("l1.")));
      check("altup K=" + std::to_string(K) + (sel == Selection::same ? " same" : " alternating"), f, params);
    }
  }

  {
    const std::size_t K = 2;
    Tensor table = detail::table_for(o.vocab, o.d, rng);
    AltUpLayerParams l0 = detail::noisy_altup(K, LayerParams::init(o.d, o.heads, o.hidden, rng), rng);
    check("recycled altup K=2",
          [&] {
            Tensor x = recycled_embed(fx.ids, table, K);
            x = altup_layer_forward(x, l0, 0, causal);
            return fx.loss(recycled_downproject(x, K), table);
          },
          detail::with({{"table", table}, {"P", l0.P}, {"g", l0.g}}, l0.inner.named("inner.")));
  }

  for (std::size_t k : {1u, 2u, 4u}) {
    Tensor table = detail::table_for(o.vocab, o.d, rng);
    LayerParams layer = LayerParams::init(o.d, o.heads, o.hidden, rng);
    SeqAltUpParams s = SeqAltUpParams::init(k, 0.9, 0.3, 0.8);
    check("seq altup k=" + std::to_string(k),
          [&] { return fx.loss(seq_altup_forward(embed(fx.ids, table), layer, s, causal), table); },
          detail::with({{"table", table}, {"coeffs", s.coeffs}}, layer.named("layer.")));
  }

  {
    Tensor table = detail::table_for(o.vocab, o.d, rng);
    LayerParams layer = LayerParams::init(o.d, o.heads, o.hidden, rng);
    check("stride and skip k=2",
          [&] { return fx.loss(stride_and_skip_forward(embed(fx.ids, table), layer, 2, causal), table); },
          detail::with({{"table", table}}, layer.named("layer.")));
  }

  for (std::size_t top_k : {1u, 2u}) {
    Tensor table = detail::table_for(o.vocab, o.d, rng);
    LayerParams layer = LayerParams::init(o.d, o.heads, o.hidden, rng);
    MemoryConfig mc;
    mc.lookup = LookupKind::softmax;
    mc.n = 6;
    mc.rank = 3;
    mc.top_k = top_k;
    MemoryLayer mem(mc, o.d, o.vocab, rng);
    // Larger router weights than the training init give routing
    // probabilities far from uniform, so their gradients are well resolved.
    Tensor router = mem.router()->W;
    fill_normal(router.data(), 0.5, rng);
    Rng unused(0);
    check("memory softmax top-" + std::to_string(top_k),
          [&] {
            Tensor x = embed(fx.ids, table);
            return fx.loss(mem.forward(x, fx.ids, layer_forward(x, layer, causal), false, unused), table);
          },
          detail::with(detail::with({{"table", table}}, layer.named("layer.")), mem.named("mem.")));
  }
  return out;
}

}  // namespace altup
