// Copyright 2026 The AltUp Toolkit Authors.
// SPDX-License-Identifier: Apache-2.0

// Predict-compute-correct along the sequence axis, plus the stride-and-skip
// and average-pooling baselines. Only positions 0, k, 2k, ... are processed by
// the inner layer, which attends over that subsampled sequence only.

#pragma once

#include <cstddef>
#include <vector>

#include "altup/errors.hpp"
#include "altup/tensor.hpp"
#include "altup/transformer.hpp"

namespace altup {

struct SeqAltUpParams {
  Tensor coeffs;  // [3] = (a1, a2, b)
  std::size_t stride = 4;

  static SeqAltUpParams init(std::size_t stride, double a1 = 1.0, double a2 = 0.0, double b = 1.0) {
    if (stride == 0) throw ConfigError("seq_altup: stride must be >= 1");
    return {Tensor::from({3}, {a1, a2, b}, true), stride};
  }
};

/// {0, k, 2k, ..., floor((T-1)/k) k}
inline std::vector<std::size_t> sampled_positions(std::size_t T, std::size_t k) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < T; i += k) idx.push_back(i);
  return idx;
}

template <class Inner>
Tensor seq_altup_forward(const Tensor& x, const Tensor& coeffs, std::size_t k, Inner&& inner) {
  detail::require_rank2("seq_altup", x);
  const std::size_t T = x.dim(0);
  if (T == 0) throw ShapeError("seq_altup: empty sequence");
  if (k == 0) throw RangeError("seq_altup: stride must be >= 1");
  if (coeffs.numel() != 3) throw ShapeError("seq_altup: expected (a1, a2, b)");

  std::vector<std::size_t> anchor(T);  // i -> floor(i/k) k, as a row of x
  std::vector<std::size_t> slot(T);    // i -> floor(i/k), as a row of the subsample
  for (std::size_t i = 0; i < T; ++i) {
    anchor[i] = (i / k) * k;
    slot[i] = i / k;
  }
  Tensor pred = add(mul_entry(x, coeffs, 0), mul_entry(gather_rows(x, anchor), coeffs, 1));
  Tensor computed = inner(gather_rows(x, sampled_positions(T, k)));
  Tensor diff = sub(gather_rows(computed, slot), gather_rows(pred, anchor));
  return add(pred, mul_entry(diff, coeffs, 2));
}

inline Tensor seq_altup_forward(const Tensor& x, const LayerParams& inner, const SeqAltUpParams& p,
                                bool causal) {
  return seq_altup_forward(x, p.coeffs, p.stride,
                           [&](const Tensor& s) { return layer_forward(s, inner, causal); });
}

/// Sampled positions take the inner layer's output; the rest pass through
/// unchanged.
template <class Inner>
Tensor stride_and_skip_forward(const Tensor& x, std::size_t k, Inner&& inner) {
  detail::require_rank2("stride_and_skip", x);
  const std::size_t T = x.dim(0);
  if (T == 0) throw ShapeError("stride_and_skip: empty sequence");
  if (k == 0) throw RangeError("stride_and_skip: stride must be >= 1");
  std::vector<std::size_t> idx = sampled_positions(T, k);
  Tensor computed = inner(gather_rows(x, idx));
  return merge_rows(x, computed, std::move(idx));
}

inline Tensor stride_and_skip_forward(const Tensor& x, const LayerParams& inner, std::size_t k,
                                      bool causal = true) {
  return stride_and_skip_forward(x, k, [&](const Tensor& s) { return layer_forward(s, inner, causal); });
}

inline Tensor average_pool_seq(const Tensor& x, std::size_t k) { return mean_pool_rows(x, k); }

}  // namespace altup
