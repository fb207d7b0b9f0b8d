// Copyright 2026 The AltUp Toolkit Authors.
// SPDX-License-Identifier: Apache-2.0

// Decoder-only language model assembling the layer variants: dense, AltUp,
// Recycled-AltUp, the Sum baseline, Sequence-AltUp, stride-and-skip and
// average pooling, each optionally with memory-augmented layers.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "altup/altup_layer.hpp"
#include "altup/errors.hpp"
#include "altup/grad_check.hpp"
#include "altup/memory.hpp"
#include "altup/rng.hpp"
#include "altup/seq_altup.hpp"
#include "altup/tensor.hpp"
#include "altup/transformer.hpp"

namespace altup {

enum class Variant { dense, altup, recycled_altup, sum_baseline, seq_altup, stride_skip, avg_pool };

inline constexpr Variant kAllVariants[] = {Variant::dense,        Variant::altup,      Variant::recycled_altup,
                                           Variant::sum_baseline, Variant::seq_altup,  Variant::stride_skip,
                                           Variant::avg_pool};

inline std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::dense: return "dense";
    case Variant::altup: return "altup";
    case Variant::recycled_altup: return "recycled_altup";
    case Variant::sum_baseline: return "sum_baseline";
    case Variant::seq_altup: return "seq_altup";
    case Variant::stride_skip: return "stride_skip";
    case Variant::avg_pool: return "avg_pool";
  }
  return "?";
}

inline Variant parse_variant(std::string_view s) {
  for (Variant v : kAllVariants)
    if (variant_name(v) == s) return v;
  throw ConfigError("unknown variant '" + std::string(s) + "'");
}

inline bool uses_altup(Variant v) { return v == Variant::altup || v == Variant::recycled_altup; }
inline bool uses_seq(Variant v) {
  return v == Variant::seq_altup || v == Variant::stride_skip || v == Variant::avg_pool;
}

struct AltUpSettings {
  std::size_t K = 2;
  Selection selection = Selection::alternating;
  std::size_t j_fixed = 0;
  double init_p_diag = 1.0;
  double init_g = 1.0;
};

/// Sequence-axis variants act on layers [first_layer, last_layer]; a negative
/// last_layer counts from the end (-1 is layer L-2, so the default covers
/// every layer except the first and the last).
struct SeqSettings {
  std::size_t stride = 4;
  std::size_t first_layer = 1;
  long last_layer = -1;
  double a1 = 1.0, a2 = 0.0, b = 1.0;
};

struct ModelSpec {
  ModelConfig model;
  Variant variant = Variant::dense;
  std::optional<AltUpSettings> altup;
  std::optional<SeqSettings> seq;
  std::optional<MemoryConfig> memory;
  std::vector<std::size_t> memory_layers;  // empty -> every layer
  bool causal = true;

  /// Half-open layer range of the sequence-axis variant.
  std::pair<std::size_t, std::size_t> seq_range() const {
    if (!seq) return {0, 0};
    const long L = static_cast<long>(model.n_layers);
    const long last = seq->last_layer < 0 ? L - 1 + seq->last_layer : seq->last_layer;
    const long first = static_cast<long>(seq->first_layer);
    if (last < first) return {0, 0};
    return {static_cast<std::size_t>(first), static_cast<std::size_t>(last + 1)};
  }

  bool has_memory(std::size_t layer) const {
    if (!memory) return false;
    if (memory_layers.empty()) return true;
    return std::find(memory_layers.begin(), memory_layers.end(), layer) != memory_layers.end();
  }

  std::size_t K() const { return uses_altup(variant) ? altup->K : 1; }

  /// Width of the token embedding table.
  std::size_t table_width() const {
    switch (variant) {
      case Variant::altup: return altup->K * model.d_model;
      case Variant::sum_baseline: return 2 * model.d_model;
      default: return model.d_model;
    }
  }

  /// Width of the vector fed to the output head.
  std::size_t head_width() const {
    return variant == Variant::altup ? altup->K * model.d_model : model.d_model;
  }

  void validate() const {
    model.validate();
    if (uses_altup(variant) != altup.has_value())
      throw ConfigError(std::string("variant ") + std::string(variant_name(variant)) +
                        (altup ? " does not take" : " requires") + " an altup section");
    if (uses_seq(variant) != seq.has_value())
      throw ConfigError(std::string("variant ") + std::string(variant_name(variant)) +
                        (seq ? " does not take" : " requires") + " a seq section");
    if (altup) {
      if (altup->K == 0 || altup->K > 4) throw ConfigError("altup: K must be in [1,4]");
      if (altup->j_fixed >= altup->K) throw ConfigError("altup: j_fixed outside [0,K)");
    }
    if (seq) {
      if (seq->stride == 0) throw ConfigError("seq: stride must be >= 1");
      auto [lo, hi] = seq_range();
      if (lo >= hi || hi > model.n_layers)
        throw ConfigError("seq: layer range is empty or outside the model (n_layers=" +
                          std::to_string(model.n_layers) + ")");
    }
    for (std::size_t l : memory_layers)
      if (l >= model.n_layers) throw ConfigError("memory: layer " + std::to_string(l) + " outside the model");
  }
};

struct ParamCensus {
  std::size_t embedding = 0;
  std::size_t non_embedding = 0;
  std::size_t total() const { return embedding + non_embedding; }
};

class Model {
 public:
  Model() = default;

  Model(const ModelSpec& spec, std::uint64_t seed) : spec_(spec) {
    spec_.validate();
    Rng rng(seed);
    const ModelConfig& m = spec_.model;
    const std::size_t d = m.d_model;
    tok_ = Tensor::zeros({m.vocab_size, spec_.table_width()}, true);
    fill_normal(tok_.data(), 1.0 / std::sqrt(static_cast<double>(spec_.table_width())), rng);
    pos_ = Tensor::zeros({m.max_seq_len, d}, true);
    fill_normal(pos_.data(), 1.0 / std::sqrt(static_cast<double>(d)), rng);
    auto [seq_lo, seq_hi] = spec_.seq_range();
    for (std::size_t l = 0; l < m.n_layers; ++l) {
      Block b;
      b.layer = LayerParams::init(d, m.n_heads, m.ffn_hidden, rng);
      if (uses_altup(spec_.variant)) {
        AltUpLayerParams a = AltUpLayerParams::init(spec_.altup->K, b.layer, spec_.altup->init_p_diag,
                                                    spec_.altup->init_g);
        b.P = a.P;
        b.g = a.g;
      }
      if (spec_.variant == Variant::seq_altup && l >= seq_lo && l < seq_hi)
        b.seq = SeqAltUpParams::init(spec_.seq->stride, spec_.seq->a1, spec_.seq->a2, spec_.seq->b).coeffs;
      if (spec_.has_memory(l)) b.memory = MemoryLayer(*spec_.memory, d, m.vocab_size, rng);
      blocks_.push_back(std::move(b));
    }
    final_ln_ = Tensor::full({spec_.head_width()}, 1.0, true);
  }

  const ModelSpec& spec() const { return spec_; }

  /// Every trainable tensor in a fixed order.
  std::vector<NamedTensor> parameters() const {
    std::vector<NamedTensor> out{{"tok", tok_}, {"pos", pos_}};
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
      const Block& b = blocks_[l];
      const std::string prefix = "layer" + std::to_string(l) + ".";
      for (auto& p : b.layer.named(prefix)) out.push_back(std::move(p));
      if (b.P.defined()) {
        out.push_back({prefix + "altup.P", b.P});
        out.push_back({prefix + "altup.g", b.g});
      }
      if (b.seq.defined()) out.push_back({prefix + "seq", b.seq});
      if (b.memory) for (auto& p : b.memory->named(prefix + "mem.")) out.push_back(std::move(p));
    }
    out.push_back({"final_ln", final_ln_});
    return out;
  }

  /// Scalar count of trainable parameters; token tables are "embedding".
  ParamCensus census() const {
    ParamCensus c;
    for (const auto& p : parameters()) (p.name == "tok" ? c.embedding : c.non_embedding) += p.tensor.numel();
    return c;
  }

  void zero_grad() const {
    for (auto p : parameters()) p.tensor.zero_grad();
  }

  /// Logits [N, vocab] for one sequence.
  Tensor forward(std::span<const int> ids, bool training, Rng& rng) const {
    const ModelConfig& m = spec_.model;
    const std::size_t N = ids.size(), d = m.d_model;
    if (N == 0) throw ShapeError("model: empty sequence");
    if (N > m.max_seq_len)
      throw ShapeError("model: sequence of " + std::to_string(N) + " exceeds max_seq_len " +
                       std::to_string(m.max_seq_len));
    std::vector<std::size_t> positions(N);
    for (std::size_t i = 0; i < N; ++i) positions[i] = i;
    Tensor pos = gather_rows(pos_, positions);
    const bool causal = spec_.causal;

    switch (spec_.variant) {
      case Variant::altup:
      case Variant::recycled_altup: {
        const std::size_t K = spec_.altup->K;
        AltUpConfig cfg{K, spec_.altup->selection, spec_.altup->j_fixed, d};
        Tensor x;
        if (spec_.variant == Variant::altup) {
          x = add(embed(ids, tok_), K == 1 ? pos : concat(std::vector<Tensor>(K, pos)));
        } else {
          Tensor base = add(embed(ids, tok_), pos);
          x = K == 1 ? base : concat(std::vector<Tensor>(K, base));
        }
        for (std::size_t l = 0; l < blocks_.size(); ++l) {
          const Block& b = blocks_[l];
          x = altup_layer_forward(x, b.P, b.g, select_block(l, cfg), [&](const Tensor& block) {
            return apply_block(b, block, ids, causal, training, rng);
          });
        }
        if (spec_.variant == Variant::recycled_altup) x = recycled_downproject(x, K);
        return lm_head(layer_norm(x, final_ln_), tok_);
      }
      case Variant::sum_baseline: {
        std::vector<Tensor> halves = split(embed(ids, tok_), 2);
        Tensor x = add(sum_consume(halves[0], halves[1]), pos);
        x = run_dense(x, ids, 0, blocks_.size(), causal, training, rng);
        return lm_head(layer_norm(x, final_ln_), slice_last(tok_, 0, d));
      }
      default:
        break;
    }

    Tensor x = add(embed(ids, tok_), pos);
    auto [lo, hi] = spec_.seq_range();
    if (spec_.variant == Variant::dense) {
      x = run_dense(x, ids, 0, blocks_.size(), causal, training, rng);
    } else if (spec_.variant == Variant::avg_pool) {
      x = run_dense(x, ids, 0, lo, causal, training, rng);
      x = pooled_section(x, ids, lo, hi, causal, training, rng);
      x = run_dense(x, ids, hi, blocks_.size(), causal, training, rng);
    } else {
      const std::size_t k = spec_.seq->stride;
      for (std::size_t l = 0; l < blocks_.size(); ++l) {
        const Block& b = blocks_[l];
        if (l < lo || l >= hi) {
          x = apply_block(b, x, ids, causal, training, rng);
          continue;
        }
        std::vector<int> sub_ids;
        for (std::size_t i : sampled_positions(N, k)) sub_ids.push_back(ids[i]);
        auto inner = [&](const Tensor& s) { return apply_block(b, s, sub_ids, causal, training, rng); };
        x = spec_.variant == Variant::seq_altup ? seq_altup_forward(x, b.seq, k, inner)
                                                : stride_and_skip_forward(x, k, inner);
      }
    }
    return lm_head(layer_norm(x, final_ln_), tok_);
  }

 private:
  struct Block {
    LayerParams layer;
    Tensor P, g;  // AltUp scalars
    Tensor seq;   // (a1, a2, b)
    std::optional<MemoryLayer> memory;
  };

  static Tensor apply_block(const Block& b, const Tensor& x, std::span<const int> ids, bool causal,
                            bool training, Rng& rng) {
    Tensor out = layer_forward(x, b.layer, causal);
    if (b.memory) out = b.memory->forward(x, ids, out, training, rng);
    return out;
  }

  Tensor run_dense(Tensor x, std::span<const int> ids, std::size_t from, std::size_t to, bool causal,
                   bool training, Rng& rng) const {
    for (std::size_t l = from; l < to; ++l) x = apply_block(blocks_[l], x, ids, causal, training, rng);
    return x;
  }

  /// Layers [lo, hi) run on the window-averaged sequence. Their net update to
  /// window j is added back to every position of window j+1, so position i
  /// only sees windows that end before it.
  Tensor pooled_section(const Tensor& x, std::span<const int> ids, std::size_t lo, std::size_t hi,
                        bool causal, bool training, Rng& rng) const {
    const std::size_t N = x.dim(0), d = x.dim(1), k = spec_.seq->stride;
    Tensor pooled = average_pool_seq(x, k);
    std::vector<int> pooled_ids;
    for (std::size_t i : sampled_positions(N, k)) pooled_ids.push_back(ids[i]);
    Tensor y = run_dense(pooled, pooled_ids, lo, hi, causal, training, rng);
    Tensor delta = sub(y, pooled);
    std::vector<std::size_t> src(N);
    Tensor mask = Tensor::zeros({N, d});
    for (std::size_t i = 0; i < N; ++i) {
      const std::size_t w = i / k;
      src[i] = w == 0 ? 0 : w - 1;
      if (w > 0) std::fill_n(&mask.data()[i * d], d, 1.0);
    }
    return add(x, mul(gather_rows(delta, std::move(src)), mask));
  }

  ModelSpec spec_;
  Tensor tok_, pos_, final_ln_;
  std::vector<Block> blocks_;
};

}  // namespace altup
