// Copyright 2026 The AltUp Toolkit Authors.
// SPDX-License-Identifier: Apache-2.0

// Memory-augmented layers: the layer output L(x) plus a weighted sum of small
// partial experts f_i(x) = V_i relu(U_i^T x) selected from a table of n by a
// lookup function. Four lookups are provided: MoE softmax top-k, Token-ID,
// hyperplane LSH, and min-hash over a window of token ids.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "altup/errors.hpp"
#include "altup/grad_check.hpp"
#include "altup/rng.hpp"
#include "altup/tensor.hpp"

namespace altup {

enum class ExpertKind { matrix, constant };

/// A single expert: V relu(U^T x) with U, V in R^{d x rank}, or the constant
/// vector `bias`.
struct PartialExpert {
  Tensor U, V;  // [d, rank]
  Tensor bias;  // [d]

  bool is_constant() const { return bias.defined(); }
};

/// x is [d] or [1,d]; the result has x's shape.
inline Tensor expert_forward(const Tensor& x, const PartialExpert& e) {
  const std::size_t d = x.numel();
  if (x.rank() > 2 || (x.rank() == 2 && x.dim(0) != 1))
    throw ShapeError("expert_forward: expected one token, got " + to_string(x.shape()));
  if (e.is_constant()) {
    if (e.bias.numel() != d) detail::shape_mismatch("expert_forward", x, e.bias);
    return reshape(e.bias, x.shape());
  }
  if (e.U.rank() != 2 || e.U.dim(0) != d) detail::shape_mismatch("expert_forward", x, e.U);
  if (e.V.shape() != e.U.shape()) detail::shape_mismatch("expert_forward", e.U, e.V);
  Tensor row = x.rank() == 2 ? x : reshape(x, {1, d});
  Tensor out = matmul_nt(relu(matmul(row, e.U)), e.V);
  return x.rank() == 2 ? out : reshape(out, {d});
}

/// n experts sharing width d and rank. Matrix experts store U and V as
/// [n, d, rank]; constant experts store `bias` as [n, d].
struct MemoryTable {
  ExpertKind kind = ExpertKind::matrix;
  std::size_t n = 0, d = 0, rank = 0;
  Tensor U, V, bias;

  /// LeCun-normal init for matrix experts (std 1/sqrt(fan_in)); zeros for
  /// constant experts.
  static MemoryTable init(ExpertKind kind, std::size_t n, std::size_t d, std::size_t rank, Rng& rng) {
    if (n == 0 || d == 0) throw ConfigError("memory table: n and d must be positive");
    MemoryTable t;
    t.kind = kind;
    t.n = n;
    t.d = d;
    if (kind == ExpertKind::constant) {
      t.bias = Tensor::zeros({n, d}, true);
      return t;
    }
    if (rank == 0) throw ConfigError("memory table: matrix experts need rank >= 1");
    t.rank = rank;
    t.U = Tensor::zeros({n, d, rank}, true);
    t.V = Tensor::zeros({n, d, rank}, true);
    fill_normal(t.U.data(), 1.0 / std::sqrt(static_cast<double>(d)), rng);
    fill_normal(t.V.data(), 1.0 / std::sqrt(static_cast<double>(rank)), rng);
    return t;
  }

  /// Copy of expert i's parameters (outside any graph).
  PartialExpert expert(std::size_t i) const {
    if (i >= n) throw RangeError("memory table: expert " + std::to_string(i) + " of " + std::to_string(n));
    PartialExpert e;
    if (kind == ExpertKind::constant) {
      e.bias = Tensor::from({d}, {bias.values().begin() + static_cast<std::ptrdiff_t>(i * d),
                                  bias.values().begin() + static_cast<std::ptrdiff_t>((i + 1) * d)});
      return e;
    }
    const std::size_t block = d * rank;
    auto slice = [&](const Tensor& t) {
      return Tensor::from({d, rank}, {t.values().begin() + static_cast<std::ptrdiff_t>(i * block),
                                      t.values().begin() + static_cast<std::ptrdiff_t>((i + 1) * block)});
    };
    e.U = slice(U);
    e.V = slice(V);
    return e;
  }

  std::size_t param_count() const {
    return kind == ExpertKind::constant ? n * d : 2 * std::max<std::size_t>(rank, 1) * n * d;
  }

  std::vector<NamedTensor> named(const std::string& prefix) const {
    if (kind == ExpertKind::constant) return {{prefix + "bias", bias}};
    return {{prefix + "U", U}, {prefix + "V", V}};
  }
};

namespace detail {

/// f_i(x_t) into `f` (length d); hidden pre-activations into `h` (length rank).
inline void expert_eval(const MemoryTable& table, bool constant, std::size_t i, const double* xt,
                        double* h, double* f) {
  const std::size_t d = table.d, r = table.rank;
  if (constant) {
    std::copy_n(&table.bias.data()[i * d], d, f);
    return;
  }
  const double* U = &table.U.data()[i * d * r];
  const double* V = &table.V.data()[i * d * r];
  std::fill_n(h, r, 0.0);
  for (std::size_t a = 0; a < d; ++a)
    for (std::size_t c = 0; c < r; ++c) h[c] += U[a * r + c] * xt[a];
  for (std::size_t a = 0; a < d; ++a) {
    double acc = 0.0;
    for (std::size_t c = 0; c < r; ++c) acc += V[a * r + c] * (h[c] > 0.0 ? h[c] : 0.0);
    f[a] = acc;
  }
}

}  // namespace detail

/// Selected experts for N tokens: row t uses indices[t*k .. t*k+k). `weights`
/// is [N,k] when the lookup weights its experts, undefined for unit weights.
struct Lookup {
  std::vector<std::size_t> indices;
  std::size_t k = 0;
  Tensor weights;
};

/// out[t] = sum_j w[t,j] f_{indices[t,j]}(x[t]); differentiable in x, the
/// table, and the weights.
inline Tensor expert_mixture(const Tensor& x, const MemoryTable& table, const Lookup& lookup) {
  detail::require_rank2("expert_mixture", x);
  const std::size_t N = x.dim(0), d = table.d, k = lookup.k, r = table.rank;
  if (x.dim(1) != d)
    throw ShapeError("expert_mixture: input " + to_string(x.shape()) + " for experts of width " +
                     std::to_string(d));
  if (lookup.indices.size() != N * k)
    throw ShapeError("expert_mixture: expected " + std::to_string(N * k) + " indices, got " +
                     std::to_string(lookup.indices.size()));
  for (std::size_t i : lookup.indices)
    if (i >= table.n)
      throw RangeError("expert_mixture: expert index " + std::to_string(i) + " outside table of " +
                       std::to_string(table.n));
  const bool weighted = lookup.weights.defined();
  if (weighted && (lookup.weights.rank() != 2 || lookup.weights.dim(0) != N || lookup.weights.dim(1) != k))
    throw ShapeError("expert_mixture: weights " + to_string(lookup.weights.shape()) + " for " +
                     std::to_string(N) + "x" + std::to_string(k) + " selections");
  const bool constant = table.kind == ExpertKind::constant;

  auto eval = [constant](const MemoryTable& tb, std::size_t i, const double* xt, double* h, double* f) {
    detail::expert_eval(tb, constant, i, xt, h, f);
  };

  Tensor out = Tensor::zeros({N, d});
  {
    auto o = out.data();
    auto xv = x.data();
    std::vector<double> h(r), f(d);
    for (std::size_t t = 0; t < N; ++t)
      for (std::size_t j = 0; j < k; ++j) {
        const double w = weighted ? lookup.weights.data()[t * k + j] : 1.0;
        eval(table, lookup.indices[t * k + j], &xv[t * d], h.data(), f.data());
        for (std::size_t a = 0; a < d; ++a) o[t * d + a] += w * f[a];
      }
  }
  if (!constant) counters().macs += N * k * 2 * d * r;

  std::vector<Tensor> inputs{x};
  if (constant) {
    inputs.push_back(table.bias);
  } else {
    inputs.push_back(table.U);
    inputs.push_back(table.V);
  }
  if (weighted) inputs.push_back(lookup.weights);
  return detail::record(
      "expert_mixture", inputs, out,
      [x, table, lookup, eval, N, d, k, r, weighted, constant](std::span<const double> g) mutable {
        auto sx = detail::sink(x);
        Tensor wt = lookup.weights;
        auto sw = weighted ? detail::sink(wt) : std::span<double>{};
        auto sb = constant ? detail::sink(table.bias) : std::span<double>{};
        auto sU = constant ? std::span<double>{} : detail::sink(table.U);
        auto sV = constant ? std::span<double>{} : detail::sink(table.V);
        auto xv = x.data();
        std::vector<double> h(r), f(d), gz(r);
        for (std::size_t t = 0; t < N; ++t) {
          const double* gt = &g[t * d];
          for (std::size_t j = 0; j < k; ++j) {
            const std::size_t i = lookup.indices[t * k + j];
            const double w = weighted ? wt.data()[t * k + j] : 1.0;
            eval(table, i, &xv[t * d], h.data(), f.data());
            if (!sw.empty()) {
              double acc = 0.0;
              for (std::size_t a = 0; a < d; ++a) acc += gt[a] * f[a];
              sw[t * k + j] += acc;
            }
            if (constant) {
              if (!sb.empty())
                for (std::size_t a = 0; a < d; ++a) sb[i * d + a] += w * gt[a];
              continue;
            }
            const double* U = &table.U.data()[i * d * r];
            const double* V = &table.V.data()[i * d * r];
            std::fill(gz.begin(), gz.end(), 0.0);
            for (std::size_t a = 0; a < d; ++a)
              for (std::size_t c = 0; c < r; ++c) {
                const double z = h[c] > 0.0 ? h[c] : 0.0;
                if (!sV.empty()) sV[i * d * r + a * r + c] += w * gt[a] * z;
                gz[c] += V[a * r + c] * w * gt[a];
              }
            for (std::size_t c = 0; c < r; ++c)
              if (h[c] <= 0.0) gz[c] = 0.0;
            for (std::size_t a = 0; a < d; ++a)
              for (std::size_t c = 0; c < r; ++c) {
                if (!sU.empty()) sU[i * d * r + a * r + c] += xv[t * d + a] * gz[c];
                if (!sx.empty()) sx[t * d + a] += U[a * r + c] * gz[c];
              }
          }
        }
      });
}

/// inner_out + sum over selected experts. With no selections the inner output
/// is returned as is.
inline Tensor memory_augmented_forward(const Tensor& x, const Tensor& inner_out, const Lookup& lookup,
                                       const MemoryTable& table) {
  if (lookup.k == 0 || table.n == 0) return inner_out;
  if (x.shape() != inner_out.shape()) detail::shape_mismatch("memory_augmented_forward", x, inner_out);
  return add(inner_out, expert_mixture(x, table, lookup));
}

// ---------------------------------------------------------------------------
// Softmax (MoE) lookup

struct RouterParams {
  Tensor W;  // [n, d]
  std::size_t k = 1;
  double jitter_eps = 0.01;

  static RouterParams init(std::size_t n, std::size_t d, std::size_t k, double jitter_eps, Rng& rng) {
    if (k == 0 || k > n) throw ConfigError("router: need 1 <= k <= n");
    if (jitter_eps < 0.0) throw ConfigError("router: jitter_eps must be >= 0");
    RouterParams r;
    r.W = Tensor::zeros({n, d}, true);
    fill_normal(r.W.data(), 2e-2, rng);
    r.k = k;
    r.jitter_eps = jitter_eps;
    return r;
  }
};

/// Indices of the k largest values; ties go to the lower index.
inline std::vector<std::size_t> top_k_indices(std::span<const double> values, std::size_t k) {
  std::vector<std::size_t> idx(values.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  k = std::min(k, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::size_t a, std::size_t b) {
                      return values[a] > values[b] || (values[a] == values[b] && a < b);
                    });
  idx.resize(k);
  return idx;
}

struct Route {
  std::vector<std::size_t> indices;
  std::vector<double> probs;      // probabilities of `indices`
  std::vector<double> all_probs;  // full distribution over n
};

/// Top-k routing of one token. In training mode x is first scaled by
/// multiplicative jitter drawn from U[1-eps, 1+eps]^d.
inline Route softmax_route(std::span<const double> x, const RouterParams& r, bool training, Rng& rng) {
  const std::size_t n = r.W.dim(0), d = r.W.dim(1);
  if (x.size() != d)
    throw ShapeError("softmax_route: token width " + std::to_string(x.size()) + " for router " +
                     to_string(r.W.shape()));
  std::vector<double> xin(x.begin(), x.end());
  if (training && r.jitter_eps > 0.0) {
    std::uniform_real_distribution<double> jitter(1.0 - r.jitter_eps, 1.0 + r.jitter_eps);
    for (double& v : xin) v *= jitter(rng);
  }
  std::vector<double> logits(n, 0.0);
  auto W = r.W.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t a = 0; a < d; ++a) logits[i] += W[i * d + a] * xin[a];
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double& v : logits) z += (v = std::exp(v - mx));
  for (double& v : logits) v /= z;
  Route route;
  route.indices = top_k_indices(logits, r.k);
  for (std::size_t i : route.indices) route.probs.push_back(logits[i]);
  route.all_probs = std::move(logits);
  return route;
}

// ---------------------------------------------------------------------------
// Token-ID lookup

inline std::size_t token_id_lookup(int token_id, std::size_t n) {
  if (token_id < 0 || static_cast<std::size_t>(token_id) >= n)
    throw RangeError("token_id_lookup: id " + std::to_string(token_id) + " outside table of " +
                     std::to_string(n));
  return static_cast<std::size_t>(token_id);
}

// ---------------------------------------------------------------------------
// Hyperplane LSH: m random projections cut by equispaced hyperplanes of
// spacing w; the cell coordinates are hashed to one of n buckets.

struct HyperplaneLshParams {
  std::size_t m = 1, d = 1, n = 1;
  double w = 1.0;
  std::vector<double> directions;  // [m, d], N(0,1) entries
  std::vector<double> offsets;     // [m], U[0, w)

  /// m = 0 selects ceil(log2 n).
  static HyperplaneLshParams make(std::size_t n, std::size_t d, std::uint64_t seed, std::size_t m = 0,
                                  double w = 1.0) {
    if (n == 0 || d == 0) throw ConfigError("hyperplane lsh: n and d must be positive");
    if (!(w > 0.0)) throw ConfigError("hyperplane lsh: width must be positive");
    if (m == 0) m = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(std::log2(static_cast<double>(n)))));
    HyperplaneLshParams p;
    p.m = m;
    p.d = d;
    p.n = n;
    p.w = w;
    p.directions.resize(m * d);
    p.offsets.resize(m);
    Rng rng(seed);
    fill_normal(p.directions, 1.0, rng);
    fill_uniform(p.offsets, 0.0, w, rng);
    return p;
  }
};

/// Folds integer cell coordinates into one 64-bit word.
inline std::uint64_t hash_cells(std::span<const std::int64_t> cells) {
  std::uint64_t h = 0x243f6a8885a308d3ULL;
  for (std::int64_t c : cells) h = mix64(h ^ static_cast<std::uint64_t>(c));
  return h;
}

inline std::size_t hyperplane_lsh_lookup(std::span<const double> x, const HyperplaneLshParams& p) {
  if (x.size() != p.d)
    throw ShapeError("hyperplane_lsh_lookup: input width " + std::to_string(x.size()) + ", expected " +
                     std::to_string(p.d));
  std::vector<std::int64_t> cells(p.m);
  for (std::size_t j = 0; j < p.m; ++j) {
    double proj = p.offsets[j];
    for (std::size_t a = 0; a < p.d; ++a) proj += p.directions[j * p.d + a] * x[a];
    cells[j] = static_cast<std::int64_t>(std::floor(proj / p.w));
  }
  return static_cast<std::size_t>(hash_cells(cells) % p.n);
}

// ---------------------------------------------------------------------------
// Min-hash: a set maps to its member of minimum seeded priority.

inline std::uint64_t minhash_priority(int token_id, std::uint64_t perm_seed) {
  return mix64(perm_seed ^ mix64(static_cast<std::uint64_t>(static_cast<std::uint32_t>(token_id))));
}

inline int minhash_lookup(std::span<const int> token_ids, std::uint64_t perm_seed) {
  if (token_ids.empty()) throw RangeError("minhash_lookup: empty set");
  int best = token_ids.front();
  std::uint64_t best_p = minhash_priority(best, perm_seed);
  for (int id : token_ids.subspan(1)) {
    const std::uint64_t p = minhash_priority(id, perm_seed);
    if (p < best_p || (p == best_p && id < best)) {
      best = id;
      best_p = p;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// A memory table bound to one lookup function, as attached to a layer.

enum class LookupKind { softmax, token_id, hyperplane_lsh, minhash };

struct MemoryConfig {
  LookupKind lookup = LookupKind::softmax;
  ExpertKind expert = ExpertKind::matrix;
  std::size_t n = 16;
  std::size_t rank = 4;
  std::size_t top_k = 1;
  double jitter_eps = 0.01;
  std::size_t lsh_projections = 0;  // 0 -> ceil(log2 n)
  double lsh_width = 1.0;
  std::size_t minhash_window = 2;
};

class MemoryLayer {
 public:
  MemoryLayer() = default;

  MemoryLayer(const MemoryConfig& cfg, std::size_t d, std::size_t vocab, Rng& rng) : cfg_(cfg) {
    if ((cfg.lookup == LookupKind::token_id || cfg.lookup == LookupKind::minhash) && cfg.n != vocab)
      throw ConfigError("memory: token-id and min-hash tables need n == vocab_size (" +
                        std::to_string(vocab) + "), got " + std::to_string(cfg.n));
    if (cfg.minhash_window == 0) throw ConfigError("memory: minhash_window must be >= 1");
    table_ = MemoryTable::init(cfg.expert, cfg.n, d, cfg.rank, rng);
    if (cfg.lookup == LookupKind::softmax) router_ = RouterParams::init(cfg.n, d, cfg.top_k, cfg.jitter_eps, rng);
    const std::uint64_t seed = rng();
    if (cfg.lookup == LookupKind::hyperplane_lsh)
      lsh_ = HyperplaneLshParams::make(cfg.n, d, seed, cfg.lsh_projections, cfg.lsh_width);
    minhash_seed_ = seed;
  }

  const MemoryConfig& config() const { return cfg_; }
  const MemoryTable& table() const { return table_; }
  MemoryTable& table() { return table_; }
  const std::optional<RouterParams>& router() const { return router_; }

  std::size_t param_count() const { return table_.param_count() + router_param_count(); }
  std::size_t router_param_count() const { return router_ ? router_->W.numel() : 0; }

  std::vector<NamedTensor> named(const std::string& prefix) const {
    std::vector<NamedTensor> out = table_.named(prefix);
    if (router_) out.push_back({prefix + "router", router_->W});
    return out;
  }

  /// Expert selection for N tokens x [N,d] with ids[t] the token at row t.
  Lookup lookup(const Tensor& x, std::span<const int> ids, bool training, Rng& rng) const {
    const std::size_t N = x.dim(0), d = x.dim(1);
    if (ids.size() != N) throw ShapeError("memory lookup: one token id per row required");
    Lookup out;
    switch (cfg_.lookup) {
      case LookupKind::softmax: {
        Tensor xin = x;
        if (training && router_->jitter_eps > 0.0) {
          Tensor jitter = Tensor::zeros(x.shape());
          fill_uniform(jitter.data(), 1.0 - router_->jitter_eps, 1.0 + router_->jitter_eps, rng);
          xin = mul(x, jitter);
        }
        Tensor probs = softmax(matmul_nt(xin, router_->W));
        out.k = router_->k;
        for (std::size_t t = 0; t < N; ++t) {
          auto top = top_k_indices(probs.data().subspan(t * cfg_.n, cfg_.n), out.k);
          out.indices.insert(out.indices.end(), top.begin(), top.end());
        }
        out.weights = select_entries(probs, out.indices, out.k);
        break;
      }
      case LookupKind::token_id:
        out.k = 1;
        for (int id : ids) out.indices.push_back(token_id_lookup(id, cfg_.n));
        break;
      case LookupKind::hyperplane_lsh: {
        out.k = 1;
        std::vector<double> row(d);
        for (std::size_t t = 0; t < N; ++t) {
          auto src = x.data().subspan(t * d, d);
          double norm = 0.0;
          for (double v : src) norm += v * v;
          norm = std::sqrt(norm);
          for (std::size_t a = 0; a < d; ++a) row[a] = norm > 0.0 ? src[a] / norm : 0.0;
          out.indices.push_back(hyperplane_lsh_lookup(row, *lsh_));
        }
        break;
      }
      case LookupKind::minhash: {
        out.k = 1;
        for (std::size_t t = 0; t < N; ++t) {
          const std::size_t lo = t + 1 >= cfg_.minhash_window ? t + 1 - cfg_.minhash_window : 0;
          const int id = minhash_lookup(ids.subspan(lo, t + 1 - lo), minhash_seed_);
          out.indices.push_back(token_id_lookup(id, cfg_.n));
        }
        break;
      }
    }
    return out;
  }

  Tensor forward(const Tensor& x, std::span<const int> ids, const Tensor& inner_out, bool training,
                 Rng& rng) const {
    return memory_augmented_forward(x, inner_out, lookup(x, ids, training, rng), table_);
  }

 private:
  MemoryConfig cfg_;
  MemoryTable table_;
  std::optional<RouterParams> router_;
  std::optional<HyperplaneLshParams> lsh_;
  std::uint64_t minhash_seed_ = 0;
};

}  // namespace altup
