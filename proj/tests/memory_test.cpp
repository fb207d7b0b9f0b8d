// Copyright 2026 The AltUp Toolkit Authors.
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <vector>

#include <gtest/gtest.h>

#include "altup/grad_check.hpp"
#include "altup/memory.hpp"
#include "altup/rng.hpp"

namespace altup {
namespace {

Tensor random(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape));
  fill_uniform(t.data(), lo, hi, rng);
  return t;
}

TEST(Expert, Examples) {
  PartialExpert zero{Tensor::zeros({3, 2}), Tensor::zeros({3, 2}), {}};
  EXPECT_EQ(expert_forward(Tensor::from({3}, {1, 2, 3}), zero).values(), std::vector<double>(3, 0.0));

  PartialExpert e{Tensor::from({3, 1}, {1, 0, 0}), Tensor::from({3, 1}, {0, 1, 0}), {}};
  EXPECT_EQ(expert_forward(Tensor::from({3}, {3, 0, 0}), e).values(), (std::vector<double>{0, 3, 0}));
  EXPECT_EQ(expert_forward(Tensor::from({3}, {-3, 0, 0}), e).values(), (std::vector<double>{0, 0, 0}));

  PartialExpert c{{}, {}, Tensor::from({3}, {1, -2, 4})};
  EXPECT_EQ(expert_forward(Tensor::from({3}, {9, 9, 9}), c).values(), (std::vector<double>{1, -2, 4}));

  EXPECT_THROW(expert_forward(Tensor::zeros({4}), e), ShapeError);
}

TEST(Expert, MatchesScalarLoop) {
  Rng rng(1);
  const std::size_t d = 5, r = 3;
  PartialExpert e{random({d, r}, rng), random({d, r}, rng), {}};
  Tensor x = random({d}, rng);
  Tensor y = expert_forward(x, e);
  for (std::size_t a = 0; a < d; ++a) {
    double want = 0;
    for (std::size_t j = 0; j < r; ++j) {
      double h = 0;
      for (std::size_t b = 0; b < d; ++b) h += e.U.at(b, j) * x[b];
      want += e.V.at(a, j) * std::max(0.0, h);
    }
    EXPECT_NEAR(y[a], want, 1e-14);
  }
}

TEST(MemoryTable, ParameterCount) {
  Rng rng(2);
  for (std::size_t rank : {1u, 2u, 5u}) {
    MemoryTable t = MemoryTable::init(ExpertKind::matrix, 7, 6, rank, rng);
    std::size_t actual = 0;
    for (const auto& p : t.named("")) actual += p.tensor.numel();
    EXPECT_EQ(t.param_count(), 2 * rank * 7 * 6);
    EXPECT_EQ(actual, t.param_count());
    EXPECT_EQ(actual / 7, 2 * rank * 6);  // per expert
  }
  MemoryTable c = MemoryTable::init(ExpertKind::constant, 7, 6, 0, rng);
  EXPECT_EQ(c.param_count(), 7u * 6u);
}

TEST(SoftmaxRoute, Examples) {
  Rng rng(3);
  RouterParams r = RouterParams::init(4, 3, 1, 0.0, rng);
  for (double& v : r.W.data()) v = 0.0;
  std::vector<double> x{0.3, -1, 2};
  Route a = softmax_route(x, r, false, rng);
  EXPECT_EQ(a.indices, (std::vector<std::size_t>{0}));
  for (double p : a.all_probs) EXPECT_DOUBLE_EQ(p, 0.25);

  RouterParams two = RouterParams::init(2, 1, 1, 0.0, rng);
  two.W.data()[0] = std::log(3.0);
  two.W.data()[1] = 0.0;
  std::vector<double> one{1.0};
  Route b = softmax_route(one, two, false, rng);
  EXPECT_EQ(b.indices, (std::vector<std::size_t>{0}));
  EXPECT_NEAR(b.all_probs[0], 0.75, 1e-15);
  EXPECT_NEAR(b.all_probs[1], 0.25, 1e-15);
}

TEST(SoftmaxRoute, ProbabilitiesAndTopKAgainstFullSort) {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + trial % 9, k = 1 + trial % n;
    RouterParams r = RouterParams::init(n, 6, k, 0.01, rng);
    fill_normal(r.W.data(), 1.0, rng);
    std::vector<double> x(6);
    fill_uniform(x, -1, 1, rng);
    Route route = softmax_route(x, r, false, rng);
    EXPECT_NEAR(std::accumulate(route.all_probs.begin(), route.all_probs.end(), 0.0), 1.0, 1e-12);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return route.all_probs[a] > route.all_probs[b]; });
    order.resize(k);
    EXPECT_EQ(route.indices, order);
    for (std::size_t j = 0; j < k; ++j) EXPECT_EQ(route.probs[j], route.all_probs[route.indices[j]]);
  }
}

TEST(SoftmaxRoute, DeterministicWithoutJitter) {
  Rng rng(5);
  RouterParams r = RouterParams::init(8, 4, 2, 0.5, rng);
  fill_normal(r.W.data(), 1.0, rng);
  std::vector<double> x{0.1, 0.2, -0.3, 0.4};
  Rng a(1), b(2);
  EXPECT_EQ(softmax_route(x, r, false, a).all_probs, softmax_route(x, r, false, b).all_probs);
  // Training mode draws jitter from the generator.
  Rng c(1), e(2);
  EXPECT_NE(softmax_route(x, r, true, c).all_probs, softmax_route(x, r, true, e).all_probs);
}

TEST(TokenId, Lookup) {
  EXPECT_EQ(token_id_lookup(0, 10), 0u);
  EXPECT_EQ(token_id_lookup(7, 10), 7u);
  EXPECT_THROW(token_id_lookup(10, 10), RangeError);
  EXPECT_THROW(token_id_lookup(-1, 10), RangeError);
}

TEST(TokenId, LayerAndPositionIndependent) {
  Rng rng(6);
  MemoryConfig cfg;
  cfg.lookup = LookupKind::token_id;
  cfg.n = 9;
  MemoryLayer l0(cfg, 4, 9, rng), l1(cfg, 4, 9, rng);
  std::vector<int> ids{3, 8, 3, 0};
  Tensor x = random({4, 4}, rng), x2 = random({4, 4}, rng);
  Lookup a = l0.lookup(x, ids, false, rng), b = l1.lookup(x2, ids, true, rng);
  EXPECT_EQ(a.indices, (std::vector<std::size_t>{3, 8, 3, 0}));
  EXPECT_EQ(a.indices, b.indices);
}

TEST(HyperplaneLsh, FloorArithmetic) {
  HyperplaneLshParams p;
  p.m = 1;
  p.d = 1;
  p.n = 1000003;
  p.w = 1.0;
  p.directions = {1.0};
  p.offsets = {0.0};
  std::vector<double> a{0.5}, b{0.9}, c{1.5};
  EXPECT_EQ(hyperplane_lsh_lookup(a, p), hyperplane_lsh_lookup(b, p));
  EXPECT_NE(hyperplane_lsh_lookup(a, p), hyperplane_lsh_lookup(c, p));
}

TEST(HyperplaneLsh, StableAcrossCallsAndOrder) {
  auto p = HyperplaneLshParams::make(64, 8, 99);
  EXPECT_EQ(p.m, 6u);
  Rng rng(7);
  std::vector<std::vector<double>> xs(20, std::vector<double>(8));
  for (auto& x : xs) fill_normal(x, 1.0, rng);
  std::vector<std::size_t> fwd, rev;
  for (const auto& x : xs) fwd.push_back(hyperplane_lsh_lookup(x, p));
  for (auto it = xs.rbegin(); it != xs.rend(); ++it) rev.push_back(hyperplane_lsh_lookup(*it, p));
  std::reverse(rev.begin(), rev.end());
  EXPECT_EQ(fwd, rev);
  auto q = HyperplaneLshParams::make(64, 8, 99);
  for (const auto& x : xs) EXPECT_EQ(hyperplane_lsh_lookup(x, q), hyperplane_lsh_lookup(x, p));
  for (std::size_t v : fwd) EXPECT_LT(v, 64u);
}

TEST(HyperplaneLsh, CollisionRateFallsWithAngle) {
  // Monte Carlo over 10k independently seeded hash functions.
  const std::size_t d = 8, trials = 10000;
  std::vector<double> angles{0.05, 0.3, 0.8, 1.6, 3.0};
  std::vector<double> rate;
  for (double theta : angles) {
    std::size_t hits = 0;
    std::vector<double> u(d, 0.0), v(d, 0.0);
    u[0] = 1.0;
    v[0] = std::cos(theta);
    v[1] = std::sin(theta);
    for (std::size_t t = 0; t < trials; ++t) {
      auto p = HyperplaneLshParams::make(16, d, derive_seed(31, t, 0));
      hits += hyperplane_lsh_lookup(u, p) == hyperplane_lsh_lookup(v, p);
    }
    rate.push_back(static_cast<double>(hits) / trials);
  }
  for (std::size_t i = 1; i < rate.size(); ++i) EXPECT_LT(rate[i], rate[i - 1]) << angles[i];
}

TEST(MinHash, Examples) {
  std::vector<int> single{42};
  EXPECT_EQ(minhash_lookup(single, 5), 42);
  EXPECT_THROW(minhash_lookup(std::vector<int>{}, 5), RangeError);
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    std::vector<int> B{1, 4, 9, 16, 25, 36}, A{4, 16, 36};
    const int mb = minhash_lookup(B, seed);
    if (std::find(A.begin(), A.end(), mb) != A.end()) {
      EXPECT_EQ(minhash_lookup(A, seed), mb);
    }
  }
}

TEST(MinHash, CollisionMatchesJaccard) {
  const std::size_t trials = 10000;
  struct Pair {
    std::vector<int> a, b;
  };
  std::vector<Pair> pairs{{{1, 2, 3, 4}, {3, 4, 5, 6}}, {{1, 2, 3, 4, 5, 6, 7, 8, 9, 10}, {10, 11}},
                          {{7, 8, 9}, {7, 8, 9, 10}}};
  for (const auto& pr : pairs) {
    std::set<int> sa(pr.a.begin(), pr.a.end()), sb(pr.b.begin(), pr.b.end()), inter, uni;
    std::set_intersection(sa.begin(), sa.end(), sb.begin(), sb.end(), std::inserter(inter, inter.end()));
    std::set_union(sa.begin(), sa.end(), sb.begin(), sb.end(), std::inserter(uni, uni.end()));
    const double J = static_cast<double>(inter.size()) / static_cast<double>(uni.size());
    std::size_t hits = 0;
    for (std::size_t t = 0; t < trials; ++t) {
      const std::uint64_t seed = derive_seed(77, t, 0);
      hits += minhash_lookup(pr.a, seed) == minhash_lookup(pr.b, seed);
    }
    const double p = static_cast<double>(hits) / trials;
    const double se = std::sqrt(J * (1 - J) / trials);
    EXPECT_LE(std::abs(p - J), 3 * se) << "J=" << J << " p=" << p;
  }
}

TEST(MemoryAugmented, EmptyOrZeroExpertsLeaveInnerOutput) {
  Rng rng(8);
  Tensor x = random({3, 4}, rng), inner = random({3, 4}, rng);
  MemoryTable t = MemoryTable::init(ExpertKind::matrix, 5, 4, 2, rng);
  Lookup none;
  EXPECT_EQ(memory_augmented_forward(x, inner, none, t).values(), inner.values());

  std::vector<int> ids{1, 2, 3};
  for (LookupKind kind : {LookupKind::softmax, LookupKind::token_id, LookupKind::hyperplane_lsh, LookupKind::minhash}) {
    for (ExpertKind ek : {ExpertKind::matrix, ExpertKind::constant}) {
      MemoryConfig cfg;
      cfg.lookup = kind;
      cfg.expert = ek;
      cfg.n = 5;
      cfg.rank = 2;
      cfg.top_k = 2;
      MemoryLayer layer(cfg, 4, 5, rng);
      for (const auto& p : layer.table().named("")) {
        Tensor t = p.tensor;
        for (double& v : t.data()) v = 0.0;
      }
      EXPECT_EQ(layer.forward(x, ids, inner, false, rng).values(), inner.values());
    }
  }
}

TEST(MemoryAugmented, SingleExpertSoftmaxHasUnitWeight) {
  Rng rng(9);
  MemoryConfig cfg;
  cfg.n = 1;
  cfg.rank = 2;
  cfg.top_k = 1;
  MemoryLayer layer(cfg, 4, 10, rng);
  Tensor x = random({2, 4}, rng), inner = random({2, 4}, rng);
  std::vector<int> ids{0, 1};
  Tensor y = layer.forward(x, ids, inner, false, rng);
  PartialExpert e = layer.table().expert(0);
  for (std::size_t t = 0; t < 2; ++t) {
    Tensor row = Tensor::from({4}, {x.values().begin() + t * 4, x.values().begin() + (t + 1) * 4});
    Tensor f = expert_forward(row, e);
    for (std::size_t a = 0; a < 4; ++a) EXPECT_NEAR(y.at(t, a), inner.at(t, a) + f[a], 1e-14);
  }
}

TEST(MemoryAugmented, MixtureMatchesPerTokenExperts) {
  Rng rng(10);
  MemoryTable t = MemoryTable::init(ExpertKind::matrix, 6, 4, 3, rng);
  Tensor x = random({3, 4}, rng), inner = Tensor::zeros({3, 4});
  Lookup lk;
  lk.k = 2;
  lk.indices = {0, 5, 2, 2, 4, 1};
  lk.weights = Tensor::from({3, 2}, {0.5, 0.25, 1, -1, 2, 0.125});
  Tensor y = memory_augmented_forward(x, inner, lk, t);
  for (std::size_t n = 0; n < 3; ++n) {
    Tensor row = Tensor::from({4}, {x.values().begin() + n * 4, x.values().begin() + (n + 1) * 4});
    for (std::size_t a = 0; a < 4; ++a) {
      double want = 0;
      for (std::size_t j = 0; j < 2; ++j)
        want += lk.weights.at(n, j) * expert_forward(row, t.expert(lk.indices[n * 2 + j]))[a];
      EXPECT_NEAR(y.at(n, a), want, 1e-14);
    }
  }
  lk.indices[3] = 6;
  EXPECT_THROW(memory_augmented_forward(x, inner, lk, t), RangeError);
}

TEST(MemoryAugmented, GradientReachesRouterThroughProbabilities) {
  Rng rng(11);
  MemoryConfig cfg;
  cfg.n = 3;
  cfg.rank = 2;
  cfg.top_k = 2;
  MemoryLayer layer(cfg, 4, 10, rng);
  Tensor router = layer.router()->W;
  fill_normal(router.data(), 0.5, rng);
  Tensor x = random({3, 4}, rng), inner = random({3, 4}, rng), w = random({3, 4}, rng);
  std::vector<int> ids{0, 1, 2};
  auto f = [&] { return sum(mul(layer.forward(x, ids, inner, false, rng), w)); };
  std::vector<NamedTensor> params{{"x", x}};
  for (auto& p : layer.named("mem.")) params.push_back(p);
  EXPECT_LT(grad_check(f, params, 1e-6), 1e-4);

  Graph g;
  Tensor loss;
  {
    GraphScope s(g);
    loss = f();
  }
  router.zero_grad();
  g.backward(loss);
  double norm = 0;
  for (double v : router.grad()) norm += v * v;
  EXPECT_GT(norm, 0.0);
}

TEST(MemoryLayer, TableSizeMustMatchVocabForTokenLookups) {
  Rng rng(12);
  MemoryConfig cfg;
  cfg.lookup = LookupKind::token_id;
  cfg.n = 8;
  EXPECT_THROW(MemoryLayer(cfg, 4, 10, rng), ConfigError);
  cfg.lookup = LookupKind::minhash;
  EXPECT_THROW(MemoryLayer(cfg, 4, 10, rng), ConfigError);
}

TEST(MemoryLayer, MinHashUsesTrailingWindow) {
  Rng rng(13);
  MemoryConfig cfg;
  cfg.lookup = LookupKind::minhash;
  cfg.n = 20;
  cfg.minhash_window = 3;
  MemoryLayer layer(cfg, 4, 20, rng);
  std::vector<int> ids{5, 11, 2, 19, 7};
  Tensor x = random({5, 4}, rng);
  Lookup lk = layer.lookup(x, ids, false, rng);
  ASSERT_EQ(lk.indices.size(), 5u);
  EXPECT_EQ(lk.indices[0], 5u);
  for (std::size_t t = 0; t < 5; ++t) {
    const std::size_t lo = t >= 2 ? t - 2 : 0;
    std::vector<int> window(ids.begin() + lo, ids.begin() + t + 1);
    EXPECT_NE(std::find(window.begin(), window.end(), static_cast<int>(lk.indices[t])), window.end());
  }
}

}  // namespace
}  // namespace altup
