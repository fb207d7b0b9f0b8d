// Copyright 2026 The AltUp Toolkit Authors.
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <numeric>
#include <sstream>
#include <vector>

#include <gtest/gtest.h>

#include "altup/lsh_analysis.hpp"

namespace altup::lsh {
namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

TEST(SentencePair, SharedPrefixAndUnitRows) {
  SentencePair p = gen_sentence_pair(16, 0.25, 8, 3);
  EXPECT_EQ(p.shared, 4u);
  for (std::size_t r = 0; r < 16; ++r) {
    auto a = std::span<const double>(p.s1).subspan(r * 8, 8), b = std::span<const double>(p.s2).subspan(r * 8, 8);
    EXPECT_NEAR(dot(a, a), 1.0, 1e-12);
    EXPECT_NEAR(dot(b, b), 1.0, 1e-12);
    if (r < 4) {
      EXPECT_TRUE(std::equal(a.begin(), a.end(), b.begin()));
      EXPECT_EQ(p.ids1[r], p.ids2[r]);
    } else {
      EXPECT_FALSE(std::equal(a.begin(), a.end(), b.begin()));
      EXPECT_EQ(std::count(p.ids2.begin(), p.ids2.end(), p.ids1[r]), 0);
    }
  }
}

TEST(SentencePair, ExtremeOverlaps) {
  SentencePair same = gen_sentence_pair(10, 1.0, 4, 1);
  EXPECT_EQ(same.s1, same.s2);
  EXPECT_EQ(same.ids1, same.ids2);
  SentencePair none = gen_sentence_pair(10, 0.0, 4, 1);
  for (int id : none.ids1) EXPECT_EQ(std::count(none.ids2.begin(), none.ids2.end(), id), 0);
}

TEST(SentencePair, RejectsBadArguments) {
  EXPECT_THROW(gen_sentence_pair(10, 0.25, 4, 1), RangeError);  // 2.5 shared tokens
  EXPECT_THROW(gen_sentence_pair(0, 0.0, 4, 1), RangeError);
  EXPECT_THROW(gen_sentence_pair(4, 0.5, 1, 1), RangeError);
}

TEST(SentencePair, SumDotProductAveragesSharedCount) {
  // <sum s1, sum s2> = f l + zero-mean cross terms; <mix s1, mix s2> l = f.
  const std::size_t l = 20, d = 16, pairs = 1000;
  for (double f : {0.0, 0.25, 0.5, 1.0}) {
    std::vector<double> mixed, summed;
    for (std::size_t t = 0; t < pairs; ++t) {
      SentencePair p = gen_sentence_pair(l, f, d, derive_seed(5, t, 0));
      auto m1 = mix(p.s1, d), m2 = mix(p.s2, d);
      mixed.push_back(dot(m1, m2) * l);
      summed.push_back(dot(m1, m2) * l * l);
    }
    auto mean_se = [](const std::vector<double>& v) {
      double m = std::accumulate(v.begin(), v.end(), 0.0) / v.size(), s = 0;
      for (double x : v) s += (x - m) * (x - m);
      return std::pair{m, std::sqrt(s / (v.size() - 1) / v.size())};
    };
    auto [mm, mse] = mean_se(mixed);
    auto [sm, sse] = mean_se(summed);
    EXPECT_LE(std::abs(mm - f), 4 * mse + 1e-12) << f;
    EXPECT_LE(std::abs(sm - f * l), 4 * sse + 1e-12) << f;
  }
}

TEST(Mix, Examples) {
  std::vector<double> one{0.6, 0.8};
  EXPECT_EQ(mix(one, 2), one);
  std::vector<double> opposite{0.6, 0.8, -0.6, -0.8};
  EXPECT_EQ(mix(opposite, 2), (std::vector<double>{0.0, 0.0}));
  std::vector<double> rows{1, 2, 3, 5, -1, 4}, scaled(rows);
  for (double& v : scaled) v *= -2.5;
  auto a = mix(rows, 2), b = mix(scaled, 2);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(b[i], -2.5 * a[i], 1e-14);
  EXPECT_THROW(mix(std::vector<double>{}, 2), RangeError);
}

TEST(Estimate, StdErrorFormula) {
  CollisionEstimate e = CollisionEstimate::from_hits(Scheme::spherical, 37, 500);
  EXPECT_DOUBLE_EQ(e.probability, 37.0 / 500);
  EXPECT_DOUBLE_EQ(e.std_error, std::sqrt(0.074 * 0.926 / 500));
  EXPECT_DOUBLE_EQ(e.ci_low, 0.074 - kZ99 * e.std_error);
  EXPECT_DOUBLE_EQ(e.ci_high, 0.074 + kZ99 * e.std_error);
}

TEST(Estimate, FullOverlapAlwaysCollides) {
  for (Scheme s : {Scheme::hyperplane, Scheme::spherical, Scheme::minhash}) {
    CollisionEstimate e = estimate_collision(s, 64, 8, 1.0, 16, 500, 9, {1.0, 0, 1});
    EXPECT_EQ(e.probability, 1.0) << scheme_name(s);
  }
  OrderingReport r = verify_ordering(64, 8, 1.0, 16, 500, 9, 1);
  EXPECT_EQ(r.token_id.probability, 1.0);
  EXPECT_EQ(r.spherical.probability, 1.0);
  EXPECT_EQ(r.hyperplane.probability, 1.0);
  EXPECT_TRUE(r.pass);
}

TEST(Estimate, TokenIdEqualsOverlap) {
  for (double f : {0.0, 0.25, 0.5, 1.0}) {
    CollisionEstimate e = estimate_collision(Scheme::minhash, 1024, 16, f, 8, 20000, 17, {1.0, 0, 1});
    EXPECT_LE(std::abs(e.probability - f), 3 * std::max(e.std_error, 1e-12)) << f;
  }
}

TEST(Estimate, MinHashMatchesExactJaccard) {
  const std::size_t l = 16;
  for (double f : {0.0, 0.25, 0.5, 1.0}) {
    const double J = jaccard(l, static_cast<std::size_t>(f * l));
    CollisionEstimate e = estimate_minhash_jaccard(l, f, 20000, 23, 1);
    const double se = std::sqrt(J * (1 - J) / 20000);
    EXPECT_LE(std::abs(e.probability - J), 3 * se + 1e-12) << f;
  }
  EXPECT_DOUBLE_EQ(jaccard(64, 32), 32.0 / 96.0);
}

TEST(Estimate, SphericalIndependentInputsLandUniformly) {
  const std::size_t n = 256;
  CollisionEstimate e = estimate_collision(Scheme::spherical, n, 32, 0.0, 64, 20000, 29, {1.0, 0, 1});
  const double p = 1.0 / n, se = std::sqrt(p * (1 - p) / 20000);
  EXPECT_LE(std::abs(e.probability - p), 3 * se);
}

TEST(Estimate, ReducedSphericalSamplerAgreesWithLiteralRouting) {
  const std::size_t n = 16, l = 8, d = 16, trials = 6000;
  for (double f : {0.25, 0.75}) {
    CollisionEstimate fast = estimate_collision(Scheme::spherical, n, l, f, d, trials, 41, {1.0, 0, 1});
    CollisionEstimate slow = estimate_spherical_by_routing(n, l, f, d, trials, 43);
    const double se = std::hypot(fast.std_error, slow.std_error);
    EXPECT_LE(std::abs(fast.probability - slow.probability), 3.5 * se) << f;
  }
}

TEST(Estimate, DeterministicAcrossThreadCounts) {
  for (Scheme s : {Scheme::hyperplane, Scheme::spherical, Scheme::minhash}) {
    auto one = estimate_collision(s, 128, 16, 0.5, 16, 3000, 5, {1.0, 0, 1});
    auto four = estimate_collision(s, 128, 16, 0.5, 16, 3000, 5, {1.0, 0, 4});
    EXPECT_EQ(one.hits, four.hits) << scheme_name(s);
    EXPECT_EQ(one.probability, four.probability);
  }
  auto a = verify_ordering(128, 16, 0.25, 16, 2000, 8, 1), b = verify_ordering(128, 16, 0.25, 16, 2000, 8, 3);
  EXPECT_EQ(a.spherical.hits, b.spherical.hits);
  for (std::size_t i = 0; i < a.hyperplane_sweep.size(); ++i)
    EXPECT_EQ(a.hyperplane_sweep[i].hits, b.hyperplane_sweep[i].hits);
}

TEST(Estimate, NonDecreasingInOverlap) {
  const std::vector<double> grid{0.0, 0.25, 0.5, 0.75, 1.0};
  for (Scheme s : {Scheme::hyperplane, Scheme::spherical, Scheme::minhash}) {
    std::vector<CollisionEstimate> est;
    for (double f : grid) est.push_back(estimate_collision(s, 64, 16, f, 16, 4000, 13, {1.0, 0, 1}));
    for (std::size_t i = 1; i < est.size(); ++i)
      EXPECT_GE(est[i].ci_high, est[i - 1].ci_low) << scheme_name(s) << " f=" << grid[i];
    for (const auto& e : est) {
      EXPECT_GE(e.probability, 0.0);
      EXPECT_LE(e.probability, 1.0);
    }
  }
}

TEST(Estimate, StochasticRoundingKeepsExpectedOverlap) {
  // f l = 1.6: shared count is 1 or 2 with mean 1.6.
  CollisionEstimate e = estimate_collision(Scheme::minhash, 64, 8, 0.2, 8, 20000, 3, {1.0, 0, 1});
  EXPECT_LE(std::abs(e.probability - 0.2), 3 * e.std_error);
}

TEST(Estimate, RejectsBadArguments) {
  EXPECT_THROW(parse_scheme("cosine"), RangeError);
  EXPECT_EQ(parse_scheme("spherical"), Scheme::spherical);
  EXPECT_THROW(estimate_collision(Scheme::spherical, 16, 8, 0.5, 8, 0, 1), RangeError);
  EXPECT_THROW(estimate_collision(Scheme::spherical, 16, 8, 1.5, 8, 10, 1), RangeError);
}

TEST(Ordering, SmallTableReportIsInformational) {
  OrderingReport r = verify_ordering(2, 16, 0.25, 16, 2000, 4, 1);
  EXPECT_FALSE(r.in_regime);
  EXPECT_EQ(r.hyperplane_sweep.size(), hyperplane_width_grid().size());
  EXPECT_GT(r.spherical.probability, 0.0);
}

TEST(Csv, HeaderAndRow) {
  std::ostringstream os;
  std::vector<CollisionEstimate> rows{CollisionEstimate::from_hits(Scheme::hyperplane, 1, 4)};
  rows[0].n = 8;
  rows[0].l = 2;
  rows[0].f = 0.5;
  rows[0].d = 3;
  write_csv(os, rows);
  EXPECT_EQ(os.str().substr(0, os.str().find('\n')), "scheme,n,l,f,d,trials,probability,stderr,ci_low,ci_high");
  EXPECT_EQ(os.str().substr(os.str().find('\n') + 1, 26), "hyperplane,8,2,0.5,3,4,0.2");
}

TEST(Theory, Constants) {
  TheoryConstants t = theory_constants(0.5, 0.25, 0.0625);
  EXPECT_DOUBLE_EQ(t.r1, 1.0);
  EXPECT_DOUBLE_EQ(t.c, std::sqrt(2.0));
  EXPECT_DOUBLE_EQ(t.rho, 0.5);
}

}  // namespace
}  // namespace altup::lsh
