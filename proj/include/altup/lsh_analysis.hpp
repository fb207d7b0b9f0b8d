// Copyright 2026 The AltUp Toolkit Authors.
// SPDX-License-Identifier: Apache-2.0

// Monte-Carlo collision experiments for lookup functions viewed as LSH
// schemes. Two equal-length sentences share a fraction f of their wordpieces;
// wordpiece embeddings are random unit vectors, and a sentence is summarised by
// the mean of its token embeddings. For each scheme we estimate how often the
// two sentences land in the same one of n buckets:
//
//   hyperplane  floor-of-projection cells hashed to n buckets
//   spherical   nearest of n random unit directions (top-1 softmax routing)
//   minhash     Token-ID routing: a random token of s1 also occurs in s2
//
// Every trial draws its own pair and hash randomness from a seed derived from
// (master seed, stream, trial index), and hits are integer counts, so results
// are bitwise identical for any number of worker threads.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "altup/errors.hpp"
#include "altup/memory.hpp"
#include "altup/rng.hpp"

namespace altup::lsh {

struct SentencePair {
  std::size_t l = 0, d = 0, shared = 0;
  double f = 0.0;
  std::vector<double> s1, s2;  // [l, d] unit rows
  std::vector<int> ids1, ids2;
};

namespace detail {

inline void unit_gaussian_rows(std::span<double> rows, std::size_t d, Rng& rng) {
  std::normal_distribution<double> normal;
  for (std::size_t r = 0; r < rows.size() / d; ++r) {
    double* row = &rows[r * d];
    double norm = 0.0;
    do {
      norm = 0.0;
      for (std::size_t a = 0; a < d; ++a) {
        row[a] = normal(rng);
        norm += row[a] * row[a];
      }
    } while (norm == 0.0);
    norm = std::sqrt(norm);
    for (std::size_t a = 0; a < d; ++a) row[a] /= norm;
  }
}

/// Token ids: shared wordpieces are 0..shared-1, sentence-specific ones follow.
inline void assign_ids(SentencePair& p) {
  p.ids1.resize(p.l);
  p.ids2.resize(p.l);
  for (std::size_t i = 0; i < p.l; ++i) {
    p.ids1[i] = static_cast<int>(i);
    p.ids2[i] = static_cast<int>(i < p.shared ? i : p.l + (i - p.shared));
  }
}

}  // namespace detail

/// Pair with exactly `shared` common wordpieces (the first `shared` rows).
inline SentencePair make_sentence_pair(std::size_t l, std::size_t shared, std::size_t d, Rng& rng,
                                       bool with_embeddings = true) {
  if (l == 0) throw RangeError("sentence pair: length must be >= 1");
  if (d < 2) throw RangeError("sentence pair: embedding dim must be >= 2");
  if (shared > l) throw RangeError("sentence pair: shared count exceeds length");
  SentencePair p;
  p.l = l;
  p.d = d;
  p.shared = shared;
  p.f = static_cast<double>(shared) / static_cast<double>(l);
  detail::assign_ids(p);
  if (!with_embeddings) return p;
  p.s1.resize(l * d);
  p.s2.resize(l * d);
  detail::unit_gaussian_rows(p.s1, d, rng);
  std::copy_n(p.s1.begin(), shared * d, p.s2.begin());
  detail::unit_gaussian_rows(std::span<double>(p.s2).subspan(shared * d), d, rng);
  return p;
}

inline SentencePair gen_sentence_pair(std::size_t l, double f, std::size_t d, std::uint64_t seed) {
  if (f < 0.0 || f > 1.0) throw RangeError("gen_sentence_pair: f outside [0,1]");
  const double shared = f * static_cast<double>(l);
  if (std::abs(shared - std::round(shared)) > 1e-9)
    throw RangeError("gen_sentence_pair: f*l = " + std::to_string(shared) + " is not an integer");
  Rng rng(seed);
  return make_sentence_pair(l, static_cast<std::size_t>(std::llround(shared)), d, rng);
}

/// Arithmetic mean of the l rows of `embeddings` ([l, d]).
inline std::vector<double> mix(std::span<const double> embeddings, std::size_t d) {
  if (d == 0 || embeddings.empty() || embeddings.size() % d != 0)
    throw RangeError("mix: need a non-empty [l, d] block");
  const std::size_t l = embeddings.size() / d;
  std::vector<double> out(d, 0.0);
  for (std::size_t r = 0; r < l; ++r)
    for (std::size_t a = 0; a < d; ++a) out[a] += embeddings[r * d + a];
  for (double& v : out) v /= static_cast<double>(l);
  return out;
}

enum class Scheme { hyperplane, spherical, minhash };

inline std::string_view scheme_name(Scheme s) {
  switch (s) {
    case Scheme::hyperplane: return "hyperplane";
    case Scheme::spherical: return "spherical";
    case Scheme::minhash: return "minhash";
  }
  return "?";
}

inline Scheme parse_scheme(std::string_view name) {
  if (name == "hyperplane") return Scheme::hyperplane;
  if (name == "spherical" || name == "softmax") return Scheme::spherical;
  if (name == "minhash" || name == "token_id") return Scheme::minhash;
  throw RangeError("unknown scheme '" + std::string(name) + "'");
}

/// Two-sided 99% normal quantile.
inline constexpr double kZ99 = 2.5758293035489004;

struct CollisionEstimate {
  Scheme scheme = Scheme::minhash;
  std::size_t n = 0, l = 0, d = 0, trials = 0, hits = 0;
  double f = 0.0;
  double probability = 0.0;
  double std_error = 0.0;
  double ci_low = 0.0, ci_high = 0.0;
  double width = 0.0;  // hyperplane bucket width; 0 otherwise

  static CollisionEstimate from_hits(Scheme scheme, std::size_t hits, std::size_t trials) {
    CollisionEstimate e;
    e.scheme = scheme;
    e.hits = hits;
    e.trials = trials;
    e.probability = static_cast<double>(hits) / static_cast<double>(trials);
    e.std_error = std::sqrt(e.probability * (1.0 - e.probability) / static_cast<double>(trials));
    e.ci_low = std::max(0.0, e.probability - kZ99 * e.std_error);
    e.ci_high = std::min(1.0, e.probability + kZ99 * e.std_error);
    return e;
  }
};

struct EstimateOptions {
  double hyperplane_width = 1.0;
  std::size_t hyperplane_projections = 0;  // 0 -> ceil(log2 n)
  unsigned threads = 0;                    // 0 -> hardware concurrency
};

namespace detail {

enum Stream : std::uint64_t { kPairStream = 1, kHyperplaneStream = 2, kSphericalStream = 3,
                              kTokenStream = 4, kJaccardStream = 5 };

/// Runs body(t, counts) for t in [0, trials) across threads, where `counts`
/// has `slots` entries; per-thread counts are summed at the end.
template <class Body>
std::vector<std::size_t> count_multi(std::size_t trials, unsigned threads, std::size_t slots, Body&& body) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(trials, 1)));
  std::vector<std::vector<std::size_t>> counts(threads, std::vector<std::size_t>(slots, 0));
  auto work = [&](unsigned w) {
    for (std::size_t t = w; t < trials; t += threads) body(t, std::span<std::size_t>(counts[w]));
  };
  if (threads == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < threads; ++w) pool.emplace_back(work, w);
    for (auto& th : pool) th.join();
  }
  std::vector<std::size_t> total(slots, 0);
  for (const auto& c : counts)
    for (std::size_t i = 0; i < slots; ++i) total[i] += c[i];
  return total;
}

template <class Hit>
std::size_t count_hits(std::size_t trials, unsigned threads, Hit&& hit) {
  return count_multi(trials, threads, 1, [&](std::size_t t, std::span<std::size_t> c) {
    if (hit(t)) ++c[0];
  })[0];
}

/// Shared-wordpiece count for trial `t`. Non-integral f*l is rounded
/// stochastically so the expected overlap is exactly f.
inline std::size_t shared_count(std::size_t l, double f, Rng& rng) {
  const double target = f * static_cast<double>(l);
  const double base = std::floor(target + 1e-9);
  double frac = target - base;
  if (frac < 1e-9) frac = 0.0;
  std::size_t shared = static_cast<std::size_t>(base);
  if (frac > 0.0 && std::uniform_real_distribution<double>(0.0, 1.0)(rng) < frac) ++shared;
  return std::min(shared, l);
}

inline SentencePair trial_pair(std::uint64_t seed, std::size_t t, std::size_t l, double f, std::size_t d,
                               bool with_embeddings) {
  Rng rng(derive_seed(seed, kPairStream, t));
  const std::size_t shared = shared_count(l, f, rng);
  return make_sentence_pair(l, shared, d, rng, with_embeddings);
}

inline std::vector<double> unit(std::vector<double> v) {
  double norm = 0.0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  if (norm > 0.0)
    for (double& x : v) x /= norm;
  return v;
}

/// Spherical-LSH collision of unit vectors u, v under n fresh random unit
/// centres in R^d. Only the centres' coordinates in span(u, v) and their norms
/// matter, so each centre is drawn as two normals plus a chi-square(d-2) for
/// the orthogonal remainder, which has the same joint law as a d-dim draw.
inline bool spherical_collides(std::span<const double> u, std::span<const double> v, std::size_t n,
                               Rng& rng) {
  const std::size_t d = u.size();
  double cosv = 0.0;
  for (std::size_t a = 0; a < d; ++a) cosv += u[a] * v[a];
  cosv = std::clamp(cosv, -1.0, 1.0);
  const double sinv = std::sqrt(std::max(0.0, 1.0 - cosv * cosv));
  std::normal_distribution<double> normal;
  std::gamma_distribution<double> chi2(static_cast<double>(d - 2) / 2.0, 2.0);
  double best_u = -std::numeric_limits<double>::infinity(), best_v = best_u;
  std::size_t arg_u = 0, arg_v = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double g1 = normal(rng), g2 = normal(rng);
    const double rest = d > 2 ? chi2(rng) : 0.0;
    const double inv = 1.0 / std::sqrt(g1 * g1 + g2 * g2 + rest);
    const double su = g1 * inv, sv = (g1 * cosv + g2 * sinv) * inv;
    if (su > best_u) { best_u = su; arg_u = i; }
    if (sv > best_v) { best_v = sv; arg_v = i; }
  }
  return arg_u == arg_v;
}

}  // namespace detail

namespace detail {

/// Spherical and hyperplane hits over the same per-trial sentence pairs.
/// Slot 0 is spherical (when requested), then one slot per width. Hash
/// randomness depends only on (seed, trial), so a width's count does not
/// depend on which other widths are evaluated alongside it.
inline std::vector<std::size_t> count_mixed(std::size_t n, std::size_t l, double f, std::size_t d,
                                            std::size_t trials, std::uint64_t seed, bool spherical,
                                            std::span<const double> widths, std::size_t projections,
                                            unsigned threads) {
  const std::size_t offset = spherical ? 1 : 0;
  return count_multi(trials, threads, offset + widths.size(), [&](std::size_t t, std::span<std::size_t> c) {
    SentencePair p = trial_pair(seed, t, l, f, d, true);
    const std::vector<double> u = unit(mix(p.s1, d)), v = unit(mix(p.s2, d));
    if (spherical) {
      Rng rng(derive_seed(seed, kSphericalStream, t));
      if (spherical_collides(u, v, n, rng)) ++c[0];
    }
    for (std::size_t i = 0; i < widths.size(); ++i) {
      auto params = HyperplaneLshParams::make(n, d, derive_seed(seed, kHyperplaneStream, t), projections,
                                              widths[i]);
      if (hyperplane_lsh_lookup(u, params) == hyperplane_lsh_lookup(v, params)) ++c[offset + i];
    }
  });
}

inline CollisionEstimate finish(Scheme scheme, std::size_t hits, std::size_t n, std::size_t l, double f,
                                std::size_t d, std::size_t trials, double width) {
  CollisionEstimate e = CollisionEstimate::from_hits(scheme, hits, trials);
  e.n = n;
  e.l = l;
  e.f = f;
  e.d = d;
  e.width = width;
  return e;
}

}  // namespace detail

/// Estimated probability that s1 and s2 are routed to the same bucket.
inline CollisionEstimate estimate_collision(Scheme scheme, std::size_t n, std::size_t l, double f,
                                            std::size_t d, std::size_t trials, std::uint64_t seed,
                                            const EstimateOptions& opt = {}) {
  if (trials == 0) throw RangeError("estimate_collision: trials must be >= 1");
  if (n == 0) throw RangeError("estimate_collision: n must be >= 1");
  if (f < 0.0 || f > 1.0) throw RangeError("estimate_collision: f outside [0,1]");
  std::size_t hits = 0;
  switch (scheme) {
    case Scheme::hyperplane: {
      const double w[] = {opt.hyperplane_width};
      hits = detail::count_mixed(n, l, f, d, trials, seed, false, w, opt.hyperplane_projections, opt.threads)[0];
      break;
    }
    case Scheme::spherical:
      hits = detail::count_mixed(n, l, f, d, trials, seed, true, {}, 0, opt.threads)[0];
      break;
    case Scheme::minhash:
      hits = detail::count_hits(trials, opt.threads, [&](std::size_t t) {
        SentencePair p = detail::trial_pair(seed, t, l, f, d, false);
        Rng rng(derive_seed(seed, detail::kTokenStream, t));
        const int token = p.ids1[std::uniform_int_distribution<std::size_t>(0, l - 1)(rng)];
        const std::size_t table = 2 * l;
        const std::size_t bucket = token_id_lookup(token, table);
        return std::any_of(p.ids2.begin(), p.ids2.end(),
                           [&](int other) { return token_id_lookup(other, table) == bucket; });
      });
      break;
  }
  return detail::finish(scheme, hits, n, l, f, d, trials,
                        scheme == Scheme::hyperplane ? opt.hyperplane_width : 0.0);
}

/// Spherical LSH evaluated literally: n unit-norm router rows, top-1 softmax
/// routing of the two mixed sentences. Slower; cross-checks the reduced
/// sampler in estimate_collision.
inline CollisionEstimate estimate_spherical_by_routing(std::size_t n, std::size_t l, double f,
                                                       std::size_t d, std::size_t trials,
                                                       std::uint64_t seed) {
  std::size_t hits = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    SentencePair p = detail::trial_pair(seed, t, l, f, d, true);
    Rng rng(derive_seed(seed, detail::kSphericalStream + 100, t));
    RouterParams router;
    router.W = Tensor::zeros({n, d});
    detail::unit_gaussian_rows(router.W.data(), d, rng);
    router.k = 1;
    router.jitter_eps = 0.0;
    const auto a = softmax_route(detail::unit(mix(p.s1, d)), router, false, rng);
    const auto b = softmax_route(detail::unit(mix(p.s2, d)), router, false, rng);
    hits += a.indices.front() == b.indices.front() ? 1 : 0;
  }
  CollisionEstimate e = CollisionEstimate::from_hits(Scheme::spherical, hits, trials);
  e.n = n;
  e.l = l;
  e.f = f;
  e.d = d;
  return e;
}

/// Pairwise min-hash of the two sentences' token-id sets under fresh
/// priorities; converges to the Jaccard similarity |A∩B| / |A∪B|.
inline CollisionEstimate estimate_minhash_jaccard(std::size_t l, double f, std::size_t trials,
                                                  std::uint64_t seed, unsigned threads = 0) {
  if (trials == 0) throw RangeError("estimate_minhash_jaccard: trials must be >= 1");
  const std::size_t hits = detail::count_hits(trials, threads, [&](std::size_t t) {
    SentencePair p = detail::trial_pair(seed, t, l, f, 2, false);
    const std::uint64_t perm = derive_seed(seed, detail::kJaccardStream, t);
    return minhash_lookup(p.ids1, perm) == minhash_lookup(p.ids2, perm);
  });
  CollisionEstimate e = CollisionEstimate::from_hits(Scheme::minhash, hits, trials);
  e.l = l;
  e.f = f;
  return e;
}

/// Exact Jaccard similarity of two length-l sentences sharing s wordpieces.
inline double jaccard(std::size_t l, std::size_t shared) {
  return static_cast<double>(shared) / static_cast<double>(2 * l - shared);
}

/// Reference quantities of the LSH framework for a near pair at overlap f and
/// a far pair at overlap 0, with p1, p2 their estimated collision rates.
struct TheoryConstants {
  double r1 = 0.0, r2 = 0.0, c = 0.0, p1 = 0.0, p2 = 0.0, rho = 0.0;
};

inline TheoryConstants theory_constants(double f, double p_near, double p_far) {
  TheoryConstants t;
  t.r1 = std::sqrt(2.0 * (1.0 - f));
  t.r2 = std::sqrt(2.0);
  t.c = t.r1 > 0.0 ? t.r2 / t.r1 : std::numeric_limits<double>::infinity();
  t.p1 = p_near;
  t.p2 = p_far;
  t.rho = (p_near > 0.0 && p_far > 0.0 && p_far < 1.0) ? std::log(1.0 / p_near) / std::log(1.0 / p_far)
                                                       : std::numeric_limits<double>::quiet_NaN();
  return t;
}

inline const std::vector<double>& hyperplane_width_grid() {
  static const std::vector<double> grid{0.5, 1.0, 2.0};
  return grid;
}

struct OrderingReport {
  CollisionEstimate token_id, spherical, hyperplane;  // hyperplane: best width
  std::vector<CollisionEstimate> hyperplane_sweep;
  bool pass = false;
  bool in_regime = false;  // large n, small f; informational
};

/// Token-ID >= spherical >= hyperplane, each step judged with 99% intervals
/// that must not overlap (touching endpoints count as holding, which covers
/// the all-equal f = 1 case).
inline OrderingReport verify_ordering(std::size_t n, std::size_t l, double f, std::size_t d,
                                      std::size_t trials, std::uint64_t seed, unsigned threads = 0) {
  OrderingReport r;
  EstimateOptions opt;
  opt.threads = threads;
  r.token_id = estimate_collision(Scheme::minhash, n, l, f, d, trials, seed, opt);
  const auto& widths = hyperplane_width_grid();
  const auto hits = detail::count_mixed(n, l, f, d, trials, seed, true, widths, 0, threads);
  r.spherical = detail::finish(Scheme::spherical, hits[0], n, l, f, d, trials, 0.0);
  for (std::size_t i = 0; i < widths.size(); ++i)
    r.hyperplane_sweep.push_back(detail::finish(Scheme::hyperplane, hits[1 + i], n, l, f, d, trials, widths[i]));
  r.hyperplane = *std::max_element(r.hyperplane_sweep.begin(), r.hyperplane_sweep.end(),
                                   [](const auto& a, const auto& b) { return a.probability < b.probability; });
  r.pass = r.token_id.ci_low >= r.spherical.ci_high && r.spherical.ci_low >= r.hyperplane.ci_high;
  r.in_regime = n >= 256 && f <= 0.25;
  return r;
}

/// Least-squares slope of log p against log n; NaN with fewer than two
/// positive estimates.
inline double log_log_slope(std::span<const CollisionEstimate> estimates) {
  std::vector<std::pair<double, double>> pts;
  for (const auto& e : estimates)
    if (e.probability > 0.0) pts.emplace_back(std::log(static_cast<double>(e.n)), std::log(e.probability));
  if (pts.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  double mx = 0.0, my = 0.0;
  for (auto [x, y] : pts) { mx += x; my += y; }
  mx /= static_cast<double>(pts.size());
  my /= static_cast<double>(pts.size());
  double sxy = 0.0, sxx = 0.0;
  for (auto [x, y] : pts) { sxy += (x - mx) * (y - my); sxx += (x - mx) * (x - mx); }
  return sxx > 0.0 ? sxy / sxx : std::numeric_limits<double>::quiet_NaN();
}

inline constexpr std::string_view kCsvHeader = "scheme,n,l,f,d,trials,probability,stderr,ci_low,ci_high";

inline void write_csv_row(std::ostream& os, const CollisionEstimate& e) {
  std::ostringstream line;
  line << std::setprecision(10) << scheme_name(e.scheme) << ',' << e.n << ',' << e.l << ',' << e.f << ','
       << e.d << ',' << e.trials << ',' << e.probability << ',' << e.std_error << ',' << e.ci_low << ','
       << e.ci_high;
  os << line.str() << '\n';
}

inline void write_csv(std::ostream& os, std::span<const CollisionEstimate> rows) {
  os << kCsvHeader << '\n';
  for (const auto& e : rows) write_csv_row(os, e);
}

}  // namespace altup::lsh
