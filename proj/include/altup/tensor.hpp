// Copyright 2026 The AltUp Toolkit Authors.
// SPDX-License-Identifier: Apache-2.0

// Dense float64 tensors with a taped reverse-mode autodiff.
//
// A Tensor is a shared handle; copying it aliases the same buffer. Every
// primitive allocates a fresh output. When a Graph is active on the calling
// thread (see GraphScope) and any input requires grad, the primitive appends
// a Record holding its inputs and a backward closure. Records are appended in
// execution order, so the tape is topologically sorted by construction.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "altup/errors.hpp"

namespace altup {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::uint64_t id = 0;
};

namespace detail {
inline std::uint64_t next_tensor_id() {
  thread_local std::uint64_t counter = 0;
  return ++counter;
}
}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const std::size_t n = altup::numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }

  static Tensor full(Shape shape, double value, bool requires_grad = false) {
    const std::size_t n = altup::numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
  }

  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false) {
    if (altup::numel(shape) != values.size())
      throw ShapeError("tensor: shape " + to_string(shape) + " holds " +
                       std::to_string(altup::numel(shape)) + " values, got " +
                       std::to_string(values.size()));
    return Tensor(std::move(shape), std::move(values), requires_grad);
  }

  static Tensor scalar(double value, bool requires_grad = false) {
    return Tensor({1}, {value}, requires_grad);
  }

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t numel() const { return impl_->data.size(); }
  std::size_t last_dim() const { return impl_->shape.back(); }
  std::size_t rows() const { return numel() / last_dim(); }

  std::span<double> data() { return impl_->data; }
  std::span<const double> data() const { return impl_->data; }
  std::vector<double>& values() { return impl_->data; }
  const std::vector<double>& values() const { return impl_->data; }

  double item() const {
    if (numel() != 1) throw ShapeError("item: tensor " + to_string(shape()) + " is not a scalar");
    return impl_->data[0];
  }
  double operator[](std::size_t i) const { return impl_->data[i]; }
  double at(std::size_t r, std::size_t c) const { return impl_->data[r * last_dim() + c]; }

  bool requires_grad() const noexcept { return impl_ && impl_->requires_grad; }
  void set_requires_grad(bool flag) const { impl_->requires_grad = flag; }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const double> grad() const { return impl_->grad; }
  /// Gradient buffer, zero-allocated on first use.
  std::span<double> grad_buffer() const {
    if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
    return impl_->grad;
  }
  void zero_grad() const { impl_->grad.clear(); }

  std::uint64_t id() const { return impl_->id; }
  bool same(const Tensor& other) const noexcept { return impl_ == other.impl_; }

  /// Deep copy without graph history or gradient.
  Tensor clone() const { return Tensor(shape(), values(), requires_grad()); }

 private:
  Tensor(Shape shape, std::vector<double> data, bool requires_grad)
      : impl_(std::make_shared<TensorImpl>()) {
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
    impl_->requires_grad = requires_grad;
    impl_->id = detail::next_tensor_id();
  }

  std::shared_ptr<TensorImpl> impl_;
};

// ---------------------------------------------------------------------------
// Graph

class Graph {
 public:
  struct Record {
    std::string_view op;
    std::vector<Tensor> inputs;
    Tensor output;
    std::function<void(std::span<const double>)> backward;
  };

  void push(Record record) { records_.push_back(std::move(record)); }
  std::size_t size() const noexcept { return records_.size(); }
  const std::vector<Record>& records() const noexcept { return records_; }
  void clear() { records_.clear(); }

  /// Propagates d(loss)/d(.) to every requires-grad tensor reachable from
  /// `loss`. Leaf gradients accumulate across calls until zero_grad().
  void backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1)
      throw GraphError("backward: loss must be a scalar, got " +
                       (loss.defined() ? to_string(loss.shape()) : std::string("undefined")));
    std::size_t end = records_.size();
    while (end > 0 && !records_[end - 1].output.same(loss)) --end;
    if (end == 0) throw GraphError("backward: loss was not produced by this graph");

    // Intermediate gradients are scoped to this pass.
    for (std::size_t i = 0; i < end; ++i) records_[i].output.zero_grad();
    Tensor root = loss;
    root.grad_buffer()[0] = 1.0;
    for (std::size_t i = end; i-- > 0;) {
      Record& r = records_[i];
      if (!r.output.has_grad()) continue;
      r.backward(r.output.grad());
    }
  }

 private:
  std::vector<Record> records_;
};

namespace detail {
inline Graph*& active_graph_slot() {
  thread_local Graph* graph = nullptr;
  return graph;
}
}  // namespace detail

inline Graph* active_graph() { return detail::active_graph_slot(); }

/// Makes `graph` the recording target on this thread for the scope's lifetime.
class GraphScope {
 public:
  explicit GraphScope(Graph& graph) : previous_(detail::active_graph_slot()) {
    detail::active_graph_slot() = &graph;
  }
  ~GraphScope() { detail::active_graph_slot() = previous_; }
  GraphScope(const GraphScope&) = delete;
  GraphScope& operator=(const GraphScope&) = delete;

 private:
  Graph* previous_;
};

/// Disables recording on this thread for the scope's lifetime.
class NoGradScope {
 public:
  NoGradScope() : previous_(detail::active_graph_slot()) { detail::active_graph_slot() = nullptr; }
  ~NoGradScope() { detail::active_graph_slot() = previous_; }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Graph* previous_;
};

inline void backward(Graph& graph, const Tensor& loss) { graph.backward(loss); }

// ---------------------------------------------------------------------------
// Instrumentation

/// Per-thread counters used by the cost model's instrumentation oracle.
struct Counters {
  std::uint64_t macs = 0;             // multiply-accumulates in matrix products
  std::uint64_t layer_calls = 0;      // transformer layer invocations
  std::uint64_t layer_positions = 0;  // sequence positions seen by those layers
};

inline Counters& counters() {
  thread_local Counters c;
  return c;
}

inline void reset_counters() { counters() = Counters{}; }

// ---------------------------------------------------------------------------
// Primitive plumbing

namespace detail {

/// Gradient sink for an input: empty when the input does not take grads.
inline std::span<double> sink(const Tensor& t) {
  if (!t.requires_grad()) return {};
  return t.grad_buffer();
}

template <class Backward>
Tensor record(std::string_view op, std::vector<Tensor> inputs, Tensor output, Backward&& bw) {
  Graph* g = active_graph();
  if (g == nullptr) return output;
  const bool any = std::any_of(inputs.begin(), inputs.end(),
                               [](const Tensor& t) { return t.requires_grad(); });
  if (!any) return output;
  output.set_requires_grad(true);
  g->push({op, std::move(inputs), output, std::forward<Backward>(bw)});
  return output;
}

[[noreturn]] inline void shape_mismatch(std::string_view op, const Tensor& a, const Tensor& b) {
  throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                   to_string(b.shape()));
}

/// True when `b` equals `a` or equals a trailing slice of a's shape.
inline bool broadcastable(const Shape& a, const Shape& b) {
  if (b.size() > a.size()) return false;
  return std::equal(b.begin(), b.end(), a.end() - static_cast<std::ptrdiff_t>(b.size()));
}

template <class Fwd, class GradA, class GradB>
Tensor binary(std::string_view op, const Tensor& a, const Tensor& b, Fwd fwd, GradA ga, GradB gb) {
  if (!broadcastable(a.shape(), b.shape())) shape_mismatch(op, a, b);
  const std::size_t n = a.numel(), nb = b.numel();
  Tensor out = Tensor::zeros(a.shape());
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < n; ++i) o[i] = fwd(x[i], y[i % nb]);
  return record(op, {a, b}, out, [a, b, ga, gb, n, nb](std::span<const double> g) mutable {
    auto sa = sink(a);
    auto sb = sink(b);
    auto x = a.data();
    auto y = b.data();
    if (!sa.empty())
      for (std::size_t i = 0; i < n; ++i) sa[i] += ga(g[i], x[i], y[i % nb]);
    if (!sb.empty())
      for (std::size_t i = 0; i < n; ++i) sb[i % nb] += gb(g[i], x[i], y[i % nb]);
  });
}

template <class Fwd, class Deriv>
Tensor unary(std::string_view op, const Tensor& a, Fwd fwd, Deriv deriv) {
  const std::size_t n = a.numel();
  Tensor out = Tensor::zeros(a.shape());
  auto o = out.data();
  auto x = a.data();
  for (std::size_t i = 0; i < n; ++i) o[i] = fwd(x[i]);
  return record(op, {a}, out, [a, out, deriv, n](std::span<const double> g) mutable {
    auto sa = sink(a);
    auto x = a.data();
    auto y = out.data();
    for (std::size_t i = 0; i < n; ++i) sa[i] += g[i] * deriv(x[i], y[i]);
  });
}

inline void require_rank2(std::string_view op, const Tensor& t) {
  if (t.rank() != 2)
    throw ShapeError(std::string(op) + ": expected a matrix, got " + to_string(t.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise. `b` may equal a's shape or a trailing slice of it (leading
// batch expansion); nothing else broadcasts.

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double g, double, double) { return g; }, [](double g, double, double) { return g; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::binary(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double g, double, double) { return g; }, [](double g, double, double) { return -g; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::binary(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double g, double, double y) { return g * y; },
      [](double g, double x, double) { return g * x; });
}

inline Tensor scale(const Tensor& a, double c) {
  return detail::unary(
      "scale", a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

/// a * s[index]: multiplies by one (trainable) entry of `s`.
inline Tensor mul_entry(const Tensor& a, const Tensor& s, std::size_t index) {
  if (index >= s.numel())
    throw ShapeError("mul_entry: index " + std::to_string(index) + " outside " +
                     to_string(s.shape()));
  const double c = s[index];
  Tensor out = Tensor::zeros(a.shape());
  auto o = out.data();
  auto x = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = c * x[i];
  return detail::record("mul_entry", {a, s}, out,
                        [a, s, index](std::span<const double> g) mutable {
                          auto sa = detail::sink(a);
                          auto ss = detail::sink(s);
                          const double c = s[index];
                          auto x = a.data();
                          double acc = 0.0;
                          for (std::size_t i = 0; i < g.size(); ++i) {
                            if (!sa.empty()) sa[i] += g[i] * c;
                            acc += g[i] * x[i];
                          }
                          if (!ss.empty()) ss[index] += acc;
                        });
}

inline Tensor relu(const Tensor& a) {
  return detail::unary(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

/// Exact erf-based GELU.
inline Tensor gelu(const Tensor& a) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  constexpr double inv_sqrt2pi = 0.39894228040143267794;
  return detail::unary(
      "gelu", a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); },
      [](double x, double) {
        return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) + x * inv_sqrt2pi * std::exp(-0.5 * x * x);
      });
}

inline Tensor sigmoid(const Tensor& a) {
  return detail::unary(
      "sigmoid", a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

inline Tensor log(const Tensor& a) {
  return detail::unary(
      "log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

// ---------------------------------------------------------------------------
// Matrix products. Rank-2 only; MACs are counted in counters().

/// [m,k] x [k,n] -> [m,n]
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_rank2("matmul", a);
  detail::require_rank2("matmul", b);
  if (a.dim(1) != b.dim(0)) detail::shape_mismatch("matmul", a, b);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out = Tensor::zeros({m, n});
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double v = x[i * k + p];
      const double* row = &y[p * n];
      double* dst = &o[i * n];
      for (std::size_t j = 0; j < n; ++j) dst[j] += v * row[j];
    }
  counters().macs += m * k * n;
  return detail::record("matmul", {a, b}, out, [a, b, m, k, n](std::span<const double> g) mutable {
    auto sa = detail::sink(a);
    auto sb = detail::sink(b);
    auto x = a.data();
    auto y = b.data();
    if (!sa.empty())
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * y[p * n + j];
          sa[i * k + p] += acc;
        }
    if (!sb.empty())
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double v = x[i * k + p];
          for (std::size_t j = 0; j < n; ++j) sb[p * n + j] += v * g[i * n + j];
        }
  });
}

/// [m,k] x [n,k]^T -> [m,n]
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  detail::require_rank2("matmul_nt", a);
  detail::require_rank2("matmul_nt", b);
  if (a.dim(1) != b.dim(1)) detail::shape_mismatch("matmul_nt", a, b);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  Tensor out = Tensor::zeros({m, n});
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += x[i * k + p] * y[j * k + p];
      o[i * n + j] = acc;
    }
  counters().macs += m * k * n;
  return detail::record("matmul_nt", {a, b}, out,
                        [a, b, m, k, n](std::span<const double> g) mutable {
                          auto sa = detail::sink(a);
                          auto sb = detail::sink(b);
                          auto x = a.data();
                          auto y = b.data();
                          for (std::size_t i = 0; i < m; ++i)
                            for (std::size_t j = 0; j < n; ++j) {
                              const double gij = g[i * n + j];
                              if (gij == 0.0) continue;
                              if (!sa.empty())
                                for (std::size_t p = 0; p < k; ++p) sa[i * k + p] += gij * y[j * k + p];
                              if (!sb.empty())
                                for (std::size_t p = 0; p < k; ++p) sb[j * k + p] += gij * x[i * k + p];
                            }
                        });
}

// ---------------------------------------------------------------------------
// Row-wise ops over the last axis.

/// Softmax over the last axis. With `causal`, a rank-2 [N,M] input has entry
/// (i,j) masked out for j > i.
inline Tensor softmax(const Tensor& a, bool causal = false) {
  if (causal) detail::require_rank2("softmax", a);
  const std::size_t cols = a.last_dim(), rows = a.rows();
  Tensor out = Tensor::zeros(a.shape());
  auto o = out.data();
  auto x = a.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t live = causal ? std::min(cols, r + 1) : cols;
    const double* src = &x[r * cols];
    double* dst = &o[r * cols];
    const double mx = *std::max_element(src, src + live);
    double z = 0.0;
    for (std::size_t j = 0; j < live; ++j) z += (dst[j] = std::exp(src[j] - mx));
    for (std::size_t j = 0; j < live; ++j) dst[j] /= z;
  }
  return detail::record("softmax", {a}, out, [a, out, rows, cols](std::span<const double> g) mutable {
    auto sa = detail::sink(a);
    auto p = out.data();
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < cols; ++j) dot += g[r * cols + j] * p[r * cols + j];
      for (std::size_t j = 0; j < cols; ++j)
        sa[r * cols + j] += p[r * cols + j] * (g[r * cols + j] - dot);
    }
  });
}

/// Layer norm over the last axis with a learned scale and no bias.
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, double eps = 1e-6) {
  const std::size_t cols = x.last_dim(), rows = x.rows();
  if (gamma.numel() != cols) detail::shape_mismatch("layer_norm", x, gamma);
  Tensor out = Tensor::zeros(x.shape());
  std::vector<double> xhat(x.numel()), inv_std(rows);
  auto o = out.data();
  auto v = x.data();
  auto s = gamma.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* src = &v[r * cols];
    double mean = 0.0;
    for (std::size_t j = 0; j < cols; ++j) mean += src[j];
    mean /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t j = 0; j < cols; ++j) var += (src[j] - mean) * (src[j] - mean);
    var /= static_cast<double>(cols);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < cols; ++j) {
      xhat[r * cols + j] = (src[j] - mean) * inv_std[r];
      o[r * cols + j] = xhat[r * cols + j] * s[j];
    }
  }
  return detail::record(
      "layer_norm", {x, gamma}, out,
      [x, gamma, xhat = std::move(xhat), inv_std = std::move(inv_std), rows,
       cols](std::span<const double> g) mutable {
        auto sx = detail::sink(x);
        auto sg = detail::sink(gamma);
        auto s = gamma.data();
        const double inv_n = 1.0 / static_cast<double>(cols);
        for (std::size_t r = 0; r < rows; ++r) {
          double mean_gh = 0.0, mean_ghx = 0.0;
          for (std::size_t j = 0; j < cols; ++j) {
            const double gh = g[r * cols + j] * s[j];
            mean_gh += gh;
            mean_ghx += gh * xhat[r * cols + j];
            if (!sg.empty()) sg[j] += g[r * cols + j] * xhat[r * cols + j];
          }
          mean_gh *= inv_n;
          mean_ghx *= inv_n;
          if (sx.empty()) continue;
          for (std::size_t j = 0; j < cols; ++j) {
            const double gh = g[r * cols + j] * s[j];
            sx[r * cols + j] += inv_std[r] * (gh - mean_gh - xhat[r * cols + j] * mean_ghx);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Gather / scatter

/// Rows of `table` [V,D] at `ids` -> [N,D].
inline Tensor embedding(const Tensor& table, std::span<const int> ids) {
  detail::require_rank2("embedding", table);
  const std::size_t vocab = table.dim(0), width = table.dim(1);
  for (std::size_t i = 0; i < ids.size(); ++i)
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab)
      throw RangeError("embedding: token id " + std::to_string(ids[i]) + " at position " +
                       std::to_string(i) + " outside [0," + std::to_string(vocab) + ")");
  Tensor out = Tensor::zeros({ids.size(), width});
  auto o = out.data();
  auto t = table.data();
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::copy_n(&t[static_cast<std::size_t>(ids[i]) * width], width, &o[i * width]);
  std::vector<int> idx(ids.begin(), ids.end());
  return detail::record("embedding", {table}, out,
                        [table, idx = std::move(idx), width](std::span<const double> g) mutable {
                          auto st = detail::sink(table);
                          for (std::size_t i = 0; i < idx.size(); ++i)
                            for (std::size_t j = 0; j < width; ++j)
                              st[static_cast<std::size_t>(idx[i]) * width + j] += g[i * width + j];
                        });
}

/// Rows of `x` [R,D] at `index` (repeats allowed) -> [m,D].
inline Tensor gather_rows(const Tensor& x, std::vector<std::size_t> index) {
  detail::require_rank2("gather_rows", x);
  const std::size_t rows = x.dim(0), width = x.dim(1);
  for (std::size_t i : index)
    if (i >= rows)
      throw RangeError("gather_rows: row " + std::to_string(i) + " outside " + to_string(x.shape()));
  Tensor out = Tensor::zeros({index.size(), width});
  auto o = out.data();
  auto v = x.data();
  for (std::size_t i = 0; i < index.size(); ++i) std::copy_n(&v[index[i] * width], width, &o[i * width]);
  return detail::record("gather_rows", {x}, out,
                        [x, index = std::move(index), width](std::span<const double> g) mutable {
                          auto sx = detail::sink(x);
                          for (std::size_t i = 0; i < index.size(); ++i)
                            for (std::size_t j = 0; j < width; ++j) sx[index[i] * width + j] += g[i * width + j];
                        });
}

/// Copy of `base` [R,D] with row index[i] overwritten by row i of `rows`.
inline Tensor merge_rows(const Tensor& base, const Tensor& rows, std::vector<std::size_t> index) {
  detail::require_rank2("merge_rows", base);
  detail::require_rank2("merge_rows", rows);
  const std::size_t width = base.dim(1);
  if (rows.dim(1) != width || rows.dim(0) != index.size())
    detail::shape_mismatch("merge_rows", base, rows);
  std::vector<char> replaced(base.dim(0), 0);
  for (std::size_t i : index) {
    if (i >= base.dim(0))
      throw RangeError("merge_rows: row " + std::to_string(i) + " outside " + to_string(base.shape()));
    if (replaced[i]) throw RangeError("merge_rows: row " + std::to_string(i) + " listed twice");
    replaced[i] = 1;
  }
  Tensor out = base.clone();
  out.set_requires_grad(false);
  auto o = out.data();
  auto r = rows.data();
  for (std::size_t i = 0; i < index.size(); ++i) std::copy_n(&r[i * width], width, &o[index[i] * width]);
  return detail::record("merge_rows", {base, rows}, out,
                        [base, rows, index = std::move(index), replaced = std::move(replaced),
                         width](std::span<const double> g) mutable {
                          auto sb = detail::sink(base);
                          auto sr = detail::sink(rows);
                          if (!sb.empty())
                            for (std::size_t i = 0; i < replaced.size(); ++i)
                              if (!replaced[i])
                                for (std::size_t j = 0; j < width; ++j) sb[i * width + j] += g[i * width + j];
                          if (!sr.empty())
                            for (std::size_t i = 0; i < index.size(); ++i)
                              for (std::size_t j = 0; j < width; ++j) sr[i * width + j] += g[index[i] * width + j];
                        });
}

/// Mean over consecutive windows of `k` rows: [T,D] -> [ceil(T/k),D]. The
/// last window may be shorter.
inline Tensor mean_pool_rows(const Tensor& x, std::size_t k) {
  detail::require_rank2("mean_pool_rows", x);
  if (k == 0) throw RangeError("mean_pool_rows: window must be >= 1");
  const std::size_t t = x.dim(0), width = x.dim(1), m = (t + k - 1) / k;
  if (t == 0) throw ShapeError("mean_pool_rows: empty sequence");
  Tensor out = Tensor::zeros({m, width});
  auto o = out.data();
  auto v = x.data();
  for (std::size_t w = 0; w < m; ++w) {
    const std::size_t lo = w * k, hi = std::min(t, lo + k);
    const double inv = 1.0 / static_cast<double>(hi - lo);
    for (std::size_t r = lo; r < hi; ++r)
      for (std::size_t j = 0; j < width; ++j) o[w * width + j] += v[r * width + j];
    for (std::size_t j = 0; j < width; ++j) o[w * width + j] *= inv;
  }
  return detail::record("mean_pool_rows", {x}, out, [x, k, t, width](std::span<const double> g) mutable {
    auto sx = detail::sink(x);
    for (std::size_t r = 0; r < t; ++r) {
      const std::size_t w = r / k, lo = w * k, hi = std::min(t, lo + k);
      const double inv = 1.0 / static_cast<double>(hi - lo);
      for (std::size_t j = 0; j < width; ++j) sx[r * width + j] += g[w * width + j] * inv;
    }
  });
}

/// out[r, j] = x[r, index[r*k + j]] for x [N,n] -> [N,k].
inline Tensor select_entries(const Tensor& x, std::vector<std::size_t> index, std::size_t k) {
  detail::require_rank2("select_entries", x);
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  if (index.size() != rows * k)
    throw ShapeError("select_entries: expected " + std::to_string(rows * k) + " indices, got " +
                     std::to_string(index.size()));
  for (std::size_t i : index)
    if (i >= cols) throw RangeError("select_entries: column " + std::to_string(i) + " outside " + to_string(x.shape()));
  Tensor out = Tensor::zeros({rows, k});
  auto o = out.data();
  auto v = x.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < k; ++j) o[r * k + j] = v[r * cols + index[r * k + j]];
  return detail::record("select_entries", {x}, out,
                        [x, index = std::move(index), rows, cols, k](std::span<const double> g) mutable {
                          auto sx = detail::sink(x);
                          for (std::size_t r = 0; r < rows; ++r)
                            for (std::size_t j = 0; j < k; ++j) sx[r * cols + index[r * k + j]] += g[r * k + j];
                        });
}

// ---------------------------------------------------------------------------
// Concat / split along the last axis

inline Tensor concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const std::size_t rows = parts.front().rows();
  Shape lead(parts.front().shape().begin(), parts.front().shape().end() - 1);
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    Shape pl(p.shape().begin(), p.shape().end() - 1);
    if (pl != lead) detail::shape_mismatch("concat", parts.front(), p);
    total += p.last_dim();
  }
  Shape shape = lead;
  shape.push_back(total);
  Tensor out = Tensor::zeros(shape);
  auto o = out.data();
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const Tensor& p : parts) {
    offsets.push_back(off);
    const std::size_t w = p.last_dim();
    auto v = p.data();
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(&v[r * w], w, &o[r * total + off]);
    off += w;
  }
  return detail::record("concat", parts, out,
                        [parts, offsets = std::move(offsets), rows, total](std::span<const double> g) mutable {
                          for (std::size_t i = 0; i < parts.size(); ++i) {
                            auto s = detail::sink(parts[i]);
                            if (s.empty()) continue;
                            const std::size_t w = parts[i].last_dim();
                            for (std::size_t r = 0; r < rows; ++r)
                              for (std::size_t j = 0; j < w; ++j) s[r * w + j] += g[r * total + offsets[i] + j];
                          }
                        });
}

/// Columns [begin, begin+width) of the last axis.
inline Tensor slice_last(const Tensor& x, std::size_t begin, std::size_t width) {
  const std::size_t cols = x.last_dim(), rows = x.rows();
  if (width == 0 || begin + width > cols)
    throw ShapeError("slice_last: columns [" + std::to_string(begin) + "," +
                     std::to_string(begin + width) + ") outside " + to_string(x.shape()));
  Shape shape = x.shape();
  shape.back() = width;
  Tensor out = Tensor::zeros(shape);
  auto o = out.data();
  auto v = x.data();
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(&v[r * cols + begin], width, &o[r * width]);
  return detail::record("slice_last", {x}, out, [x, begin, width, rows, cols](std::span<const double> g) mutable {
    auto sx = detail::sink(x);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < width; ++j) sx[r * cols + begin + j] += g[r * width + j];
  });
}

/// Splits the last axis into `parts` equal contiguous blocks.
inline std::vector<Tensor> split(const Tensor& x, std::size_t parts) {
  if (parts == 0 || x.last_dim() % parts != 0)
    throw ShapeError("split: width " + std::to_string(x.last_dim()) + " not divisible by " +
                     std::to_string(parts));
  const std::size_t w = x.last_dim() / parts;
  std::vector<Tensor> out;
  out.reserve(parts);
  for (std::size_t i = 0; i < parts; ++i) out.push_back(slice_last(x, i * w, w));
  return out;
}

/// Same values under a new shape with equal element count.
inline Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.numel())
    throw ShapeError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  Tensor out = Tensor::from(std::move(shape), x.values());
  return detail::record("reshape", {x}, out, [x](std::span<const double> g) mutable {
    auto sx = detail::sink(x);
    for (std::size_t i = 0; i < g.size(); ++i) sx[i] += g[i];
  });
}

// ---------------------------------------------------------------------------
// Reductions

inline Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  return detail::record("sum", {x}, Tensor::scalar(acc), [x](std::span<const double> g) mutable {
    auto sx = detail::sink(x);
    for (double& v : sx) v += g[0];
  });
}

inline Tensor mean(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  const double inv = 1.0 / static_cast<double>(x.numel());
  return detail::record("mean", {x}, Tensor::scalar(acc * inv), [x, inv](std::span<const double> g) mutable {
    auto sx = detail::sink(x);
    for (double& v : sx) v += g[0] * inv;
  });
}

/// Mean over positions of -log softmax(logits)[target]; targets of -1 are
/// ignored. Uses max-subtraction.
inline Tensor cross_entropy(const Tensor& logits, std::span<const int> targets) {
  detail::require_rank2("cross_entropy", logits);
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  if (targets.size() != rows)
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                     to_string(logits.shape()) + " logits");
  std::size_t counted = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] == -1) continue;
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= cols)
      throw RangeError("cross_entropy: target " + std::to_string(targets[r]) + " at position " +
                       std::to_string(r) + " outside [0," + std::to_string(cols) + ")");
    ++counted;
  }
  if (counted == 0) throw RangeError("cross_entropy: every target is ignored");
  std::vector<double> probs(rows * cols, 0.0);
  auto v = logits.data();
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] == -1) continue;
    const double* src = &v[r * cols];
    const double mx = *std::max_element(src, src + cols);
    double z = 0.0;
    for (std::size_t j = 0; j < cols; ++j) z += (probs[r * cols + j] = std::exp(src[j] - mx));
    for (std::size_t j = 0; j < cols; ++j) probs[r * cols + j] /= z;
    loss += std::log(z) + mx - src[targets[r]];
  }
  const double inv = 1.0 / static_cast<double>(counted);
  std::vector<int> tgt(targets.begin(), targets.end());
  return detail::record("cross_entropy", {logits}, Tensor::scalar(loss * inv),
                        [logits, probs = std::move(probs), tgt = std::move(tgt), rows, cols,
                         inv](std::span<const double> g) mutable {
                          auto sl = detail::sink(logits);
                          for (std::size_t r = 0; r < rows; ++r) {
                            if (tgt[r] == -1) continue;
                            for (std::size_t j = 0; j < cols; ++j) {
                              const double onehot = static_cast<int>(j) == tgt[r] ? 1.0 : 0.0;
                              sl[r * cols + j] += g[0] * inv * (probs[r * cols + j] - onehot);
                            }
                          }
                        });
}

}  // namespace altup
