// Copyright 2026 The AltUp Toolkit Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "altup/errors.hpp"
#include "altup/tensor.hpp"

namespace altup {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  std::size_t entries_checked = 0;
};

/// Compares taped gradients of the scalar `f()` with central differences,
/// entry by entry. Relative error per entry is
/// |ad - fd| / max(1e-8, |ad| + |fd|). `f` must be deterministic and must
/// rebuild its computation on every call.
inline GradCheckReport grad_check_report(const std::function<Tensor()>& f,
                                         std::vector<NamedTensor> params, double eps) {
  if (!(eps > 0.0)) throw RangeError("grad_check: eps must be positive");
  for (NamedTensor& p : params) {
    p.tensor.set_requires_grad(true);
    p.tensor.zero_grad();
  }
  Graph graph;
  Tensor loss;
  {
    GraphScope scope(graph);
    loss = f();
  }
  if (!std::isfinite(loss.item())) throw NumericError("grad_check: non-finite loss", "loss");
  if (loss.requires_grad()) graph.backward(loss);

  GradCheckReport report;
  NoGradScope no_grad;
  for (NamedTensor& p : params) {
    std::vector<double> analytic(p.tensor.numel(), 0.0);
    if (p.tensor.has_grad()) analytic.assign(p.tensor.grad().begin(), p.tensor.grad().end());
    auto values = p.tensor.data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (!std::isfinite(analytic[i]))
        throw NumericError("grad_check: non-finite gradient in " + p.name, p.name);
      const double saved = values[i];
      values[i] = saved + eps;
      const double up = f().item();
      values[i] = saved - eps;
      const double down = f().item();
      values[i] = saved;
      if (!std::isfinite(up) || !std::isfinite(down))
        throw NumericError("grad_check: non-finite value while perturbing " + p.name, p.name);
      const double numeric = (up - down) / (2.0 * eps);
      const double err =
          std::abs(analytic[i] - numeric) / std::max(1e-8, std::abs(analytic[i]) + std::abs(numeric));
      ++report.entries_checked;
      if (err > report.max_relative_error) {
        report.max_relative_error = err;
        report.worst_param = p.name;
        report.worst_index = i;
      }
    }
    p.tensor.zero_grad();
  }
  return report;
}

inline double grad_check(const std::function<Tensor()>& f, std::vector<NamedTensor> params,
                         double eps) {
  return grad_check_report(f, std::move(params), eps).max_relative_error;
}

}  // namespace altup
