// Copyright 2026 The AltUp Toolkit Authors.
// SPDX-License-Identifier: Apache-2.0

// Deterministic SGD training loop, held-out evaluation and metrics output.

#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "altup/cost_model.hpp"
#include "altup/errors.hpp"
#include "altup/harness/checkpoint.hpp"
#include "altup/harness/config.hpp"
#include "altup/harness/data.hpp"
#include "altup/model.hpp"
#include "altup/rng.hpp"
#include "altup/tensor.hpp"

namespace altup::harness {

/// Seed streams; every random draw in a run descends from (seed, stream, i).
enum class Stream : std::uint64_t { init = 11, data = 12, eval = 13, jitter = 14 };

inline std::uint64_t stream_seed(std::uint64_t seed, Stream s, std::uint64_t i) {
  return derive_seed(seed, static_cast<std::uint64_t>(s), i);
}

struct MetricsRow {
  std::size_t step = 0;
  double train_loss = 0.0;
  double eval_loss = 0.0;
  double eval_token_accuracy = 0.0;
  std::optional<double> tokens_per_second;  // only when timing is requested
  std::size_t parameter_census = 0;
};

inline constexpr const char* kMetricsHeader =
    "step,train_loss,eval_loss,eval_token_accuracy,tokens_per_second,parameter_census";

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

inline std::string to_csv(const MetricsRow& r) {
  std::string s = std::to_string(r.step) + "," + format_double(r.train_loss) + "," + format_double(r.eval_loss) +
                  "," + format_double(r.eval_token_accuracy) + ",";
  if (r.tokens_per_second) s += format_double(*r.tokens_per_second);
  return s + "," + std::to_string(r.parameter_census);
}

struct EvalResult {
  double loss = 0.0;      // mean negative log-likelihood per scored token
  double accuracy = 0.0;  // argmax hits per scored token
  std::size_t tokens = 0;
};

/// Token-weighted loss and accuracy; no graph is recorded.
inline EvalResult evaluate(const Model& model, const std::vector<Example>& examples) {
  NoGradScope no_grad;
  Rng unused(0);
  double nll = 0.0;
  std::size_t hits = 0, tokens = 0;
  const std::size_t V = model.spec().model.vocab_size;
  for (const auto& ex : examples) {
    Tensor logits = model.forward(ex.ids, false, unused);
    auto z = logits.data();
    for (std::size_t t = 0; t < ex.ids.size(); ++t) {
      const int y = ex.targets[t];
      if (y < 0) continue;
      auto row = z.subspan(t * V, V);
      std::size_t best = 0;
      double mx = row[0];
      for (std::size_t v = 1; v < V; ++v)
        if (row[v] > mx) mx = row[v], best = v;
      double se = 0.0;
      for (double v : row) se += std::exp(v - mx);
      nll += mx + std::log(se) - row[static_cast<std::size_t>(y)];
      hits += best == static_cast<std::size_t>(y);
      ++tokens;
    }
  }
  if (tokens == 0) throw ConfigError("evaluation set has no scored tokens");
  return {nll / static_cast<double>(tokens), static_cast<double>(hits) / static_cast<double>(tokens), tokens};
}

/// Mean over the batch of each sequence's mean token loss.
inline Tensor batch_loss(const Model& model, const std::vector<Example>& batch, bool training, Rng& rng) {
  Tensor total;
  for (const auto& ex : batch) {
    Tensor l = cross_entropy(model.forward(ex.ids, training, rng), ex.targets);
    total = total.defined() ? add(total, l) : l;
  }
  return scale(total, 1.0 / static_cast<double>(batch.size()));
}

struct TrainOptions {
  std::string metrics_csv;   // empty: not written
  std::string summary_json;  // empty: not written
  std::string checkpoint;    // empty: not written
  bool timing = false;       // fill tokens_per_second in the CSV
  std::ostream* log = nullptr;
};

struct TrainResult {
  Model model;
  std::vector<MetricsRow> rows;
  ParamCensus census;
  double tokens_per_second = 0.0;
  double wall_seconds = 0.0;
};

inline std::string metrics_csv(const std::vector<MetricsRow>& rows) {
  std::string s = std::string(kMetricsHeader) + "\n";
  for (const auto& r : rows) s += to_csv(r) + "\n";
  return s;
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write '" + path + "'");
  out << text;
  if (!out) throw Error("failed writing '" + path + "'");
}

inline std::vector<Example> eval_set(const RunConfig& cfg, const Dataset& data) {
  Rng rng(stream_seed(*cfg.seed, Stream::eval, 0));
  return data.batch(cfg.eval_batches * cfg.optimizer.batch_size, true, rng);
}

inline TrainResult train(const RunConfig& cfg, const TrainOptions& opt = {}) {
  validate(cfg);
  if (!cfg.seed) throw ConfigError("a seed is required for training");
  const std::uint64_t seed = *cfg.seed;
  const auto t0 = std::chrono::steady_clock::now();

  Dataset data(cfg);
  TrainResult res{Model(cfg.spec, stream_seed(seed, Stream::init, 0)), {}, {}, 0.0, 0.0};
  const Model& model = res.model;
  res.census = model.census();
  const std::vector<NamedTensor> params = model.parameters();
  const std::vector<Example> held_out = eval_set(cfg, data);
  const OptimizerConfig& o = cfg.optimizer;

  std::vector<std::vector<double>> velocity;
  if (o.momentum > 0.0)
    for (const auto& p : params) velocity.emplace_back(p.tensor.numel(), 0.0);

  auto batch_for = [&](std::size_t step) {
    Rng rng(stream_seed(seed, Stream::data, step));
    return data.batch(o.batch_size, false, rng);
  };

  double window_loss = 0.0;
  std::size_t window_steps = 0;
  std::uint64_t tokens_seen = 0;
  auto emit = [&](std::size_t step) {
    MetricsRow row;
    row.step = step;
    if (window_steps == 0) {
      NoGradScope no_grad;
      Rng rng(stream_seed(seed, Stream::jitter, step));
      row.train_loss = batch_loss(model, batch_for(step), false, rng).item();
    } else {
      row.train_loss = window_loss / static_cast<double>(window_steps);
    }
    EvalResult ev;
    try {
      ev = evaluate(model, held_out);
    } catch (const NumericError& e) {
      throw DivergenceError("non-finite eval loss at step " + std::to_string(step) + " (" + e.what() + ")", step);
    }
    row.eval_loss = ev.loss;
    row.eval_token_accuracy = ev.accuracy;
    row.parameter_census = res.census.total();
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (opt.timing && step > 0) row.tokens_per_second = static_cast<double>(tokens_seen) / secs;
    if (!std::isfinite(row.train_loss) || !std::isfinite(row.eval_loss))
      throw DivergenceError("non-finite loss at step " + std::to_string(step), step);
    if (opt.log)
      *opt.log << "step " << step << "  train " << format_double(row.train_loss) << "  eval "
               << format_double(row.eval_loss) << "  acc " << format_double(row.eval_token_accuracy) << "\n";
    res.rows.push_back(row);
    window_loss = 0.0;
    window_steps = 0;
  };

  emit(0);
  for (std::size_t step = 0; step < o.steps; ++step) {
    const std::vector<Example> batch = batch_for(step);
    Rng jitter(stream_seed(seed, Stream::jitter, step));
    Graph graph;
    double loss_value;
    {
      GraphScope scope(graph);
      std::optional<Tensor> loss;
      try {
        loss = batch_loss(model, batch, true, jitter);
      } catch (const NumericError& e) {
        throw DivergenceError("non-finite training loss at step " + std::to_string(step) + " (" + e.what() + ")",
                              step);
      }
      loss_value = loss->item();
      if (!std::isfinite(loss_value))
        throw DivergenceError("non-finite training loss at step " + std::to_string(step), step);
      model.zero_grad();
      graph.backward(*loss);
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor p = params[i].tensor;
      if (!p.has_grad()) continue;
      auto w = p.data();
      auto g = p.grad();
      if (o.momentum > 0.0) {
        auto& v = velocity[i];
        for (std::size_t k = 0; k < w.size(); ++k) {
          v[k] = o.momentum * v[k] + g[k];
          w[k] -= o.learning_rate * v[k];
        }
      } else {
        for (std::size_t k = 0; k < w.size(); ++k) w[k] -= o.learning_rate * g[k];
      }
    }
    for (const auto& ex : batch) tokens_seen += ex.ids.size();
    window_loss += loss_value;
    ++window_steps;
    const std::size_t done = step + 1;
    if (done % cfg.eval_interval == 0 || done == o.steps) emit(done);
  }
  model.zero_grad();

  res.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  res.tokens_per_second = res.wall_seconds > 0 ? static_cast<double>(tokens_seen) / res.wall_seconds : 0.0;

  if (!opt.metrics_csv.empty()) write_text_file(opt.metrics_csv, metrics_csv(res.rows));
  const std::string config_echo = to_json(cfg).dump();
  if (!opt.checkpoint.empty()) save_checkpoint(opt.checkpoint, params, config_echo);
  if (!opt.summary_json.empty()) {
    const CostReport cost = count_params(cfg.spec);
    const MetricsRow& last = res.rows.back();
    nlohmann::json s;
    s["config"] = to_json(cfg);
    s["parameter_census"] = {{"embedding", res.census.embedding},
                             {"non_embedding", res.census.non_embedding},
                             {"total", res.census.total()},
                             {"matches_cost_model", cost.embedding_params == res.census.embedding &&
                                                        cost.non_embedding_params == res.census.non_embedding}};
    s["initial"] = {{"train_loss", res.rows.front().train_loss}, {"eval_loss", res.rows.front().eval_loss}};
    s["final"] = {{"step", last.step},
                  {"train_loss", last.train_loss},
                  {"eval_loss", last.eval_loss},
                  {"eval_token_accuracy", last.eval_token_accuracy}};
    s["tokens_per_second"] = res.tokens_per_second;
    s["wall_seconds"] = res.wall_seconds;
    write_text_file(opt.summary_json, s.dump(2) + "\n");
  }
  return res;
}

}  // namespace altup::harness
