// Copyright 2026 The AltUp Toolkit Authors.
// SPDX-License-Identifier: Apache-2.0

// Run configuration: a JSON document with strict key checking, plus dotted
// `key=value` overrides applied before validation.

#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "altup/errors.hpp"
#include "altup/model.hpp"

namespace altup::harness {

using nlohmann::json;

enum class Task { char_lm, copy, reverse };

inline std::string_view task_name(Task t) {
  switch (t) {
    case Task::char_lm: return "char_lm";
    case Task::copy: return "copy";
    case Task::reverse: return "reverse";
  }
  return "?";
}

inline Task parse_task(std::string_view s) {
  for (Task t : {Task::char_lm, Task::copy, Task::reverse})
    if (task_name(t) == s) return t;
  throw ConfigError("unknown task '" + std::string(s) + "'");
}

struct TaskConfig {
  Task name = Task::copy;
  std::size_t seq_len = 16;     // tokens per training sequence
  std::size_t num_symbols = 8;  // alphabet of the synthetic tasks
  std::string corpus;           // char_lm only
  double eval_fraction = 0.1;   // held-out tail of the corpus
};

struct OptimizerConfig {
  double learning_rate = 0.1;
  double momentum = 0.0;
  std::size_t steps = 500;
  std::size_t batch_size = 4;
};

struct RunConfig {
  ModelSpec spec;
  TaskConfig task;
  OptimizerConfig optimizer;
  std::size_t eval_interval = 50;
  std::size_t eval_batches = 4;
  std::optional<std::uint64_t> seed;
};

namespace detail {

/// Object view that remembers which keys were read, so leftovers can be
/// reported as unknown.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be an object");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  template <class T>
  void get(const std::string& key, T& out) {
    if (!has(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(where(key) + ": wrong type (" + std::string(j_.at(key).type_name()) + ")");
    }
  }

  void get_size(const std::string& key, std::size_t& out) {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_number_integer() || (v.is_number_integer() && v.get<long long>() < 0))
      throw ConfigError(where(key) + ": expected a non-negative integer");
    out = v.get<std::size_t>();
  }

  Reader child(const std::string& key) {
    seen_.insert(key);
    return Reader(j_.at(key), where(key));
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError("unknown key '" + where(it.key()) + "'");
  }

 private:
  std::string where(const std::string& key = {}) const {
    if (key.empty()) return path_.empty() ? "config" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline Selection parse_selection(const std::string& s) {
  if (s == "same") return Selection::same;
  if (s == "alternating") return Selection::alternating;
  throw ConfigError("altup.selection: expected 'same' or 'alternating', got '" + s + "'");
}

inline LookupKind parse_lookup(const std::string& s) {
  if (s == "softmax") return LookupKind::softmax;
  if (s == "token_id") return LookupKind::token_id;
  if (s == "hyperplane_lsh") return LookupKind::hyperplane_lsh;
  if (s == "minhash") return LookupKind::minhash;
  throw ConfigError("memory.lookup: unknown lookup '" + s + "'");
}

inline ExpertKind parse_expert(const std::string& s) {
  if (s == "matrix") return ExpertKind::matrix;
  if (s == "constant") return ExpertKind::constant;
  throw ConfigError("memory.expert: expected 'matrix' or 'constant', got '" + s + "'");
}

/// Token count implied by a task: 256 bytes plus BOS and SEP for char_lm;
/// the alphabet plus BOS and SEP for the synthetic tasks.
inline std::size_t task_vocab(const TaskConfig& t) {
  return t.name == Task::char_lm ? 258 : t.num_symbols + 2;
}

}  // namespace detail

/// Applies `a.b.c=value`; the value is read as JSON when it parses, else as
/// a string.
inline void apply_override(json& doc, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0)
    throw ConfigError("override '" + std::string(assignment) + "' is not key=value");
  const std::string key(assignment.substr(0, eq));
  const std::string text(assignment.substr(eq + 1));
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("override key '" + key + "' has an empty component");
    if (!node->is_object()) throw ConfigError("override key '" + key + "' descends into a non-object");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

void validate(const RunConfig& cfg);

inline RunConfig parse_config(const json& doc) {
  RunConfig cfg;
  detail::Reader root(doc, "");
  std::string variant = "dense";
  root.get("variant", variant);
  cfg.spec.variant = parse_variant(variant);
  root.get("causal", cfg.spec.causal);
  if (root.has("seed")) {
    const json& s = doc.at("seed");
    if (!s.is_number_integer() || s.get<long long>() < 0) throw ConfigError("seed: expected a non-negative integer");
    cfg.seed = s.get<std::uint64_t>();
  }
  root.get_size("eval_interval", cfg.eval_interval);
  root.get_size("eval_batches", cfg.eval_batches);

  if (root.has("task")) {
    auto r = root.child("task");
    std::string name = "copy";
    r.get("name", name);
    cfg.task.name = parse_task(name);
    r.get_size("seq_len", cfg.task.seq_len);
    r.get_size("num_symbols", cfg.task.num_symbols);
    r.get("corpus", cfg.task.corpus);
    r.get("eval_fraction", cfg.task.eval_fraction);
    r.finish();
  }

  ModelConfig& m = cfg.spec.model;
  m.vocab_size = 0;
  if (root.has("model")) {
    auto r = root.child("model");
    r.get_size("d_model", m.d_model);
    r.get_size("n_layers", m.n_layers);
    r.get_size("n_heads", m.n_heads);
    r.get_size("ffn_hidden", m.ffn_hidden);
    r.get_size("vocab_size", m.vocab_size);
    r.get_size("max_seq_len", m.max_seq_len);
    r.finish();
  }
  const std::size_t vocab = detail::task_vocab(cfg.task);
  if (m.vocab_size == 0) m.vocab_size = vocab;
  if (m.vocab_size != vocab)
    throw ConfigError("model.vocab_size " + std::to_string(m.vocab_size) + " does not match task " +
                      std::string(task_name(cfg.task.name)) + " (" + std::to_string(vocab) + ")");

  if (root.has("altup")) {
    auto r = root.child("altup");
    AltUpSettings a;
    r.get_size("K", a.K);
    std::string sel = "alternating";
    r.get("selection", sel);
    a.selection = detail::parse_selection(sel);
    r.get_size("j_fixed", a.j_fixed);
    r.get("init_p_diag", a.init_p_diag);
    r.get("init_g", a.init_g);
    r.finish();
    cfg.spec.altup = a;
  }
  if (root.has("seq")) {
    auto r = root.child("seq");
    SeqSettings s;
    r.get_size("stride", s.stride);
    r.get_size("first_layer", s.first_layer);
    r.get("last_layer", s.last_layer);
    r.get("a1", s.a1);
    r.get("a2", s.a2);
    r.get("b", s.b);
    r.finish();
    cfg.spec.seq = s;
  }
  if (root.has("memory")) {
    auto r = root.child("memory");
    MemoryConfig mc;
    std::string lookup = "softmax", expert = "matrix";
    r.get("lookup", lookup);
    r.get("expert", expert);
    mc.lookup = detail::parse_lookup(lookup);
    mc.expert = detail::parse_expert(expert);
    r.get_size("n", mc.n);
    r.get_size("rank", mc.rank);
    r.get_size("top_k", mc.top_k);
    r.get("jitter_eps", mc.jitter_eps);
    r.get_size("lsh_projections", mc.lsh_projections);
    r.get("lsh_width", mc.lsh_width);
    r.get_size("minhash_window", mc.minhash_window);
    r.get("layers", cfg.spec.memory_layers);
    r.finish();
    cfg.spec.memory = mc;
  }
  if (root.has("optimizer")) {
    auto r = root.child("optimizer");
    r.get("learning_rate", cfg.optimizer.learning_rate);
    r.get("momentum", cfg.optimizer.momentum);
    r.get_size("steps", cfg.optimizer.steps);
    r.get_size("batch_size", cfg.optimizer.batch_size);
    r.finish();
  }
  root.finish();
  validate(cfg);
  return cfg;
}

inline void validate(const RunConfig& cfg) {
  cfg.spec.validate();
  const TaskConfig& t = cfg.task;
  if (t.name == Task::char_lm) {
    if (t.corpus.empty()) throw ConfigError("task.corpus is required for char_lm");
    if (t.seq_len < 2) throw ConfigError("task.seq_len must be >= 2");
    if (!(t.eval_fraction > 0.0 && t.eval_fraction < 1.0)) throw ConfigError("task.eval_fraction must be in (0,1)");
  } else {
    if (!t.corpus.empty()) throw ConfigError("task.corpus is only used by char_lm");
    if (t.num_symbols < 2) throw ConfigError("task.num_symbols must be >= 2");
    if (t.seq_len < 4 || t.seq_len % 2 != 0) throw ConfigError("task.seq_len must be even and >= 4 for copy/reverse");
  }
  if (t.seq_len > cfg.spec.model.max_seq_len)
    throw ConfigError("task.seq_len " + std::to_string(t.seq_len) + " exceeds model.max_seq_len " +
                      std::to_string(cfg.spec.model.max_seq_len));
  const OptimizerConfig& o = cfg.optimizer;
  if (!(o.learning_rate > 0.0)) throw ConfigError("optimizer.learning_rate must be > 0");
  if (!(o.momentum >= 0.0 && o.momentum < 1.0)) throw ConfigError("optimizer.momentum must be in [0,1)");
  if (o.batch_size == 0) throw ConfigError("optimizer.batch_size must be >= 1");
  if (cfg.eval_interval == 0) throw ConfigError("eval_interval must be >= 1");
  if (cfg.eval_batches == 0) throw ConfigError("eval_batches must be >= 1");
}

inline json to_json(const RunConfig& cfg) {
  const ModelSpec& s = cfg.spec;
  json j;
  j["variant"] = variant_name(s.variant);
  j["causal"] = s.causal;
  if (cfg.seed) j["seed"] = *cfg.seed;
  j["eval_interval"] = cfg.eval_interval;
  j["eval_batches"] = cfg.eval_batches;
  j["model"] = {{"d_model", s.model.d_model},       {"n_layers", s.model.n_layers},
                {"n_heads", s.model.n_heads},       {"ffn_hidden", s.model.ffn_hidden},
                {"vocab_size", s.model.vocab_size}, {"max_seq_len", s.model.max_seq_len}};
  j["task"] = {{"name", task_name(cfg.task.name)}, {"seq_len", cfg.task.seq_len}};
  if (cfg.task.name == Task::char_lm) {
    j["task"]["corpus"] = cfg.task.corpus;
    j["task"]["eval_fraction"] = cfg.task.eval_fraction;
  } else {
    j["task"]["num_symbols"] = cfg.task.num_symbols;
  }
  j["optimizer"] = {{"learning_rate", cfg.optimizer.learning_rate},
                    {"momentum", cfg.optimizer.momentum},
                    {"steps", cfg.optimizer.steps},
                    {"batch_size", cfg.optimizer.batch_size}};
  if (s.altup)
    j["altup"] = {{"K", s.altup->K},
                  {"selection", s.altup->selection == Selection::same ? "same" : "alternating"},
                  {"j_fixed", s.altup->j_fixed},
                  {"init_p_diag", s.altup->init_p_diag},
                  {"init_g", s.altup->init_g}};
  if (s.seq)
    j["seq"] = {{"stride", s.seq->stride}, {"first_layer", s.seq->first_layer}, {"last_layer", s.seq->last_layer},
                {"a1", s.seq->a1},         {"a2", s.seq->a2},                   {"b", s.seq->b}};
  if (s.memory) {
    static constexpr const char* lookups[] = {"softmax", "token_id", "hyperplane_lsh", "minhash"};
    const MemoryConfig& m = *s.memory;
    j["memory"] = {{"lookup", lookups[static_cast<int>(m.lookup)]},
                   {"expert", m.expert == ExpertKind::matrix ? "matrix" : "constant"},
                   {"n", m.n},
                   {"rank", m.rank},
                   {"top_k", m.top_k},
                   {"jitter_eps", m.jitter_eps},
                   {"lsh_projections", m.lsh_projections},
                   {"lsh_width", m.lsh_width},
                   {"minhash_window", m.minhash_window},
                   {"layers", s.memory_layers}};
  }
  return j;
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  json doc = json::parse(in, nullptr, false);
  if (doc.is_discarded()) throw ConfigError("config '" + path + "' is not valid JSON");
  return doc;
}

/// Reads `path` (or starts from an empty document) and applies overrides.
inline RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  json doc = path.empty() ? json::object() : read_json_file(path);
  for (const auto& o : overrides) apply_override(doc, o);
  return parse_config(doc);
}

}  // namespace altup::harness
