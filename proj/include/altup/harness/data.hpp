// Copyright 2026 The AltUp Toolkit Authors.
// SPDX-License-Identifier: Apache-2.0

// Byte tokenizer, corpus loading and the three training tasks.

#pragma once

#include <cstddef>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include "altup/errors.hpp"
#include "altup/harness/config.hpp"
#include "altup/rng.hpp"

namespace altup::harness {

/// Byte vocabulary: ids 0..255 are bytes, then two specials.
inline constexpr int kByteBos = 256;
inline constexpr int kByteSep = 257;
inline constexpr std::size_t kByteVocab = 258;

/// Synthetic-task vocabulary: two specials, then the alphabet.
inline constexpr int kTaskBos = 0;
inline constexpr int kTaskSep = 1;
inline constexpr int kTaskFirstSymbol = 2;

/// Offset of the first malformed UTF-8 sequence, or npos.
inline std::size_t find_invalid_utf8(std::string_view s) {
  std::size_t i = 0;
  const std::size_t n = s.size();
  while (i < n) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t len;
    std::uint32_t cp;
    if (c < 0x80) {
      ++i;
      continue;
    } else if ((c & 0xE0) == 0xC0) {
      len = 2;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      len = 3;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      len = 4;
      cp = c & 0x07;
    } else {
      return i;
    }
    if (i + len > n) return i;
    for (std::size_t k = 1; k < len; ++k) {
      const auto cc = static_cast<unsigned char>(s[i + k]);
      if ((cc & 0xC0) != 0x80) return i;
      cp = (cp << 6) | (cc & 0x3F);
    }
    const bool overlong = (len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) || (len == 4 && cp < 0x10000);
    if (overlong || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) return i;
    i += len;
  }
  return std::string_view::npos;
}

inline std::vector<int> tokenize_bytes(std::string_view text) {
  std::vector<int> ids;
  ids.reserve(text.size());
  for (char c : text) ids.push_back(static_cast<unsigned char>(c));
  return ids;
}

inline std::vector<int> load_corpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("corpus '" + path + "' cannot be opened");
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (text.empty()) throw ConfigError("corpus '" + path + "' is empty");
  if (auto bad = find_invalid_utf8(text); bad != std::string_view::npos)
    throw ConfigError("corpus '" + path + "' is not valid UTF-8 (byte offset " + std::to_string(bad) + ")");
  return tokenize_bytes(text);
}

/// One sequence with next-token targets; -1 marks positions without loss.
struct Example {
  std::vector<int> ids;
  std::vector<int> targets;
};

/// [BOS, s_1..s_m, SEP, t_1..t_m] where t is s (copy) or s reversed; only
/// the answer half is scored.
inline Example make_sequence_task(Task task, std::size_t seq_len, std::size_t num_symbols, Rng& rng) {
  const std::size_t m = (seq_len - 2) / 2;
  std::uniform_int_distribution<int> sym(kTaskFirstSymbol, kTaskFirstSymbol + static_cast<int>(num_symbols) - 1);
  std::vector<int> s(m);
  for (int& v : s) v = sym(rng);
  Example ex;
  ex.ids.push_back(kTaskBos);
  ex.ids.insert(ex.ids.end(), s.begin(), s.end());
  ex.ids.push_back(kTaskSep);
  if (task == Task::reverse) ex.ids.insert(ex.ids.end(), s.rbegin(), s.rend());
  else ex.ids.insert(ex.ids.end(), s.begin(), s.end());
  const std::size_t T = ex.ids.size();
  ex.targets.assign(T, -1);
  for (std::size_t i = m + 1; i + 1 < T; ++i) ex.targets[i] = ex.ids[i + 1];
  return ex;
}

class Dataset {
 public:
  explicit Dataset(const RunConfig& cfg) : task_(cfg.task) {
    if (task_.name != Task::char_lm) return;
    std::vector<int> corpus = load_corpus(task_.corpus);
    const auto split = static_cast<std::size_t>(static_cast<double>(corpus.size()) * (1.0 - task_.eval_fraction));
    train_.assign(corpus.begin(), corpus.begin() + static_cast<std::ptrdiff_t>(split));
    eval_.assign(corpus.begin() + static_cast<std::ptrdiff_t>(split), corpus.end());
    if (train_.size() <= task_.seq_len || eval_.size() <= task_.seq_len)
      throw ConfigError("corpus '" + task_.corpus + "' is too short for seq_len " + std::to_string(task_.seq_len) +
                        " (train " + std::to_string(train_.size()) + ", eval " + std::to_string(eval_.size()) +
                        " bytes)");
  }

  Example sample_train(Rng& rng) const { return sample(train_, rng); }
  Example sample_eval(Rng& rng) const { return sample(eval_, rng); }

  std::vector<Example> batch(std::size_t n, bool eval, Rng& rng) const {
    std::vector<Example> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(eval ? sample_eval(rng) : sample_train(rng));
    return out;
  }

 private:
  Example sample(const std::vector<int>& text, Rng& rng) const {
    if (task_.name != Task::char_lm) return make_sequence_task(task_.name, task_.seq_len, task_.num_symbols, rng);
    const std::size_t T = task_.seq_len;
    std::uniform_int_distribution<std::size_t> start(0, text.size() - T - 1);
    const std::size_t s = start(rng);
    Example ex;
    ex.ids.assign(text.begin() + static_cast<std::ptrdiff_t>(s), text.begin() + static_cast<std::ptrdiff_t>(s + T));
    ex.targets.assign(text.begin() + static_cast<std::ptrdiff_t>(s + 1),
                      text.begin() + static_cast<std::ptrdiff_t>(s + T + 1));
    return ex;
  }

  TaskConfig task_;
  std::vector<int> train_, eval_;
};

}  // namespace altup::harness
