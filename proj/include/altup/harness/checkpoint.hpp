// Copyright 2026 The AltUp Toolkit Authors.
// SPDX-License-Identifier: Apache-2.0

// Binary checkpoint format, all integers and floats little-endian:
//
//   "ALTUPCKP"                       8-byte magic
//   u32 version
//   u64 config length, config JSON bytes
//   u64 tensor count
//   per tensor: u32 name length, name, u32 rank, u64 dims[rank]
//   payload: f64 values of every tensor, row-major, in header order

#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include "altup/errors.hpp"
#include "altup/grad_check.hpp"
#include "altup/tensor.hpp"

namespace altup::harness {

inline constexpr std::array<char, 8> kCheckpointMagic{'A', 'L', 'T', 'U', 'P', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointEntry {
  std::string name;
  Shape shape;
};

struct CheckpointFile {
  std::uint32_t version = kCheckpointVersion;
  std::string config;  // JSON echo of the run configuration
  std::vector<CheckpointEntry> entries;
  std::vector<double> payload;
};

namespace detail {

template <class U>
void put_le(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class ByteReader {
 public:
  ByteReader(std::string_view bytes, std::string source) : bytes_(bytes), source_(std::move(source)) {}

  template <class U>
  U get(const char* what) {
    need(sizeof(U), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i)
      v |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += sizeof(U);
    return v;
  }

  std::string_view take(std::size_t n, const char* what) {
    need(n, what);
    std::string_view s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n)
      throw TruncatedError("checkpoint '" + source_ + "' truncated while reading " + what + " at byte " +
                           std::to_string(pos_) + " (need " + std::to_string(n) + ", have " +
                           std::to_string(bytes_.size() - pos_) + ")");
  }

  std::string_view bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_checkpoint(const std::vector<NamedTensor>& params, std::string_view config) {
  std::string out(kCheckpointMagic.begin(), kCheckpointMagic.end());
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  detail::put_le<std::uint64_t>(out, config.size());
  out.append(config);
  detail::put_le<std::uint64_t>(out, params.size());
  for (const auto& p : params) {
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
    out.append(p.name);
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.tensor.rank()));
    for (std::size_t dim : p.tensor.shape()) detail::put_le<std::uint64_t>(out, dim);
  }
  for (const auto& p : params)
    for (double v : p.tensor.data()) detail::put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  return out;
}

inline CheckpointFile decode_checkpoint(std::string_view bytes, const std::string& source = "<memory>") {
  detail::ByteReader r(bytes, source);
  if (bytes.size() < kCheckpointMagic.size() ||
      std::memcmp(bytes.data(), kCheckpointMagic.data(), kCheckpointMagic.size()) != 0)
    throw BadMagicError("checkpoint '" + source + "' does not start with the ALTUPCKP magic");
  r.take(kCheckpointMagic.size(), "magic");
  CheckpointFile f;
  f.version = r.get<std::uint32_t>("version");
  if (f.version != kCheckpointVersion)
    throw VersionMismatchError("checkpoint '" + source + "' has format version " + std::to_string(f.version) +
                                   ", expected " + std::to_string(kCheckpointVersion),
                               f.version);
  const auto config_len = r.get<std::uint64_t>("config length");
  f.config = std::string(r.take(config_len, "config"));
  const auto count = r.get<std::uint64_t>("tensor count");
  std::uint64_t total = 0;
  for (std::uint64_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    const auto name_len = r.get<std::uint32_t>("tensor name length");
    e.name = std::string(r.take(name_len, "tensor name"));
    const auto rank = r.get<std::uint32_t>("tensor rank");
    std::uint64_t n = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      e.shape.push_back(r.get<std::uint64_t>("tensor shape"));
      n *= e.shape.back();
    }
    total += n;
    f.entries.push_back(std::move(e));
  }
  if (r.remaining() < total * 8)
    throw TruncatedError("checkpoint '" + source + "' payload truncated: expected " + std::to_string(total * 8) +
                         " bytes, found " + std::to_string(r.remaining()));
  if (r.remaining() > total * 8)
    throw CheckpointError("checkpoint '" + source + "' has " + std::to_string(r.remaining() - total * 8) +
                          " trailing bytes after the payload");
  f.payload.resize(total);
  for (auto& v : f.payload) v = std::bit_cast<double>(r.get<std::uint64_t>("payload"));
  return f;
}

/// Copies a decoded checkpoint into `params`, which must match it name by
/// name and shape by shape.
inline void restore(const CheckpointFile& f, const std::vector<NamedTensor>& params) {
  if (f.entries.size() != params.size())
    throw TensorMismatchError("checkpoint holds " + std::to_string(f.entries.size()) + " tensors, model has " +
                                  std::to_string(params.size()),
                              f.entries.size() < params.size() ? params[f.entries.size()].name
                                                               : f.entries[params.size()].name);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& e = f.entries[i];
    const auto& p = params[i];
    if (e.name != p.name)
      throw TensorMismatchError("checkpoint tensor " + std::to_string(i) + " is '" + e.name + "', model expects '" +
                                    p.name + "'",
                                p.name);
    if (e.shape != p.tensor.shape())
      throw TensorMismatchError("tensor '" + p.name + "' has shape " + to_string(e.shape) + " in the checkpoint, " +
                                    to_string(p.tensor.shape()) + " in the model",
                                p.name);
  }
  std::size_t off = 0;
  for (const auto& p : params) {
    Tensor t = p.tensor;
    auto dst = t.data();
    std::copy_n(f.payload.begin() + static_cast<std::ptrdiff_t>(off), dst.size(), dst.begin());
    off += dst.size();
  }
}

inline void save_checkpoint(const std::string& path, const std::vector<NamedTensor>& params, std::string_view config) {
  const std::string bytes = encode_checkpoint(params, config);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write checkpoint '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing checkpoint '" + path + "'");
}

inline CheckpointFile read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes, path);
}

/// Reads `path` into `params`; returns the stored config echo.
inline std::string load_checkpoint(const std::string& path, const std::vector<NamedTensor>& params) {
  CheckpointFile f = read_checkpoint(path);
  restore(f, params);
  return f.config;
}

}  // namespace altup::harness
