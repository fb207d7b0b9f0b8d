// Copyright 2026 The AltUp Toolkit Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace altup {

/// Base of every error thrown by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not satisfy a primitive's contract.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A value fell outside its documented domain (token id, index, parameter).
class RangeError : public Error {
 public:
  using Error::Error;
};

/// NaN or infinity where a finite value is required.
class NumericError : public Error {
 public:
  NumericError(const std::string& what, std::string name)
      : Error(what), name_(std::move(name)) {}
  const std::string& name() const noexcept { return name_; }

 private:
  std::string name_;
};

/// Invalid or inconsistent run configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::size_t step) : Error(what), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

/// Misuse of the autodiff graph (non-scalar loss, loss not recorded, ...).
class GraphError : public Error {
 public:
  using Error::Error;
};

/// A checkpoint file could not be read back.
class CheckpointError : public Error {
 public:
  using Error::Error;
};

/// The file does not start with the checkpoint magic bytes.
class BadMagicError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

/// The file was written by an incompatible format version.
class VersionMismatchError : public CheckpointError {
 public:
  VersionMismatchError(const std::string& what, std::uint32_t found)
      : CheckpointError(what), found_(found) {}
  std::uint32_t found() const noexcept { return found_; }

 private:
  std::uint32_t found_;
};

/// The file ends before the header or payload is complete.
class TruncatedError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

/// A stored tensor does not match the model it is loaded into.
class TensorMismatchError : public CheckpointError {
 public:
  TensorMismatchError(const std::string& what, std::string tensor)
      : CheckpointError(what), tensor_(std::move(tensor)) {}
  const std::string& tensor() const noexcept { return tensor_; }

 private:
  std::string tensor_;
};

}  // namespace altup
