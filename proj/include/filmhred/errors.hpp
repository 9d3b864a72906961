// SPDX-License-Identifier: Apache-2.0
//
// Exception hierarchy. The CLI maps each family onto an exit code:
// ConfigError -> 1, DataError -> 2, NumericError/ShapeError -> 3.

#pragma once

#include <stdexcept>
#include <string>

namespace fh {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not conform to a primitive's rule.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf encountered, or a numeric precondition violated.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Invalid user configuration or command-line usage.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or missing input data.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Binary container failures. Each kind is distinguishable so callers can
/// tell a corrupted file from a truncated one.
class FormatError : public DataError {
 public:
  enum class Kind { kBadMagic, kVersionMismatch, kTruncated, kChecksum, kMalformed };

  FormatError(Kind kind, const std::string& what) : DataError(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

}  // namespace fh
