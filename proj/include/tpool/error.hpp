// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace tpool {

/// Base class of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input text or bytes (bad row width, non-integer label, ...).
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Well-formed input whose values violate a data invariant.
class DataError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class TrainError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint header, version or checksum problems.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace tpool
