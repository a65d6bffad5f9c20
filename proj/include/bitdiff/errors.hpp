// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace bitdiff {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad argument value: invalid vocabulary, out-of-range id or noise level,
/// zero counts where at least one is required.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Requested enumeration or allocation exceeds the configured cap.
class CapacityError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values or divergence.
class NumericError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// An input file (config, checkpoint, dataset) could not be opened.
class MissingFileError : public Error {
 public:
  using Error::Error;
};

/// A schedule query was made before any error record landed in a bin.
class UninitializedScheduleError : public Error {
 public:
  using Error::Error;
};

}  // namespace bitdiff
