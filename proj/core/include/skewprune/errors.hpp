#pragma once

#include <stdexcept>
#include <string>

namespace skewprune {

/// Base class for all library errors. The CLI maps any Error to exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shape or dimension mismatch; the message names the offending shapes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Index out of range (labels, embedding ids, head/group ids).
class IndexError : public Error {
 public:
  using Error::Error;
};

/// Invalid argument value (empty dataset, too-short vector, bad range).
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// Invalid or inconsistent configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Operation not valid in the current state (missing capture, stale decision).
class StateError : public Error {
 public:
  using Error::Error;
};

/// Malformed checkpoint file; the message names the failing section.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Dataset ingestion failure; the message names the offending row or file.
class IngestError : public Error {
 public:
  using Error::Error;
};

/// Structural mismatch during federated aggregation; names the first
/// divergent tensor.
class AggregationError : public Error {
 public:
  using Error::Error;
};

}  // namespace skewprune
