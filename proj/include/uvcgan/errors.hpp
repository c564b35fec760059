#pragma once

#include <stdexcept>
#include <string>

namespace uvcgan {

/// Tensor or array dimensions disagree with what an operation requires.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed, unknown or out-of-range configuration value.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A checkpoint was written by a run whose configuration differs from the
/// one trying to load it.
class ConfigMismatchError : public std::runtime_error {
 public:
  ConfigMismatchError(std::string expected_hash, std::string found_hash)
      : std::runtime_error("checkpoint config mismatch: expected " + expected_hash +
                           ", found " + found_hash),
        expected(std::move(expected_hash)),
        found(std::move(found_hash)) {}

  std::string expected;
  std::string found;
};

/// Training produced a NaN/Inf loss. `snapshot` holds the offending step's
/// metrics as JSON.
class NonFiniteLossError : public std::runtime_error {
 public:
  NonFiniteLossError(const std::string& what, std::string snapshot_json)
      : std::runtime_error(what), snapshot(std::move(snapshot_json)) {}

  std::string snapshot;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace uvcgan
