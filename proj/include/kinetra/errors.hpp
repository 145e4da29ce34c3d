#pragma once

#include <stdexcept>
#include <string>

namespace kinetra {

// Error taxonomy shared by the whole library.  The CLI maps these onto
// process exit codes: ConfigError -> 2, InstabilityError -> 3, IoError -> 4.

// Bad user input: invalid knob values, inconsistent shapes, unknown keys.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Array shape or grid mismatch detected at an API boundary.
struct DimensionError : ConfigError {
  using ConfigError::ConfigError;
};

// A metric asked for on degenerate input (e.g. an all-zero exact table).
struct MetricError : ConfigError {
  using ConfigError::ConfigError;
};

// Numerical failure: NaN/Inf states, diverged training, collapsed scales.
struct InstabilityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// eps_pred left its representable range (underflow below 1e-8).
struct ScaleError : InstabilityError {
  using InstabilityError::InstabilityError;
};

// Non-finite model output; message names the offending scale.
struct OverflowError : InstabilityError {
  using InstabilityError::InstabilityError;
};

// A sparse regression eliminated every column.
struct EmptyModelError : InstabilityError {
  using InstabilityError::InstabilityError;
};

// Filesystem problems: unreadable, unwritable, short read.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Structurally bad file content: wrong magic, unknown version, junk keys.
struct FormatError : IoError {
  using IoError::IoError;
};

inline void require(bool ok, const std::string& what) {
  if (!ok) throw DimensionError(what);
}

}  // namespace kinetra
