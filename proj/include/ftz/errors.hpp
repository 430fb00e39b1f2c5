#pragma once

#include <stdexcept>
#include <string>

namespace ftz {

// Error categories used across the library. Everything derives from
// ftz::Error so callers can catch the whole family at the CLI boundary.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape/extent mismatches between tensors.
struct DimensionError : Error {
  using Error::Error;
};

// Invalid model/run configuration (head divisibility, unknown namespace,
// illegal fusion-point count, ...).
struct ConfigurationError : Error {
  using Error::Error;
};

// Checkpoint-file problems: bad magic, truncation, duplicate or missing
// tensor names.
struct CheckpointError : Error {
  using Error::Error;
};

// Out-of-range ids (class targets, token ids).
struct IndexError : Error {
  using Error::Error;
};

// Malformed caller-supplied input (raster size, unknown vocabulary word).
struct InputError : Error {
  using Error::Error;
};

// Sequence length overflow.
struct LengthError : Error {
  using Error::Error;
};

// Filesystem failures, surfaced with path context.
struct IoError : Error {
  using Error::Error;
};

}  // namespace ftz
