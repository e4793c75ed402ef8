#pragma once

#include <stdexcept>
#include <string>

namespace cvfc {

/// Root of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes or extents.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Invalid argument value (out-of-range threshold, non-binary label, ...).
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// A NaN or Inf appeared in a tensor produced by an op.
class NumericError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

/// Unreadable, missing, or mis-sized dataset file.
class IngestError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class CorruptCheckpointError : public Error {
 public:
  using Error::Error;
};

class CheckpointVersionError : public CorruptCheckpointError {
 public:
  using CorruptCheckpointError::CorruptCheckpointError;
};

class TrainError : public Error {
 public:
  using Error::Error;
};

class EvalError : public Error {
 public:
  using Error::Error;
};

}  // namespace cvfc
