#pragma once

#include <stdexcept>
#include <string>

namespace dmac {

// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor extents do not fit the operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// An argument is outside its admissible range.
class ParameterError : public Error {
 public:
  using Error::Error;
};

// Input data violates a documented contract (labels, masks, probabilities).
class ValidationError : public Error {
 public:
  using Error::Error;
};

// A NaN or Inf appeared in a forward or backward pass.
class NumericError : public Error {
 public:
  using Error::Error;
};

// A metric is undefined for the supplied data (e.g. single-class ROC).
class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

// Rejection sampling ran out of retries.
class ProgressError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Checkpoint loading failures. Each cause has its own type so callers can
// tell a stale file from a damaged one.
class LoadError : public Error {
 public:
  using Error::Error;
};

class VersionError : public LoadError {
 public:
  using LoadError::LoadError;
};

class ParseError : public LoadError {
 public:
  using LoadError::LoadError;
};

class TruncatedError : public LoadError {
 public:
  using LoadError::LoadError;
};

class ShapeMismatchError : public LoadError {
 public:
  using LoadError::LoadError;
};

}  // namespace dmac
