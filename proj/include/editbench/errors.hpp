#pragma once

#include <stdexcept>
#include <string>

namespace editbench {

/// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor/layer shapes do not conform. Message carries the offending shapes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A primitive op produced a NaN or infinity.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Caller violated a precondition (bad layer index, empty dataset, ...).
class UsageError : public Error {
 public:
  using Error::Error;
};

/// A serialized file is corrupt, truncated, or has an incompatible version.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Optimization diverged (non-finite loss). Carries the step at which it happened.
class TrainingError : public Error {
 public:
  TrainingError(const std::string& msg, int step) : Error(msg), step_(step) {}
  int step() const { return step_; }

 private:
  int step_ = -1;
};

/// Filesystem problem while reading or writing artifacts.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace editbench
