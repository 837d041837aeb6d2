#pragma once

#include <stdexcept>
#include <string>

namespace scdmd {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Vector or tensor lengths disagree with a spec.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Argument outside the domain of an operation (time ordering, empty sets).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Non-finite gradient handed to the optimizer; the state is left untouched.
class OptimizerError : public Error {
 public:
  using Error::Error;
};

/// Training diverged (non-finite loss, score or parameter).
class TrainingError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration; `what()` carries the offending key path.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint or metrics file could not be read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace scdmd
