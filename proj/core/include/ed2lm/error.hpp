#pragma once

#include <stdexcept>
#include <string>

namespace ed2lm {

// Base class for every error raised by the library. Subclasses name the
// category so callers (and the CLI) can report a stable error kind.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* kind() const noexcept { return "error"; }
};

// Inconsistent hyperparameters or tensor shapes that contradict a config.
class ConfigError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "config_error"; }
};

// Malformed or out-of-range user input (sequence too long, bad token id...).
class InputError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "input_error"; }
};

// NaN/Inf where finite values are required, or training divergence.
class NumericError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "numeric_error"; }
};

// A key (doc id, query id, tensor name) that is not present.
class LookupError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "lookup_error"; }
};

// A binary artifact with the wrong magic, truncated payload or bad layout.
class FormatError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "incompatible_artifact"; }
};

// Matrix shape does not match what an operation requires.
class ShapeError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "shape_error"; }
};

}  // namespace ed2lm
