#pragma once

#include <stdexcept>
#include <string>

namespace vipflow {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Mismatched dimensions between operands.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// File missing, unreadable, or malformed.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Invalid user-supplied configuration or precondition violation.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values produced during a numerical routine.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace vipflow
