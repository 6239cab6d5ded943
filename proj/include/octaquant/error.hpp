#pragma once

#include <stdexcept>
#include <string>

namespace octaquant {

/// Base for every error raised by the library. The CLI maps the subclasses
/// onto distinct exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor / raster extents that do not fit together.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Malformed or unreadable file content.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Filesystem failures (open, write, rename).
class IoError : public Error {
 public:
  using Error::Error;
};

/// Numerical failure: non-finite values, degenerate inputs.
class ComputeError : public Error {
 public:
  using Error::Error;
};

/// Invalid argument or configuration value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace octaquant
