#pragma once

#include <stdexcept>
#include <string>

namespace lookwhen {

// Base of every error the core throws. The C API maps each subclass onto a
// status code, and the CLI maps those onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad argument or configuration supplied by the caller.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Shapes that do not fit together.
class DimensionError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

// Malformed or missing file contents.
class DataError : public Error {
 public:
  using Error::Error;
};

// A computation produced NaN/Inf or was otherwise numerically undefined.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace lookwhen
