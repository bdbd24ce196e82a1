#pragma once

#include <stdexcept>
#include <string>

namespace xlut {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or unsupported file/stream content.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Filesystem failures (missing file, unwritable path, short write).
class IoError : public Error {
 public:
  using Error::Error;
};

/// Operands whose dimensions do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A value outside the documented domain of a type or operation.
class InvariantError : public Error {
 public:
  using Error::Error;
};

/// Inputs for which a fit is not identifiable (e.g. a constant target).
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace xlut
