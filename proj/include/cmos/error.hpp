#pragma once

#include <stdexcept>
#include <string>

namespace cmos {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes or out-of-contract extents.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf detected in checked mode, or a diverging loss.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed or mismatched file contents (tensor files, checkpoints, manifests).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Invalid argument values (labels out of range, bad landmarks, bad config).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

}  // namespace cmos
