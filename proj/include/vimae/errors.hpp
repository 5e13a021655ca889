#pragma once

#include <stdexcept>
#include <string>

namespace vimae {

/// Root of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shapes or widths that do not line up.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A documented precondition was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Combination of options that has no defined meaning (e.g. analytic KL
/// against a logistic prior).
class UnsupportedError : public Error {
 public:
  using Error::Error;
};

/// Malformed file contents (bad magic, bad header).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// File shorter than its header says.
class LengthError : public Error {
 public:
  using Error::Error;
};

/// Two inputs that must agree (image/label counts) do not.
class ConsistencyError : public Error {
 public:
  using Error::Error;
};

class VersionError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// NaN or Inf where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace vimae
