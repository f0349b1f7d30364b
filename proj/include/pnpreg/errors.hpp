#pragma once

#include <stdexcept>
#include <string>

namespace pnpreg {

// Root of every exception thrown by the library. The CLI maps these to
// exit codes; anything else escaping is treated as a runtime failure.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes or extents.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A value outside the accepted domain (even kernel, bad factor, ...).
class ArgumentError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf encountered in a computation.
class NumericError : public Error {
 public:
  using Error::Error;
};

// A prior was asked for a capability it does not have.
class UnsupportedOperation : public Error {
 public:
  using Error::Error;
};

// Malformed input file. `offset` is the byte position where parsing failed.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

// Iterative linear solve did not reach its tolerance.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, double residual)
      : Error(what), residual_(residual) {}

  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

}  // namespace pnpreg
