#pragma once

#include <stdexcept>
#include <string>

namespace l2sa {

enum class ErrorKind { Shape, Value, Io, Format, Config, Numeric };

const char* to_string(ErrorKind kind);

// Base for every error raised by the library. The kind drives CLI exit codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// Raised when an operand's extent disagrees with what an operation expects.
// `dimension` names the offending axis ("channels", "height", "rank", ...).
class ShapeError : public Error {
 public:
  ShapeError(const std::string& op, const std::string& dimension, const std::string& detail)
      : Error(ErrorKind::Shape, op + ": " + dimension + " mismatch: " + detail),
        op_(op),
        dimension_(dimension) {}
  const std::string& op() const noexcept { return op_; }
  const std::string& dimension() const noexcept { return dimension_; }

 private:
  std::string op_;
  std::string dimension_;
};

}  // namespace l2sa
