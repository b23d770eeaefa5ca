#pragma once

#include <stdexcept>
#include <string>

namespace kqg {

/// Raised when operand shapes do not line up.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// NaN/Inf produced or consumed by a numerical routine.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Malformed input file; carries the 1-based line number when known.
struct ParseError : std::runtime_error {
  ParseError(const std::string& what, std::size_t line = 0)
      : std::runtime_error(line ? what + " (line " + std::to_string(line) + ")" : what),
        line(line) {}
  std::size_t line;
};

/// Input that is well-formed but violates a documented precondition.
struct ValidationError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

}  // namespace kqg
