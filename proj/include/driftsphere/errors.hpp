#pragma once

#include <stdexcept>
#include <string>

namespace driftsphere {

// Argument outside the mathematical domain of a function (e.g. log_gamma(-1)).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Caller violated a documented precondition (non-tangent vector, bad k, ...).
class PreconditionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Mismatched dimensions or matrix shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A density evaluated at its pole, where it diverges.
class SingularityError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Zero resultant, empty selection, or any other degenerate geometry.
class DegenerateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite values produced during a computation.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed serialized input. what() carries the line number when known.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& msg, long line = -1)
      : std::runtime_error(line >= 0 ? "line " + std::to_string(line) + ": " + msg : msg),
        line_(line) {}
  long line() const { return line_; }

 private:
  long line_;
};

// Invalid or unknown configuration values.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A required input file does not exist or cannot be opened.
class MissingInputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace driftsphere
