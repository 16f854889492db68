#pragma once

#include <stdexcept>
#include <string>

namespace advcal {

/// Raised when a theorem checker is handed a loss or class whose
/// preconditions are not met (or not certified).
class PreconditionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised by margin search or other numerical routines that fail to meet
/// their stated tolerance.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Configuration / descriptor parse failure with a 1-based source location.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(const std::string& message, int line = 0, int column = 0)
      : std::invalid_argument(format(message, line, column)),
        line_(line),
        column_(column) {}

  int line() const noexcept { return line_; }
  int column() const noexcept { return column_; }

 private:
  static std::string format(const std::string& message, int line, int column) {
    if (line <= 0) return message;
    return "line " + std::to_string(line) + ", column " +
           std::to_string(column) + ": " + message;
  }

  int line_;
  int column_;
};

}  // namespace advcal
