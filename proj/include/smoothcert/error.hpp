#pragma once

#include <stdexcept>
#include <string>

namespace smoothcert {

/// Argument outside the mathematical domain of an operation (p = 0 or 1 for a
/// quantile, an infeasible constraint set, mismatched shapes, ...).
class DomainError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Inconsistent configuration handed to the engine or the CLI.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// File could not be read, written or parsed.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace smoothcert
