// Error types shared by every lcbnet module.
#pragma once

#include <stdexcept>
#include <string>

namespace lcbnet {

// Caller broke a documented precondition (non-scalar backward, bad id, ...).
class ContractError : public std::logic_error {
 public:
  explicit ContractError(const std::string& what) : std::logic_error(what) {}
};

// Operand shapes do not agree.
class DimensionError : public std::invalid_argument {
 public:
  explicit DimensionError(const std::string& what)
      : std::invalid_argument(what) {}
};

// Invalid configuration value. The CLI maps this to exit code 2.
class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(const std::string& what)
      : std::invalid_argument(what) {}
};

// Bad input data or unreadable files. The CLI maps this to exit code 3.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

// Input that is well-formed but unusable (e.g. too few frames).
class InputError : public DataError {
 public:
  explicit InputError(const std::string& what) : DataError(what) {}
};

}  // namespace lcbnet
