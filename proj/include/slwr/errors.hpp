#pragma once

#include <stdexcept>
#include <string>

namespace slwr {

/// Bad numerical input (out-of-range density, position, ...). Maps to CLI exit 2.
class DomainError : public std::invalid_argument {
 public:
  explicit DomainError(const std::string& msg) : std::invalid_argument(msg) {}
};

/// Invalid configuration: CFL/stability violations, malformed files, bad flags.
/// Maps to CLI exit 2.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// A runtime check on model assumptions failed. Maps to CLI exit 1.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Numerical failure mid-computation (NaN in a simulation, mass drift in the
/// FPE solve, diverged training, ...). Maps to CLI exit 3.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace slwr
