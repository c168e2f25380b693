#pragma once

#include <stdexcept>
#include <string>

namespace wagemix {

// Invalid configuration or arguments. CLI exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input data that violates a precondition. CLI exit code 3.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Singular systems, non-finite likelihoods, failed convergence. CLI exit code 4.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace wagemix
