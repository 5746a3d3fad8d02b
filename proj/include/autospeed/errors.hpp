#pragma once

#include <stdexcept>
#include <string>

namespace autospeed {

// Bad input, configuration or usage. The CLI maps these to exit code 1.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Failures while doing valid work (I/O, numerics). The CLI maps these to exit code 2.
class RuntimeFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class ConfigError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class UsageError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class GeometryError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class AssemblyError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class FormatError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class StabilityError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class NumericalError : public RuntimeFailure {
 public:
  using RuntimeFailure::RuntimeFailure;
};

class GenerationError : public RuntimeFailure {
 public:
  using RuntimeFailure::RuntimeFailure;
};

class DivergenceError : public RuntimeFailure {
 public:
  using RuntimeFailure::RuntimeFailure;
};

class IoError : public RuntimeFailure {
 public:
  using RuntimeFailure::RuntimeFailure;
};

}  // namespace autospeed
