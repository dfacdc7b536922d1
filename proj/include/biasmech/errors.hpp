#pragma once

#include <stdexcept>
#include <string>

namespace biasmech {

// Invalid parameters or configuration (CLI exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or schema-violating input data (CLI exit code 3).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Requested enumeration exceeds the supported covariate dimension.
class CapacityError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

// A closed form was evaluated at a zero denominator.
class SingularityError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Not enough usable rows to fit or score an estimator.
class EstimationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace biasmech
