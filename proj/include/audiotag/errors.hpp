#pragma once

#include <stdexcept>
#include <string>

namespace audiotag {

// Error taxonomy shared across the toolkit. The CLI maps these onto its
// exit-code contract: ConfigError/ShapeError -> 2, DataError -> 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration or usage (bad flag combinations, out-of-range values).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Unreadable, undecodable, corrupt or inconsistent input data.
class DataError : public Error {
 public:
  using Error::Error;
};

// Tensor/axis dimension mismatches.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Non-finite values where finite ones are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace audiotag
