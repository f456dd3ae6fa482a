#pragma once

#include <stdexcept>
#include <string>

namespace fpad {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape disagreement between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Invalid model or run configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Caller misuse: bad arguments, empty inputs, out-of-range labels.
class UsageError : public Error {
 public:
  using Error::Error;
};

// Data that violates the live + synthetic training protocol.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf or otherwise unusable numbers.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Input that makes a quantity undefined (e.g. normalizing a zero vector).
class DegenerateInputError : public NumericError {
 public:
  using NumericError::NumericError;
};

}  // namespace fpad
