#pragma once

#include <stdexcept>
#include <string>

namespace ridgematch {

// Base of every error the library throws. The CLI maps the subclasses onto
// exit codes (usage 2, data/protocol 3, numeric 4).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Zero-norm embedding or empty pooling input.
class DegenerateError : public Error {
 public:
  using Error::Error;
};

class ProtocolError : public Error {
 public:
  using Error::Error;
};

// Bad input data: unreadable images, size mismatches, out-of-range pixels.
class DataError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

// Non-finite values during training or gradient checking.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace ridgematch
