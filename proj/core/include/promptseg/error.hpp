#pragma once

#include <stdexcept>
#include <string>

namespace promptseg {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller supplied an argument that violates an operation's precondition.
class InputError : public Error {
 public:
  using Error::Error;
};

// Image dimensions incompatible with the backbone token grid.
class SizingError : public InputError {
 public:
  using InputError::InputError;
};

// A mask with no foreground where one is required.
class DegenerateMaskError : public InputError {
 public:
  using InputError::InputError;
};

// Inconsistent configuration (layer indices, dimensions, unknown fields, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Corrupt or incompatible file on disk.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Non-finite values during optimisation.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace promptseg
