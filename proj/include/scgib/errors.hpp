#pragma once

#include <stdexcept>
#include <string>

namespace scgib {

// Base class for every error thrown by this library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ParseError : Error {
  using Error::Error;
};

struct IOError : Error {
  using Error::Error;
};

struct ValidationError : Error {
  using Error::Error;
};

// Raised by the SMILES reader on characters outside the supported subset.
struct UnsupportedTokenError : Error {
  UnsupportedTokenError(const std::string& what, std::size_t pos)
      : Error(what + " (position " + std::to_string(pos) + ")"), position(pos) {}
  std::size_t position;
};

struct IndexError : Error {
  using Error::Error;
};

struct EmptyBatchError : Error {
  using Error::Error;
};

struct ShapeError : Error {
  using Error::Error;
};

struct DomainError : Error {
  using Error::Error;
};

struct NumericalError : Error {
  using Error::Error;
};

struct BatchTooSmallError : Error {
  using Error::Error;
};

struct EmptyInputError : Error {
  using Error::Error;
};

struct DegenerateSplitError : Error {
  using Error::Error;
};

struct UnsupportedTaskError : Error {
  using Error::Error;
};

struct IncompatibleCheckpointError : Error {
  using Error::Error;
};

struct DeserializeError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

}  // namespace scgib
