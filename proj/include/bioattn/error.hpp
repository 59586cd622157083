#pragma once

#include <stdexcept>
#include <string>

namespace bioattn {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor extents are incompatible with an operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// An argument lies outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Invalid hyperparameters or configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A calling contract was violated (e.g. non-scalar backward seed).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// File could not be read, written or parsed.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Training loss blew up.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace bioattn
