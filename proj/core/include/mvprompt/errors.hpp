#pragma once

#include <stdexcept>
#include <string>

namespace mvp {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor, image or token-count shape does not match the contract.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Malformed controller configuration string.
class ParseError : public Error {
 public:
  ParseError(const std::string& message, std::string token)
      : Error(message), token_(std::move(token)) {}
  const std::string& token() const noexcept { return token_; }

 private:
  std::string token_;
};

/// A configuration references something that is not available
/// (e.g. a view label absent from the prompt set).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values or invalid numeric input (zero-norm embeddings,
/// unnormalized probability vectors, diverging optimisation).
class NumericError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace mvp
