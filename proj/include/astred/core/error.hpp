#pragma once

#include <stdexcept>
#include <string>

namespace astred {

// Base for every error raised by the library. Callers that only care about
// "something went wrong at runtime" catch this.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller handed us something that violates a documented precondition.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Configuration problems. `field` carries the dotted path of the offending key.
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& what)
      : Error(field.empty() ? what : field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Gateway could not be reached or the connection dropped. Safe to retry.
class TransportError : public Error {
 public:
  using Error::Error;
  bool retryable() const noexcept { return true; }
};

// Gateway answered, but with something we cannot interpret.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

}  // namespace astred
