#pragma once

#include <stdexcept>
#include <string>

namespace cozad {

/// Root of every error the engine throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// File does not start with the expected magic bytes or has an unknown version.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// File structure is readable but its contents disagree with its header.
class CorruptionError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// A caller violated an operation's precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// A configuration value is unknown, malformed or out of range.
class ConfigError : public Error {
 public:
  using Error::Error;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) {
    throw ContractError(message);
  }
}

}  // namespace cozad
