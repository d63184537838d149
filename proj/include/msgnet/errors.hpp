#pragma once

#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>

namespace msgnet {

// Base of every library error.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shapes or dimensions that do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Overflow, non-finite values, failed factorizations.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Malformed files, unreadable inputs, bad containers.
class DataError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration or arguments.
class ConfigError : public Error {
 public:
  using Error::Error;
};

namespace detail {

template <typename... Args>
std::string concat(Args&&... args) {
  std::ostringstream oss;
  (oss << ... << std::forward<Args>(args));
  return oss.str();
}

}  // namespace detail

template <typename E = Error, typename... Args>
[[noreturn]] void raise(Args&&... args) {
  throw E(detail::concat(std::forward<Args>(args)...));
}

}  // namespace msgnet
