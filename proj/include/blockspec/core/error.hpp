// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace blockspec {

/// Base of every error raised by the library. The CLI exits with 1 on
/// ConfigError and 2 on every other kind.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape-incompatible operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf where finite values are required, or training divergence.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// A caller broke a documented precondition (cache desync, hash mismatch, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

namespace detail {

template <typename E>
[[noreturn]] inline void raise(const std::string& what) {
  throw E(what);
}

}  // namespace detail

#define BLOCKSPEC_CHECK(cond, ErrType, msg)             \
  do {                                                  \
    if (!(cond)) ::blockspec::detail::raise<ErrType>(msg); \
  } while (0)

}  // namespace blockspec
