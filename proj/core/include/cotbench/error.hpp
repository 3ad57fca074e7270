#pragma once

#include <stdexcept>
#include <string>

namespace cotbench {

// Base of every failure raised by the toolkit. Module-specific errors derive
// from one of the three categories below so that callers (the CLI in
// particular) can map them onto exit codes without knowing every subclass.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad input data: malformed files, unparseable model replies, protocol errors.
class DataError : public Error {
 public:
  using Error::Error;
};

// Caller broke a documented precondition.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration (unknown keys, unresolvable paths, bad modes).
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace cotbench
