#pragma once

#include <stdexcept>
#include <string>

namespace rvae {

// Base of every error raised by the library. The subclasses partition
// failures by class so that callers (notably the CLI) can map them to
// distinct exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration, arguments or preconditions.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Unreadable, unwritable or malformed files.
class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed data content (bad cells, shapes that do not agree).
class DataError : public Error {
 public:
  using Error::Error;
};

// Numerical failure while optimizing.
class TrainingError : public Error {
 public:
  using Error::Error;
};

// A table, record or checkpoint does not match the expected schema.
class SchemaMismatch : public Error {
 public:
  using Error::Error;
};

// The requested operation is undefined for this model kind.
class UnsupportedOperation : public Error {
 public:
  using Error::Error;
};

}  // namespace rvae
