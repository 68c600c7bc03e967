#pragma once

#include <stdexcept>
#include <string>

namespace unisurf {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid or inconsistent configuration. Carries the offending dotted key.
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& message)
      : Error(field.empty() ? message : field + ": " + message), field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// Missing or malformed dataset content (files, masks, manifests).
class DataError : public Error {
 public:
  using Error::Error;
};

/// A tensor or grid argument violates an operation's preconditions.
class InputError : public Error {
 public:
  using Error::Error;
};

/// A metric cannot be computed for the given inputs (e.g. a single class).
class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class NumericalAbort : public Error {
 public:
  using Error::Error;
};

}  // namespace unisurf
