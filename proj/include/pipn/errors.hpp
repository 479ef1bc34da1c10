#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace pipn {

/// Base for every error raised by the library. User-facing tools catch this
/// and print `what()` instead of letting it escape.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Inconsistent configuration, shapes or dimensions.
class ConfigurationError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent file contents.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Primitive not known to the differentiation engine.
class UnsupportedPrimitive : public Error {
 public:
  explicit UnsupportedPrimitive(const std::string& name)
      : Error("unsupported primitive '" + name + "'"), name_(name) {}
  const std::string& name() const noexcept { return name_; }

 private:
  std::string name_;
};

/// Non-finite value encountered; `where` is a tape node index, a parameter
/// name or an epoch label depending on the raising site.
class NumericalError : public Error {
 public:
  NumericalError(const std::string& msg, std::string where)
      : Error(msg + " (at " + where + ")"), where_(std::move(where)) {}
  const std::string& where() const noexcept { return where_; }

 private:
  std::string where_;
};

}  // namespace pipn
