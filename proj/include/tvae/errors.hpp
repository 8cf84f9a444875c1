#pragma once

#include <stdexcept>
#include <string>

namespace tvae {

// Base class for every error raised by the library. The kind string is what
// the C API and the CLI print in their single-line error reports.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

// Tensor shapes that do not conform.
class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& m) : Error("dimension", m) {}
};

// Argument outside the mathematical domain of an operation (log of 0, ...).
class DomainError : public Error {
 public:
  explicit DomainError(const std::string& m) : Error("domain", m) {}
};

// Violated precondition on the caller's side.
class ContractError : public Error {
 public:
  explicit ContractError(const std::string& m) : Error("contract", m) {}
};

class IndexError : public Error {
 public:
  explicit IndexError(const std::string& m) : Error("index", m) {}
};

// NaN/Inf in a loss or gradient.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& m) : Error("numeric", m) {}
};

class FileError : public Error {
 public:
  explicit FileError(const std::string& m) : Error("file", m) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& m) : Error("config", m) {}
};

}  // namespace tvae
