#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace dcvit {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes or configuration values that do not fit together.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid argument or configuration record.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf produced where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed or unreadable data (files, datasets, labels).
class DataError : public Error {
 public:
  DataError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
  explicit DataError(const std::string& what) : Error(what) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_ = 0;
};

class TruncatedFileError : public DataError {
 public:
  using DataError::DataError;
};

class BadMagicError : public DataError {
 public:
  using DataError::DataError;
};

class VersionError : public DataError {
 public:
  using DataError::DataError;
};

class SizeMismatchError : public DataError {
 public:
  SizeMismatchError(std::uint64_t expected, std::uint64_t actual)
      : DataError("file size mismatch: expected " + std::to_string(expected) +
                      " bytes, actual " + std::to_string(actual) + " bytes",
                  actual < expected ? actual : expected),
        expected_(expected),
        actual_(actual) {}

  std::uint64_t expected() const noexcept { return expected_; }
  std::uint64_t actual() const noexcept { return actual_; }

 private:
  std::uint64_t expected_;
  std::uint64_t actual_;
};

class CrcMismatchError : public DataError {
 public:
  using DataError::DataError;
};

/// Stored parameter layout disagrees with the model it is loaded into.
class ShapeConflictError : public DataError {
 public:
  ShapeConflictError(const std::string& what, std::string parameter)
      : DataError(what), parameter_(std::move(parameter)) {}

  const std::string& parameter() const noexcept { return parameter_; }

 private:
  std::string parameter_;
};

}  // namespace dcvit
