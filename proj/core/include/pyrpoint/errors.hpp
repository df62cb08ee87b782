#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace pyrpoint {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape or dimension mismatch between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Index outside the valid range of a table or tensor.
class IndexError : public Error {
 public:
  using Error::Error;
};

/// Class label outside [0, C) that is not the ignore index.
class LabelError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values where finite ones are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration document or parameter combination.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Input that collapses to nothing (empty cloud, empty level, ...).
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

/// Missing or inconsistent dataset files.
class DatasetError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed file content. Carries the byte offset at which parsing failed.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

}  // namespace pyrpoint
