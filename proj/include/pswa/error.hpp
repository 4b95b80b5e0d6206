#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace pswa {

// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration: bad hyperparameters, incompatible layer shapes,
// unknown config keys. Raised before any work starts.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// API misuse: wrong shapes passed in, out-of-range labels, calling an
// operation whose precondition does not hold.
class UsageError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf encountered in activations, gradients, or weights.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Malformed input file. `offset` is the byte position where parsing failed,
// or the 1-based line number for text formats.
class FormatError : public Error {
 public:
  enum class Unit { byte, line };

  FormatError(const std::string& what, std::uint64_t offset, Unit unit = Unit::byte)
      : Error(what + (unit == Unit::byte ? " (at offset " : " (at line ") + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

}  // namespace pswa
