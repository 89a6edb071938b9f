#pragma once

#include <stdexcept>
#include <string>

namespace pmshadow {

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : Error {
  using Error::Error;
};

struct CorruptArenaError : Error {
  using Error::Error;
};

struct OutOfMemoryError : Error {
  using Error::Error;
};

struct InvalidFreeError : Error {
  using Error::Error;
};

struct WildWriteError : Error {
  using Error::Error;
};

struct NotFoundError : Error {
  using Error::Error;
};

struct CapacityError : Error {
  using Error::Error;
};

struct MisuseError : Error {
  using Error::Error;
};

struct CorruptionError : Error {
  using Error::Error;
};

struct ParseError : Error {
  using Error::Error;
};

// Reference-count underflow is a programming bug, not a recoverable condition.
struct RefCountError : std::logic_error {
  explicit RefCountError(const std::string& msg) : std::logic_error(msg) {}
};

}  // namespace pmshadow
