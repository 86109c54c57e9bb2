#pragma once

#include <stdexcept>
#include <string>

namespace oavl {

// Base for every error raised by the library. The CLI maps the concrete
// subclasses onto exit codes: ValidationError -> 1, IoError -> 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input that violates a documented contract (bad grade, bad shape, bad flag).
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Filesystem failures and unreadable/corrupted files.
class IoError : public Error {
 public:
  using Error::Error;
};

// Checkpoint payload failed its CRC32.
class ChecksumError : public IoError {
 public:
  using IoError::IoError;
};

// Checkpoint magic or format version not recognised.
class VersionError : public IoError {
 public:
  using IoError::IoError;
};

// Caption text outside the report grammar. `position` is a byte offset into
// the parsed text.
class ParseError : public ValidationError {
 public:
  ParseError(const std::string& what, std::size_t position)
      : ValidationError(what + " (at offset " + std::to_string(position) + ")"), position_(position) {}

  std::size_t position() const noexcept { return position_; }

 private:
  std::size_t position_;
};

}  // namespace oavl
