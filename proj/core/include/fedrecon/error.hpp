#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fedrecon {

enum class ErrorKind {
  kShapeMismatch,
  kDomain,
  kInvalidArgument,
  kMissingGradient,
  kFormat,
  kIo,
  kPrivacyViolation,
  kProtocol,
};

const char* to_string(ErrorKind kind);

// Base of every error thrown by the library. `what()` is prefixed with the
// kind so CLI output stays greppable.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message);

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// Malformed binary input. Carries the byte offset at which decoding failed.
class FormatError : public Error {
 public:
  FormatError(std::size_t offset, const std::string& message);

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

class PrivacyViolation : public Error {
 public:
  explicit PrivacyViolation(const std::string& message)
      : Error(ErrorKind::kPrivacyViolation, message) {}
};

}  // namespace fedrecon
