#pragma once

#include <stdexcept>
#include <string>

namespace padd {

/// Base of every error raised by the library. `code()` is a short stable tag
/// used by the CLI's machine-readable error line.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& what)
      : std::runtime_error(what), code_(std::move(code)) {}
  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error("shape", what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error("numeric", what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error("config", what) {}
};

class InputError : public Error {
 public:
  explicit InputError(const std::string& what) : Error("input", what) {}
};

enum class FormatErrorKind { kCorruptHeader, kTruncatedPayload, kVersionMismatch, kCorruptPayload, kIo };

inline const char* to_string(FormatErrorKind k) {
  switch (k) {
    case FormatErrorKind::kCorruptHeader: return "corrupt header";
    case FormatErrorKind::kTruncatedPayload: return "truncated payload";
    case FormatErrorKind::kVersionMismatch: return "version mismatch";
    case FormatErrorKind::kCorruptPayload: return "corrupt payload";
    case FormatErrorKind::kIo: return "io failure";
  }
  return "unknown";
}

class FormatError : public Error {
 public:
  FormatError(FormatErrorKind kind, const std::string& what)
      : Error("format", std::string(to_string(kind)) + ": " + what), kind_(kind) {}
  FormatErrorKind kind() const noexcept { return kind_; }

 private:
  FormatErrorKind kind_;
};

}  // namespace padd
