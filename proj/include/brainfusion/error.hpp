#pragma once

#include <stdexcept>
#include <string>

namespace brainfusion {

/// Root of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration or arguments. The CLI maps this to exit status 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& message, int line)
      : Error(line > 0 ? "line " + std::to_string(line) + ": " + message : message), line_(line) {}

  int line() const noexcept { return line_; }

  /// Same error with `prefix` (e.g. a file path) prepended to the message.
  ParseError with_context(const std::string& prefix) const {
    return ParseError(prefix + ": " + what(), line_, Raw{});
  }

 private:
  struct Raw {};
  ParseError(const std::string& full_message, int line, Raw) : Error(full_message), line_(line) {}

  int line_;
};

class IngestError : public Error {
 public:
  using Error::Error;
};

class DecodeError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

class ExportError : public Error {
 public:
  using Error::Error;
};

}  // namespace brainfusion
