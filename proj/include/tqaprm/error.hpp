#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace tqaprm {

// Error categories surfaced through the C API as status codes.
enum class ErrorCode {
  InvalidArgument,
  Parse,
  Validation,
  Io,
  Transport,
  RetriesExhausted,
  Protocol,
  Capability,
  ScriptedMiss,
  Config,
  MissingArtifact,
  Sampling,
  Internal,
};

const char* to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Malformed input record. `line` is 1-based; 0 when not line-oriented.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what);
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what) : Error(ErrorCode::Validation, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorCode::Io, what) {}
};

/// A transient failure talking to a backend; eligible for retry.
class TransportError : public Error {
 public:
  explicit TransportError(const std::string& what) : Error(ErrorCode::Transport, what) {}
};

class RetriesExhaustedError : public Error {
 public:
  RetriesExhaustedError(int attempts, const std::string& last_error);
  int attempts() const noexcept { return attempts_; }

 private:
  int attempts_;
};

/// The backend answered, but not in the chat-completions shape.
class ProtocolError : public Error {
 public:
  explicit ProtocolError(const std::string& what) : Error(ErrorCode::Protocol, what) {}
};

/// Requested feature (e.g. token probabilities) is not available.
class CapabilityError : public Error {
 public:
  explicit CapabilityError(const std::string& what) : Error(ErrorCode::Capability, what) {}
};

class ScriptedMissError : public Error {
 public:
  explicit ScriptedMissError(const std::string& what) : Error(ErrorCode::ScriptedMiss, what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorCode::Config, what) {}
};

class MissingArtifactError : public Error {
 public:
  explicit MissingArtifactError(const std::string& what)
      : Error(ErrorCode::MissingArtifact, what) {}
};

}  // namespace tqaprm
