#include "tqaprm/error.hpp"

namespace tqaprm {

const char* to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidArgument: return "invalid-argument";
    case ErrorCode::Parse: return "parse";
    case ErrorCode::Validation: return "validation";
    case ErrorCode::Io: return "io";
    case ErrorCode::Transport: return "transport";
    case ErrorCode::RetriesExhausted: return "retries-exhausted";
    case ErrorCode::Protocol: return "protocol";
    case ErrorCode::Capability: return "capability";
    case ErrorCode::ScriptedMiss: return "scripted-miss";
    case ErrorCode::Config: return "config";
    case ErrorCode::MissingArtifact: return "missing-artifact";
    case ErrorCode::Sampling: return "sampling";
    case ErrorCode::Internal: return "internal";
  }
  return "unknown";
}

ParseError::ParseError(std::size_t line, const std::string& what)
    : Error(ErrorCode::Parse, line > 0 ? "line " + std::to_string(line) + ": " + what : what),
      line_(line) {}

RetriesExhaustedError::RetriesExhaustedError(int attempts, const std::string& last_error)
    : Error(ErrorCode::RetriesExhausted,
            "backend unavailable after " + std::to_string(attempts) + " attempts: " + last_error),
      attempts_(attempts) {}

}  // namespace tqaprm
