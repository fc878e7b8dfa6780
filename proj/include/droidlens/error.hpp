#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace droidlens {

enum class ErrorCode {
  MalformedDocument,
  MalformedBounds,
  MissingPackage,
  RasterMismatch,
  SequenceGap,
  CorruptSession,
  Transport,
  RateLimited,
  EndpointError,
  ScriptExhausted,
  ExpectationMismatch,
  NoActionableWidgets,
  EmptyGraph,
  SchemaViolation,
  UnknownState,
  DriverFailure,
  InvalidArgument,
  ConfigError,
};

constexpr std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::MalformedDocument: return "MalformedDocument";
    case ErrorCode::MalformedBounds: return "MalformedBounds";
    case ErrorCode::MissingPackage: return "MissingPackage";
    case ErrorCode::RasterMismatch: return "RasterMismatch";
    case ErrorCode::SequenceGap: return "SequenceGap";
    case ErrorCode::CorruptSession: return "CorruptSession";
    case ErrorCode::Transport: return "Transport";
    case ErrorCode::RateLimited: return "RateLimited";
    case ErrorCode::EndpointError: return "EndpointError";
    case ErrorCode::ScriptExhausted: return "ScriptExhausted";
    case ErrorCode::ExpectationMismatch: return "ExpectationMismatch";
    case ErrorCode::NoActionableWidgets: return "NoActionableWidgets";
    case ErrorCode::EmptyGraph: return "EmptyGraph";
    case ErrorCode::SchemaViolation: return "SchemaViolation";
    case ErrorCode::UnknownState: return "UnknownState";
    case ErrorCode::DriverFailure: return "DriverFailure";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

/// Single exception type for the library; callers branch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace droidlens
