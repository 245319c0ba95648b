// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace liso {

enum class ErrorCode {
  InvalidArgument,
  ShapeMismatch,
  CapacityExceeded,
  MalformedHeader,
  PayloadMismatch,
  DecodeError,
  IoError,
  CodecError,
  EmptyDataset,
  EmptySequence,
  TooSmall,
  VersionMismatch,
  CorruptCheckpoint,
  DivergenceDetected,
  ConfigError,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::CapacityExceeded: return "CapacityExceeded";
    case ErrorCode::MalformedHeader: return "MalformedHeader";
    case ErrorCode::PayloadMismatch: return "PayloadMismatch";
    case ErrorCode::DecodeError: return "DecodeError";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::CodecError: return "CodecError";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::EmptySequence: return "EmptySequence";
    case ErrorCode::TooSmall: return "TooSmall";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::CorruptCheckpoint: return "CorruptCheckpoint";
    case ErrorCode::DivergenceDetected: return "DivergenceDetected";
    case ErrorCode::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above so
/// callers (the CLI in particular) can map it to a stable exit status.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace liso
