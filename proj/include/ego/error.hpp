// Copyright 2026 The ego Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>

namespace ego {

enum class ErrorCode {
  kInvalidArgument,
  kContractViolation,
  kMissingCapture,
  kEmptyKeywords,
  kContextLimit,
  kNoScript,
  kBadMagic,
  kUnsupportedVersion,
  kTruncated,
  kChecksumMismatch,
  kConflict,
  kBackendMismatch,
  kEnrollment,
  kCalibration,
  kManifest,
  kBackend,
  kIo,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid-argument";
    case ErrorCode::kContractViolation: return "contract-violation";
    case ErrorCode::kMissingCapture: return "missing-capture";
    case ErrorCode::kEmptyKeywords: return "empty-keywords";
    case ErrorCode::kContextLimit: return "context-limit";
    case ErrorCode::kNoScript: return "no-script";
    case ErrorCode::kBadMagic: return "bad-magic";
    case ErrorCode::kUnsupportedVersion: return "unsupported-version";
    case ErrorCode::kTruncated: return "truncated";
    case ErrorCode::kChecksumMismatch: return "checksum-mismatch";
    case ErrorCode::kConflict: return "conflict";
    case ErrorCode::kBackendMismatch: return "backend-mismatch";
    case ErrorCode::kEnrollment: return "enrollment";
    case ErrorCode::kCalibration: return "calibration";
    case ErrorCode::kManifest: return "manifest";
    case ErrorCode::kBackend: return "backend";
    case ErrorCode::kIo: return "io";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Raised when a context (prompt plus generation budget) exceeds the backend limit.
class ContextLimitError : public Error {
 public:
  ContextLimitError(std::size_t required, std::size_t limit)
      : Error(ErrorCode::kContextLimit,
              "context needs " + std::to_string(required) + " tokens, limit is " +
                  std::to_string(limit) + " (over by " + std::to_string(required - limit) + ")"),
        required_(required),
        limit_(limit) {}

  std::size_t required() const noexcept { return required_; }
  std::size_t limit() const noexcept { return limit_; }
  std::size_t overflow() const noexcept { return required_ - limit_; }

 private:
  std::size_t required_;
  std::size_t limit_;
};

namespace detail {

inline void require(bool condition, ErrorCode code, std::string_view message) {
  if (!condition) throw Error(code, std::string(message));
}

}  // namespace detail

}  // namespace ego
