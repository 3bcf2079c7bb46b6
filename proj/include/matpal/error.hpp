#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace matpal {

enum class ErrorCode {
  invalid_input,
  invalid_argument,
  shape_mismatch,
  empty_region,
  region_too_fragmented,
  coverage,
  backend,
  not_found,
  precondition,
  undefined_ratio,
  insufficient_samples,
  empty_library,
  io,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_input: return "invalid_input";
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::shape_mismatch: return "shape_mismatch";
    case ErrorCode::empty_region: return "empty_region";
    case ErrorCode::region_too_fragmented: return "region_too_fragmented";
    case ErrorCode::coverage: return "coverage";
    case ErrorCode::backend: return "backend";
    case ErrorCode::not_found: return "not_found";
    case ErrorCode::precondition: return "precondition";
    case ErrorCode::undefined_ratio: return "undefined_ratio";
    case ErrorCode::insufficient_samples: return "insufficient_samples";
    case ErrorCode::empty_library: return "empty_library";
    case ErrorCode::io: return "io";
  }
  return "unknown";
}

// All library failures are reported through this type; `code()` lets
// callers branch without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Raised by texture backends. Carries enough to decide whether a retry
// makes sense.
class BackendError : public Error {
 public:
  BackendError(const std::string& message, bool retryable, int attempts = 1,
               int status = 0)
      : Error(ErrorCode::backend, message),
        retryable_(retryable),
        attempts_(attempts),
        status_(status) {}

  bool retryable() const noexcept { return retryable_; }
  int attempts() const noexcept { return attempts_; }
  int http_status() const noexcept { return status_; }

 private:
  bool retryable_;
  int attempts_;
  int status_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) fail(code, message);
}

}  // namespace matpal
