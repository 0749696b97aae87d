#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace ufid {

enum class ErrorCode {
  invalid_argument,
  mode_mismatch,
  shape_mismatch,
  pool_too_small,
  dimension_mismatch,
  encoder_mismatch,
  zero_vector,
  window_too_large,
  too_few_vertices,
  empty_input,
  precondition,
  transport,
  protocol,
  config,
  missing_file,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::mode_mismatch: return "mode_mismatch";
    case ErrorCode::shape_mismatch: return "shape_mismatch";
    case ErrorCode::pool_too_small: return "pool_too_small";
    case ErrorCode::dimension_mismatch: return "dimension_mismatch";
    case ErrorCode::encoder_mismatch: return "encoder_mismatch";
    case ErrorCode::zero_vector: return "zero_vector";
    case ErrorCode::window_too_large: return "window_too_large";
    case ErrorCode::too_few_vertices: return "too_few_vertices";
    case ErrorCode::empty_input: return "empty_input";
    case ErrorCode::precondition: return "precondition";
    case ErrorCode::transport: return "transport";
    case ErrorCode::protocol: return "protocol";
    case ErrorCode::config: return "config";
    case ErrorCode::missing_file: return "missing_file";
  }
  return "unknown";
}

// All library failures surface as ufid::Error; callers branch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Network-level failure talking to a remote backend or encoder. Retryable.
class TransportError : public Error {
 public:
  TransportError(const std::string& message, int attempts)
      : Error(ErrorCode::transport, message + " (after " + std::to_string(attempts) + " attempts)"),
        attempts_(attempts) {}

  int attempts() const noexcept { return attempts_; }

 private:
  int attempts_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) { throw Error(code, message); }

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) fail(code, message);
}

}  // namespace ufid
