#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace hicu {

enum class ErrorCode {
  usage,
  parse,
  coverage,
  config,
  io,
  domain,
  dimension,
  numeric,
  not_found,
};

inline std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::usage: return "E_USAGE";
    case ErrorCode::parse: return "E_PARSE";
    case ErrorCode::coverage: return "E_COVERAGE";
    case ErrorCode::config: return "E_CONFIG";
    case ErrorCode::io: return "E_IO";
    case ErrorCode::domain: return "E_DOMAIN";
    case ErrorCode::dimension: return "E_DIMENSION";
    case ErrorCode::numeric: return "E_NUMERIC";
    case ErrorCode::not_found: return "E_NOT_FOUND";
  }
  return "E_UNKNOWN";
}

// Every failure raised by the library carries a stable machine-readable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) fail(code, message);
}

}  // namespace hicu
