#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace biosep {

enum class ErrorCode {
  FileNotFound,
  UnsupportedFormat,
  CorruptHeader,
  IoError,
  EmptySignal,
  InvalidConfig,
  ShapeMismatch,
  EmptyInput,
  InvalidInput,
  ZeroEnergy,
  InvalidParams,
  SampleRateMismatch,
  BackendUnreachable,
};

constexpr std::string_view error_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::FileNotFound: return "FileNotFound";
    case ErrorCode::UnsupportedFormat: return "UnsupportedFormat";
    case ErrorCode::CorruptHeader: return "CorruptHeader";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::EmptySignal: return "EmptySignal";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::InvalidInput: return "InvalidInput";
    case ErrorCode::ZeroEnergy: return "ZeroEnergy";
    case ErrorCode::InvalidParams: return "InvalidParams";
    case ErrorCode::SampleRateMismatch: return "SampleRateMismatch";
    case ErrorCode::BackendUnreachable: return "BackendUnreachable";
  }
  return "Unknown";
}

// All library failures are reported through this type; what() is
// "<ErrorName>: <detail>" so the CLI can print it verbatim.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail)
      : std::runtime_error(std::string(error_name(code)) + ": " + detail), code_(code) {}

  ErrorCode code() const noexcept { return code_; }
  std::string_view name() const noexcept { return error_name(code_); }

 private:
  ErrorCode code_;
};

}  // namespace biosep
