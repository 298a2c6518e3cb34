#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace spadcorr {

enum class ErrorCode {
  // configuration / usage
  ConfigError,
  DisjointnessViolation,
  InsufficientMask,
  WindowTooLarge,
  FlagOrderViolation,
  OutOfRange,
  // data
  EvanescentInput,
  MalformedFrame,
  EmptyAccumulator,
  AllColumnsEmpty,
  BadMagic,
  TruncatedFile,
  InvariantViolation,
  OrderViolation,
  RangeViolation,
  ShapeMismatch,
  // numerics
  DegenerateInput,
  NotConverged,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::DisjointnessViolation: return "DisjointnessViolation";
    case ErrorCode::InsufficientMask: return "InsufficientMask";
    case ErrorCode::WindowTooLarge: return "WindowTooLarge";
    case ErrorCode::FlagOrderViolation: return "FlagOrderViolation";
    case ErrorCode::OutOfRange: return "OutOfRange";
    case ErrorCode::EvanescentInput: return "EvanescentInput";
    case ErrorCode::MalformedFrame: return "MalformedFrame";
    case ErrorCode::EmptyAccumulator: return "EmptyAccumulator";
    case ErrorCode::AllColumnsEmpty: return "AllColumnsEmpty";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::TruncatedFile: return "TruncatedFile";
    case ErrorCode::InvariantViolation: return "InvariantViolation";
    case ErrorCode::OrderViolation: return "OrderViolation";
    case ErrorCode::RangeViolation: return "RangeViolation";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::DegenerateInput: return "DegenerateInput";
    case ErrorCode::NotConverged: return "NotConverged";
  }
  return "Unknown";
}

/// Exit-status class used by the command line tool.
enum class ErrorClass { Config = 2, Data = 3, Numeric = 4 };

constexpr ErrorClass classify(ErrorCode code) {
  switch (code) {
    case ErrorCode::ConfigError:
    case ErrorCode::DisjointnessViolation:
    case ErrorCode::InsufficientMask:
    case ErrorCode::WindowTooLarge:
    case ErrorCode::FlagOrderViolation:
    case ErrorCode::OutOfRange:
      return ErrorClass::Config;
    case ErrorCode::DegenerateInput:
    case ErrorCode::NotConverged:
      return ErrorClass::Numeric;
    default:
      return ErrorClass::Data;
  }
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace spadcorr
