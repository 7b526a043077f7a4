#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace foa {

enum class ErrorCode {
  ZeroNorm,
  NonPositiveTemperature,
  EmptyImage,
  ShapeMismatch,
  InvalidDims,
  TooFewPoints,
  ZeroNormRow,
  NumericalUnderflow,
  TooLarge,
  NonPositiveLoss,
  DegenerateCrop,
  InvalidConfig,
  NonFiniteLoss,
  MissingPair,
  Io,
  Format,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::ZeroNorm: return "ZeroNorm";
    case ErrorCode::NonPositiveTemperature: return "NonPositiveTemperature";
    case ErrorCode::EmptyImage: return "EmptyImage";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::InvalidDims: return "InvalidDims";
    case ErrorCode::TooFewPoints: return "TooFewPoints";
    case ErrorCode::ZeroNormRow: return "ZeroNormRow";
    case ErrorCode::NumericalUnderflow: return "NumericalUnderflow";
    case ErrorCode::TooLarge: return "TooLarge";
    case ErrorCode::NonPositiveLoss: return "NonPositiveLoss";
    case ErrorCode::DegenerateCrop: return "DegenerateCrop";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::MissingPair: return "MissingPair";
    case ErrorCode::Io: return "Io";
    case ErrorCode::Format: return "Format";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

  // Numerical failures map to a different CLI exit code than input validation.
  bool is_numerical() const noexcept {
    return code_ == ErrorCode::NumericalUnderflow || code_ == ErrorCode::NonFiniteLoss ||
           code_ == ErrorCode::ZeroNorm || code_ == ErrorCode::ZeroNormRow;
  }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace foa
