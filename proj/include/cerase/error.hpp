#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cerase {

enum class ErrorCode {
  NonFiniteInput,
  RankOutOfBounds,
  DimensionMismatch,
  ShapeMismatch,
  ZeroVector,
  EmptySelection,
  DegenerateConcept,
  NonFiniteGradient,
  BadMagic,
  VersionUnsupported,
  TruncatedPayload,
  SidecarRowOutOfRange,
  OrthonormalityViolation,
  SchemaViolation,
  IoFailure,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::NonFiniteInput: return "NonFiniteInput";
    case ErrorCode::RankOutOfBounds: return "RankOutOfBounds";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::ZeroVector: return "ZeroVector";
    case ErrorCode::EmptySelection: return "EmptySelection";
    case ErrorCode::DegenerateConcept: return "DegenerateConcept";
    case ErrorCode::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::VersionUnsupported: return "VersionUnsupported";
    case ErrorCode::TruncatedPayload: return "TruncatedPayload";
    case ErrorCode::SidecarRowOutOfRange: return "SidecarRowOutOfRange";
    case ErrorCode::OrthonormalityViolation: return "OrthonormalityViolation";
    case ErrorCode::SchemaViolation: return "SchemaViolation";
    case ErrorCode::IoFailure: return "IoFailure";
  }
  return "Unknown";
}

/// Every failure raised by the toolkit carries one of the codes above so
/// front ends can map it to an exit status without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace cerase
