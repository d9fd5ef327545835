#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace gmat {

enum class ErrorCode {
  // knowledge_base
  EmptyDocument,
  UnknownClassAlias,
  UnknownClass,
  // agent_pipeline
  NoGroundingChunks,
  PlanParseFailure,
  GenerationEmpty,
  VerifyParseFailure,
  NotApproved,
  EmptyAfterCleanup,
  MaxRevisionsExceeded,
  BackendFailure,
  // description_store
  SchemaError,
  InvariantViolation,
  // embedding / bag_data / mil_core
  BlankText,
  NonFiniteInput,
  DimMismatch,
  SpecInvalid,
  TooFewPatients,
  FormatError,
  EmptyClass,
  LabelOutOfRange,
  NoTrainData,
  // metrics / zero_shot
  DegenerateLabels,
  LengthMismatch,
  // shared
  InvalidArgument,
  IoError,
  ConfigError,
};

inline constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::EmptyDocument: return "EmptyDocument";
    case ErrorCode::UnknownClassAlias: return "UnknownClassAlias";
    case ErrorCode::UnknownClass: return "UnknownClass";
    case ErrorCode::NoGroundingChunks: return "NoGroundingChunks";
    case ErrorCode::PlanParseFailure: return "PlanParseFailure";
    case ErrorCode::GenerationEmpty: return "GenerationEmpty";
    case ErrorCode::VerifyParseFailure: return "VerifyParseFailure";
    case ErrorCode::NotApproved: return "NotApproved";
    case ErrorCode::EmptyAfterCleanup: return "EmptyAfterCleanup";
    case ErrorCode::MaxRevisionsExceeded: return "MaxRevisionsExceeded";
    case ErrorCode::BackendFailure: return "BackendFailure";
    case ErrorCode::SchemaError: return "SchemaError";
    case ErrorCode::InvariantViolation: return "InvariantViolation";
    case ErrorCode::BlankText: return "BlankText";
    case ErrorCode::NonFiniteInput: return "NonFiniteInput";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::SpecInvalid: return "SpecInvalid";
    case ErrorCode::TooFewPatients: return "TooFewPatients";
    case ErrorCode::FormatError: return "FormatError";
    case ErrorCode::EmptyClass: return "EmptyClass";
    case ErrorCode::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorCode::NoTrainData: return "NoTrainData";
    case ErrorCode::DegenerateLabels: return "DegenerateLabels";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

/// Base exception for every failure raised by the library. The code is the
/// stable, machine-readable part; the message is for humans.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// One failed rule at a location inside a DescriptionSet.
struct Violation {
  std::string class_label;
  int sentence_index = -1;  // -1 when the rule applies to the whole class list
  std::string rule;

  bool operator==(const Violation&) const = default;
};

class ValidationError : public Error {
 public:
  explicit ValidationError(std::vector<Violation> violations)
      : Error(ErrorCode::InvariantViolation, summarize(violations)),
        violations_(std::move(violations)) {}

  const std::vector<Violation>& violations() const noexcept { return violations_; }

 private:
  static std::string summarize(const std::vector<Violation>& v) {
    std::string out = std::to_string(v.size()) + " violation(s)";
    for (const auto& x : v) {
      out += "; (" + x.class_label + ", " + std::to_string(x.sentence_index) + ", " + x.rule + ")";
    }
    return out;
  }

  std::vector<Violation> violations_;
};

inline void require(bool cond, ErrorCode code, const std::string& message) {
  if (!cond) throw Error(code, message);
}

}  // namespace gmat
