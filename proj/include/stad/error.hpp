#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace stad {

enum class ErrorCode {
  kDomain,
  kZeroVector,
  kDimensionMismatch,
  kNonFinite,
  kEmptyBatch,
  kNonContiguousTime,
  kDegenerateMessage,
  kInsufficientHistory,
  kNotAdapted,
  kSolverFailure,
  kCorruptHeader,
  kCorruptPayload,
  kMissingFile,
  kMissingLabels,
  kInfeasibleSeparation,
  kMissingGroundTruth,
  kInvalidConfig,
  kIo,
};

std::string_view to_string(ErrorCode code);

// Every failure raised by the library carries one of the codes above so
// callers (the CLI in particular) can map them without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kDomain: return "DomainError";
    case ErrorCode::kZeroVector: return "ZeroVector";
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kNonFinite: return "NonFinite";
    case ErrorCode::kEmptyBatch: return "EmptyBatch";
    case ErrorCode::kNonContiguousTime: return "NonContiguousTime";
    case ErrorCode::kDegenerateMessage: return "DegenerateMessage";
    case ErrorCode::kInsufficientHistory: return "InsufficientHistory";
    case ErrorCode::kNotAdapted: return "NotAdapted";
    case ErrorCode::kSolverFailure: return "SolverFailure";
    case ErrorCode::kCorruptHeader: return "CorruptHeader";
    case ErrorCode::kCorruptPayload: return "CorruptPayload";
    case ErrorCode::kMissingFile: return "MissingFile";
    case ErrorCode::kMissingLabels: return "MissingLabels";
    case ErrorCode::kInfeasibleSeparation: return "InfeasibleSeparation";
    case ErrorCode::kMissingGroundTruth: return "MissingGroundTruth";
    case ErrorCode::kInvalidConfig: return "InvalidConfig";
    case ErrorCode::kIo: return "IoError";
  }
  return "Unknown";
}

}  // namespace stad
