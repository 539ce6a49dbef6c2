#include "pmslam/error.hpp"

namespace pmslam {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidPoint: return "invalid-point";
    case ErrorCode::kBehindCamera: return "behind-camera";
    case ErrorCode::kInvalidArgument: return "invalid-argument";
    case ErrorCode::kUnknownFrame: return "unknown-frame";
    case ErrorCode::kWindowTooLarge: return "window-too-large";
    case ErrorCode::kSingularInnovation: return "singular-innovation";
    case ErrorCode::kDegenerateSystem: return "degenerate-system";
    case ErrorCode::kNoProgress: return "no-progress";
    case ErrorCode::kSingularNormalEquations: return "singular-normal-equations";
    case ErrorCode::kDimensionMismatch: return "dimension-mismatch";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kParse: return "parse";
    case ErrorCode::kEvaluation: return "evaluation";
  }
  return "unknown";
}

}  // namespace pmslam
