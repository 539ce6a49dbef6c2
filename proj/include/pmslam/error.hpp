#pragma once

#include <stdexcept>
#include <string>

namespace pmslam {

enum class ErrorCode {
  kInvalidPoint,
  kBehindCamera,
  kInvalidArgument,
  kUnknownFrame,
  kWindowTooLarge,
  kSingularInnovation,
  kDegenerateSystem,
  kNoProgress,
  kSingularNormalEquations,
  kDimensionMismatch,
  kIo,
  kParse,
  kEvaluation,
};

const char* to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace pmslam
