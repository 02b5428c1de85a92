#pragma once

#include <stdexcept>
#include <string>

namespace geosplat {

enum class ErrorCode {
  InvalidArgument,
  PointBehindCamera,
  CoincidentCameras,
  DegenerateLine,
  EpipoleAtInfinity,
  EmptyInput,
  ShapeMismatch,
  NonPositiveDepth,
  SkippedAllTerms,
  TooFewPoints,
  OutOfBounds,
  ParallelRays,
  NegativeDepth,
  DegenerateGeometry,
  NoValidPixels,
  InvalidConfig,
  EmptySplit,
  Io,
  Format,
  NumericalFailure,
};

const char* to_string(ErrorCode code);

// Numerical failures map to a distinct CLI exit status.
bool is_numerical(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace geosplat
