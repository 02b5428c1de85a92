#include "geosplat/error.hpp"

namespace geosplat {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::PointBehindCamera: return "PointBehindCamera";
    case ErrorCode::CoincidentCameras: return "CoincidentCameras";
    case ErrorCode::DegenerateLine: return "DegenerateLine";
    case ErrorCode::EpipoleAtInfinity: return "EpipoleAtInfinity";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NonPositiveDepth: return "NonPositiveDepth";
    case ErrorCode::SkippedAllTerms: return "SkippedAllTerms";
    case ErrorCode::TooFewPoints: return "TooFewPoints";
    case ErrorCode::OutOfBounds: return "OutOfBounds";
    case ErrorCode::ParallelRays: return "ParallelRays";
    case ErrorCode::NegativeDepth: return "NegativeDepth";
    case ErrorCode::DegenerateGeometry: return "DegenerateGeometry";
    case ErrorCode::NoValidPixels: return "NoValidPixels";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::EmptySplit: return "EmptySplit";
    case ErrorCode::Io: return "Io";
    case ErrorCode::Format: return "Format";
    case ErrorCode::NumericalFailure: return "NumericalFailure";
  }
  return "Unknown";
}

bool is_numerical(ErrorCode code) {
  switch (code) {
    case ErrorCode::NumericalFailure:
    case ErrorCode::ParallelRays:
    case ErrorCode::NegativeDepth:
    case ErrorCode::DegenerateGeometry:
    case ErrorCode::DegenerateLine:
    case ErrorCode::EpipoleAtInfinity:
    case ErrorCode::SkippedAllTerms:
    case ErrorCode::NoValidPixels:
      return true;
    default:
      return false;
  }
}

}  // namespace geosplat
