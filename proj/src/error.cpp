#include "cembed/error.hpp"

namespace cembed {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kZeroVector: return "ZeroVector";
    case ErrorCode::kDimMismatch: return "DimMismatch";
    case ErrorCode::kEmptyInput: return "EmptyInput";
    case ErrorCode::kTemperatureNonPositive: return "TemperatureNonPositive";
    case ErrorCode::kMissingTaskTheta: return "MissingTaskTheta";
    case ErrorCode::kEmptyText: return "EmptyText";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kWeightsInvalid: return "WeightsInvalid";
    case ErrorCode::kSpecInvalid: return "SpecInvalid";
    case ErrorCode::kNoClassificationData: return "NoClassificationData";
    case ErrorCode::kParseError: return "ParseError";
    case ErrorCode::kDuplicateId: return "DuplicateId";
    case ErrorCode::kBatchInfeasible: return "BatchInfeasible";
    case ErrorCode::kNonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::kIoError: return "IoError";
    case ErrorCode::kVersionMismatch: return "VersionMismatch";
    case ErrorCode::kEmptySplit: return "EmptySplit";
    case ErrorCode::kConfigInvalid: return "ConfigInvalid";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& what)
    : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

Error Error::at_line(ErrorCode code, std::size_t line, const std::string& what) {
  Error e(code, "line " + std::to_string(line) + ": " + what);
  e.line_ = line;
  return e;
}

Error Error::at_step(ErrorCode code, std::size_t step, const std::string& what) {
  Error e(code, "step " + std::to_string(step) + ": " + what);
  e.step_ = step;
  return e;
}

}  // namespace cembed
