#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace cembed {

enum class ErrorCode {
  kZeroVector,
  kDimMismatch,
  kEmptyInput,
  kTemperatureNonPositive,
  kMissingTaskTheta,
  kEmptyText,
  kShapeMismatch,
  kWeightsInvalid,
  kSpecInvalid,
  kNoClassificationData,
  kParseError,
  kDuplicateId,
  kBatchInfeasible,
  kNonFiniteLoss,
  kIoError,
  kVersionMismatch,
  kEmptySplit,
  kConfigInvalid,
};

const char* to_string(ErrorCode code);

// Every failure surfaced by the library. `line()` is set for parse errors
// tied to a line of a JSON Lines file; `step()` for training aborts.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what);

  ErrorCode code() const noexcept { return code_; }
  std::optional<std::size_t> line() const noexcept { return line_; }
  std::optional<std::size_t> step() const noexcept { return step_; }

  static Error at_line(ErrorCode code, std::size_t line, const std::string& what);
  static Error at_step(ErrorCode code, std::size_t step, const std::string& what);

 private:
  ErrorCode code_;
  std::optional<std::size_t> line_;
  std::optional<std::size_t> step_;
};

}  // namespace cembed
