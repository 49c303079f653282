#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace disenpoi {

enum class ErrorCode {
  // ingest
  ColumnCountMismatch,
  CoordinateOutOfRange,
  TimestampUnparsable,
  InvalidEncoding,
  EmptyCorpus,
  NoNegativeCandidates,
  InvalidFraction,
  // autodiff
  ShapeMismatch,
  NonFiniteValue,
  NotScalar,
  // evaluator
  DegenerateLabels,
  ManifestMismatch,
  // io / configuration
  Io,
  InvalidConfig,
  CorruptFile,
};

std::string_view to_string(ErrorCode code);

/// Exit-code class an error maps to at the command-line boundary:
/// 1 I/O, 2 data validation, 3 compatibility.
int exit_code_for(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace disenpoi
