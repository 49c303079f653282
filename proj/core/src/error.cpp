#include "disenpoi/error.hpp"

namespace disenpoi {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::ColumnCountMismatch: return "ColumnCountMismatch";
    case ErrorCode::CoordinateOutOfRange: return "CoordinateOutOfRange";
    case ErrorCode::TimestampUnparsable: return "TimestampUnparsable";
    case ErrorCode::InvalidEncoding: return "InvalidEncoding";
    case ErrorCode::EmptyCorpus: return "EmptyCorpus";
    case ErrorCode::NoNegativeCandidates: return "NoNegativeCandidates";
    case ErrorCode::InvalidFraction: return "InvalidFraction";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NonFiniteValue: return "NonFiniteValue";
    case ErrorCode::NotScalar: return "NotScalar";
    case ErrorCode::DegenerateLabels: return "DegenerateLabels";
    case ErrorCode::ManifestMismatch: return "ManifestMismatch";
    case ErrorCode::Io: return "Io";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::CorruptFile: return "CorruptFile";
  }
  return "Unknown";
}

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::Io:
      return 1;
    case ErrorCode::ManifestMismatch:
    case ErrorCode::ShapeMismatch:
      return 3;
    default:
      return 2;
  }
}

}  // namespace disenpoi
