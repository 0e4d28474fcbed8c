#include "sparseffn/error.hpp"

#include <sstream>

namespace sparseffn {

const char* to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::OverflowTile: return "OverflowTile";
    case ErrorCode::IndexWidthExceeded: return "IndexWidthExceeded";
    case ErrorCode::Validation: return "ValidationError";
    case ErrorCode::PatternMismatch: return "PatternMismatch";
    case ErrorCode::CapacityExceeded: return "DenseCapacityExceeded";
    case ErrorCode::Io: return "IoError";
    case ErrorCode::Format: return "FormatError";
    case ErrorCode::NonFinite: return "NonFinite";
  }
  return "Unknown";
}

const char* to_string(ViolationKind kind) noexcept {
  switch (kind) {
    case ViolationKind::IndexOutOfTile: return "IndexOutOfTile";
    case ViolationKind::CountExceedsSlots: return "CountExceedsSlots";
    case ViolationKind::NonMonotoneIndices: return "NonMonotoneIndices";
    case ViolationKind::RoutingMismatch: return "RoutingMismatch";
    case ViolationKind::TailMapInconsistent: return "TailMapInconsistent";
  }
  return "Unknown";
}

std::string Violation::message() const {
  std::ostringstream os;
  os << to_string(kind) << " at row " << row << " (" << where << ")";
  if (!detail.empty()) os << ": " << detail;
  return os.str();
}

void throw_dims(const std::string& op, std::size_t a_rows, std::size_t a_cols,
                std::size_t b_rows, std::size_t b_cols) {
  std::ostringstream os;
  os << op << ": incompatible shapes " << a_rows << "x" << a_cols << " and "
     << b_rows << "x" << b_cols;
  throw Error(ErrorCode::DimensionMismatch, os.str());
}

}  // namespace sparseffn
