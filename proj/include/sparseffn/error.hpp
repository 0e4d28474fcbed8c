#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace sparseffn {

enum class ErrorCode {
  InvalidArgument,
  DimensionMismatch,
  OverflowTile,
  IndexWidthExceeded,
  Validation,
  PatternMismatch,
  CapacityExceeded,
  Io,
  Format,
  NonFinite,
};

const char* to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Structural rule broken by a sparse container.
enum class ViolationKind {
  IndexOutOfTile,
  CountExceedsSlots,
  NonMonotoneIndices,
  RoutingMismatch,
  TailMapInconsistent,
};

const char* to_string(ViolationKind kind) noexcept;

struct Violation {
  ViolationKind kind;
  std::size_t row = 0;
  // Tile, slot or tail index, depending on the kind.
  std::size_t where = 0;
  std::string detail;

  std::string message() const;
};

class ValidationError : public Error {
 public:
  explicit ValidationError(Violation v)
      : Error(ErrorCode::Validation, v.message()), violation_(std::move(v)) {}

  const Violation& violation() const noexcept { return violation_; }

 private:
  Violation violation_;
};

[[noreturn]] void throw_dims(const std::string& op, std::size_t a_rows,
                             std::size_t a_cols, std::size_t b_rows,
                             std::size_t b_cols);

}  // namespace sparseffn
