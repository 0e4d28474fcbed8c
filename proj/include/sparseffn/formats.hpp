#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include "sparseffn/tensor.hpp"

namespace sparseffn {

// Which dense elements a packing keeps.
enum class PackPredicate {
  positive,  // v > 0, the post-ReLU rule
  nonzero,   // v != 0, for generic matrices such as gradients
};

struct TwellConfig {
  std::size_t tile = 256;      // T: columns per horizontal tile
  std::size_t compress = 8;    // C: storage shrink factor

  std::size_t slots_per_tile() const noexcept { return compress == 0 ? 0 : tile / compress; }
  // Throws InvalidArgument unless T % C == 0, T/C >= 1 and, when given,
  // cols % T == 0.
  void check(std::size_t cols = 0) const;
};

// Tile-wise ELLPACK. Each row is split into N/T horizontal tiles; a tile keeps
// its kept elements left-aligned in T/C slots with global column indices and a
// per-tile count. Slots past the count are never read.
template <class T>
struct TwellMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  TwellConfig config;
  std::vector<T> values;               // rows x cols/C
  std::vector<std::uint32_t> indices;  // rows x cols/C, global columns
  std::vector<std::uint32_t> nnz;      // rows x cols/T

  TwellMatrix() = default;
  TwellMatrix(std::size_t rows, std::size_t cols, TwellConfig cfg);

  std::size_t tiles() const noexcept { return config.tile == 0 ? 0 : cols / config.tile; }
  std::size_t slots() const noexcept { return config.slots_per_tile(); }
  std::size_t stored_cols() const noexcept { return tiles() * slots(); }

  std::size_t slot_offset(std::size_t r, std::size_t t) const noexcept {
    return r * stored_cols() + t * slots();
  }
  std::uint32_t tile_nnz(std::size_t r, std::size_t t) const noexcept { return nnz[r * tiles() + t]; }
  std::uint64_t total_nnz() const noexcept;
  std::uint64_t row_nnz(std::size_t r) const noexcept;
};

// ELLPACK-R: fixed-width rows plus the true per-row count, which may exceed
// the width. Only the first min(count, width) slots of a row are meaningful.
template <class T>
struct EllMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t width = 0;
  std::vector<T> vals;                 // rows x width
  std::vector<std::uint32_t> col_idx;  // rows x width
  std::vector<std::uint32_t> row_nnz;  // rows
};

// Structure of a hybrid matrix, shared between all matrices computed on the
// same sparsity pattern. Rows whose true count exceeds ell_width are routed to
// a dense tail of at most dense_cap rows; rows beyond that capacity are
// dropped and flagged.
struct HybridPattern {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t ell_width = 0;
  std::size_t dense_cap = 0;
  std::vector<std::uint32_t> row_nnz;   // true counts
  std::vector<std::uint32_t> ell_cols;  // rows x ell_width
  std::vector<std::uint8_t> routing;    // 1 = dense row
  std::vector<std::int32_t> tail_map;   // row -> tail slot, -1 if none
  std::vector<std::uint32_t> tail_rows; // tail slot -> row
  std::vector<std::uint8_t> tail_support;  // tail rows x cols
  bool overflow = false;

  std::size_t tail_count() const noexcept { return tail_rows.size(); }
  bool is_dense(std::size_t r) const noexcept { return routing[r] != 0; }
  std::uint64_t total_nnz() const noexcept;
  std::size_t dense_rows() const noexcept;

  friend bool operator==(const HybridPattern&, const HybridPattern&) = default;
};

using PatternPtr = std::shared_ptr<const HybridPattern>;

template <class T>
struct HybridMatrix {
  PatternPtr pattern;
  std::vector<T> ell_vals;   // rows x ell_width
  std::vector<T> tail_vals;  // tail rows x cols

  HybridMatrix() = default;
  explicit HybridMatrix(PatternPtr p);

  std::size_t rows() const noexcept { return pattern ? pattern->rows : 0; }
  std::size_t cols() const noexcept { return pattern ? pattern->cols : 0; }
  bool overflow() const noexcept { return pattern && pattern->overflow; }
};

// True when the two patterns describe the same structure; pointer-equal
// patterns short-circuit.
bool same_pattern(const PatternPtr& a, const PatternPtr& b) noexcept;

// Empty hybrid of the given shape: every row sparse with count zero.
PatternPtr empty_pattern(std::size_t rows, std::size_t cols, std::size_t ell_width,
                         std::size_t dense_cap);

template <class T>
TwellMatrix<T> dense_to_twell(const Matrix<T>& dense, const TwellConfig& cfg,
                              PackPredicate predicate = PackPredicate::positive);

template <class T>
Matrix<T> twell_to_dense(const TwellMatrix<T>& tw);

template <class T>
struct TwellToHybrid {
  HybridMatrix<T> hybrid;
  double l0 = 0.0;  // mean per-row count
  double l1 = 0.0;  // mean per-row value sum
};

// Compacts each row's tiles into one ELL row. Rows with more than ell_width
// entries are densified into the tail; when the tail is full the extra rows
// are dropped and the pattern's overflow flag is set.
template <class T>
TwellToHybrid<T> twell_to_hybrid(const TwellMatrix<T>& tw, std::size_t ell_width,
                                 std::size_t dense_cap, bool want_stats = true);

template <class T>
Matrix<T> hybrid_to_dense_matrix(const HybridMatrix<T>& h);

// Routes a dense matrix straight into hybrid storage.
template <class T>
HybridMatrix<T> dense_to_hybrid(const Matrix<T>& dense, std::size_t ell_width,
                                std::size_t dense_cap,
                                PackPredicate predicate = PackPredicate::nonzero);

template <class T>
EllMatrix<T> dense_to_ell(const Matrix<T>& dense, std::size_t width,
                          PackPredicate predicate = PackPredicate::nonzero);

// Rows whose count exceeds the width cannot be reconstructed and raise a
// ValidationError.
template <class T>
Matrix<T> ell_to_dense(const EllMatrix<T>& ell);

template <class T> std::optional<Violation> validate(const TwellMatrix<T>& tw);
template <class T> std::optional<Violation> validate(const EllMatrix<T>& ell);
template <class T> std::optional<Violation> validate(const HybridMatrix<T>& h);
std::optional<Violation> validate(const HybridPattern& p);

// 32-bit packed TwELL layout: per (row, tile) the first word holds the count,
// each following word a 16-bit column index (low half) and a brain-float value
// (high half). One slot per tile is given up to the count.
struct PackedTwell {
  std::size_t rows = 0;
  std::size_t cols = 0;
  TwellConfig config;
  std::vector<std::uint32_t> words;  // rows x cols/C

  std::size_t tiles() const noexcept { return config.tile == 0 ? 0 : cols / config.tile; }
  std::size_t slots() const noexcept { return config.slots_per_tile(); }
};

PackedTwell twell_pack_words(const TwellMatrix<float>& tw);
TwellMatrix<float> twell_unpack_words(const PackedTwell& packed);

}  // namespace sparseffn
