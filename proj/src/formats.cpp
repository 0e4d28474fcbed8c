#include "sparseffn/formats.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

#include "sparseffn/parallel.hpp"

namespace sparseffn {

void TwellConfig::check(std::size_t cols) const {
  if (tile == 0 || compress == 0 || tile % compress != 0) {
    std::ostringstream os;
    os << "TwellConfig: tile " << tile << " must be a positive multiple of compression " << compress;
    throw Error(ErrorCode::InvalidArgument, os.str());
  }
  if (cols != 0 && cols % tile != 0) {
    std::ostringstream os;
    os << "TwellConfig: width " << cols << " is not divisible by tile " << tile;
    throw Error(ErrorCode::InvalidArgument, os.str());
  }
}

template <class T>
TwellMatrix<T>::TwellMatrix(std::size_t r, std::size_t c, TwellConfig cfg)
    : rows(r), cols(c), config(cfg) {
  config.check(cols);
  values.assign(rows * stored_cols(), T{0});
  indices.assign(rows * stored_cols(), 0);
  nnz.assign(rows * tiles(), 0);
}

template <class T>
std::uint64_t TwellMatrix<T>::total_nnz() const noexcept {
  return std::accumulate(nnz.begin(), nnz.end(), std::uint64_t{0});
}

template <class T>
std::uint64_t TwellMatrix<T>::row_nnz(std::size_t r) const noexcept {
  std::uint64_t s = 0;
  for (std::size_t t = 0; t < tiles(); ++t) s += tile_nnz(r, t);
  return s;
}

std::uint64_t HybridPattern::total_nnz() const noexcept {
  return std::accumulate(row_nnz.begin(), row_nnz.end(), std::uint64_t{0});
}

std::size_t HybridPattern::dense_rows() const noexcept {
  return static_cast<std::size_t>(std::count(routing.begin(), routing.end(), std::uint8_t{1}));
}

template <class T>
HybridMatrix<T>::HybridMatrix(PatternPtr p) : pattern(std::move(p)) {
  ell_vals.assign(pattern->rows * pattern->ell_width, T{0});
  tail_vals.assign(pattern->tail_count() * pattern->cols, T{0});
}

bool same_pattern(const PatternPtr& a, const PatternPtr& b) noexcept {
  if (a == b) return true;
  if (!a || !b) return false;
  return *a == *b;
}

namespace {

template <class T>
inline bool keep(T v, PackPredicate p) noexcept {
  return p == PackPredicate::positive ? v > T{0} : v != T{0};
}

// Routing and tail allocation from true row counts. Tail slots are handed out
// in row order, so the layout is independent of worker count.
HybridPattern route_rows(std::size_t rows, std::size_t cols, std::size_t ell_width,
                         std::size_t dense_cap, std::vector<std::uint32_t> row_nnz) {
  HybridPattern p;
  p.rows = rows;
  p.cols = cols;
  p.ell_width = ell_width;
  p.dense_cap = dense_cap;
  p.row_nnz = std::move(row_nnz);
  p.ell_cols.assign(rows * ell_width, 0);
  p.routing.assign(rows, 0);
  p.tail_map.assign(rows, -1);
  for (std::size_t r = 0; r < rows; ++r) {
    if (p.row_nnz[r] <= ell_width) continue;
    p.routing[r] = 1;
    if (p.tail_rows.size() < dense_cap) {
      p.tail_map[r] = static_cast<std::int32_t>(p.tail_rows.size());
      p.tail_rows.push_back(static_cast<std::uint32_t>(r));
    } else {
      p.overflow = true;
    }
  }
  p.tail_support.assign(p.tail_rows.size() * cols, 0);
  return p;
}

Violation violation(ViolationKind kind, std::size_t row, std::size_t where, std::string detail) {
  return Violation{kind, row, where, std::move(detail)};
}

}  // namespace

PatternPtr empty_pattern(std::size_t rows, std::size_t cols, std::size_t ell_width,
                         std::size_t dense_cap) {
  return std::make_shared<const HybridPattern>(
      route_rows(rows, cols, ell_width, dense_cap, std::vector<std::uint32_t>(rows, 0)));
}

template <class T>
TwellMatrix<T> dense_to_twell(const Matrix<T>& dense, const TwellConfig& cfg,
                              PackPredicate predicate) {
  TwellMatrix<T> tw(dense.rows(), dense.cols(), cfg);
  const std::size_t tile = cfg.tile;
  const std::size_t slots = tw.slots();
  parallel_for(
      dense.rows(),
      [&](std::size_t r0, std::size_t r1) {
        for (std::size_t r = r0; r < r1; ++r) {
          const auto row = dense.row(r);
          for (std::size_t t = 0; t < tw.tiles(); ++t) {
            const std::size_t base = tw.slot_offset(r, t);
            std::uint32_t z = 0;
            for (std::size_t c = t * tile; c < (t + 1) * tile; ++c) {
              if (!keep(row[c], predicate)) continue;
              if (z == slots) {
                std::ostringstream os;
                os << "OverflowTile: row " << r << " tile " << t << " holds more than " << slots
                   << " entries";
                throw Error(ErrorCode::OverflowTile, os.str());
              }
              tw.values[base + z] = row[c];
              tw.indices[base + z] = static_cast<std::uint32_t>(c);
              ++z;
            }
            tw.nnz[r * tw.tiles() + t] = z;
          }
        }
      },
      16);
  return tw;
}

template <class T>
std::optional<Violation> validate(const TwellMatrix<T>& tw) {
  tw.config.check(tw.cols);
  if (tw.values.size() != tw.rows * tw.stored_cols() ||
      tw.indices.size() != tw.rows * tw.stored_cols() || tw.nnz.size() != tw.rows * tw.tiles()) {
    throw Error(ErrorCode::Format, "TwellMatrix: array sizes do not match the declared shape");
  }
  const std::size_t tile = tw.config.tile;
  for (std::size_t r = 0; r < tw.rows; ++r) {
    for (std::size_t t = 0; t < tw.tiles(); ++t) {
      const std::uint32_t z = tw.tile_nnz(r, t);
      if (z > tw.slots()) {
        return violation(ViolationKind::CountExceedsSlots, r, t,
                         "count " + std::to_string(z) + " > " + std::to_string(tw.slots()) + " slots");
      }
      const std::size_t base = tw.slot_offset(r, t);
      for (std::uint32_t c = 0; c < z; ++c) {
        const std::uint32_t idx = tw.indices[base + c];
        if (idx < t * tile || idx >= (t + 1) * tile) {
          return violation(ViolationKind::IndexOutOfTile, r, t,
                           "column " + std::to_string(idx) + " in slot " + std::to_string(c));
        }
        if (c > 0 && idx <= tw.indices[base + c - 1]) {
          return violation(ViolationKind::NonMonotoneIndices, r, t, "slot " + std::to_string(c));
        }
      }
    }
  }
  return std::nullopt;
}

template <class T>
Matrix<T> twell_to_dense(const TwellMatrix<T>& tw) {
  if (auto v = validate(tw)) throw ValidationError(*v);
  Matrix<T> out(tw.rows, tw.cols);
  for (std::size_t r = 0; r < tw.rows; ++r) {
    auto row = out.row(r);
    for (std::size_t t = 0; t < tw.tiles(); ++t) {
      const std::size_t base = tw.slot_offset(r, t);
      for (std::uint32_t c = 0; c < tw.tile_nnz(r, t); ++c) row[tw.indices[base + c]] = tw.values[base + c];
    }
  }
  return out;
}

template <class T>
TwellToHybrid<T> twell_to_hybrid(const TwellMatrix<T>& tw, std::size_t ell_width,
                                 std::size_t dense_cap, bool want_stats) {
  const std::size_t rows = tw.rows;
  const std::size_t tiles = tw.tiles();
  std::vector<std::uint32_t> counts(rows);
  for (std::size_t r = 0; r < rows; ++r) counts[r] = static_cast<std::uint32_t>(tw.row_nnz(r));

  auto pattern = std::make_shared<HybridPattern>(
      route_rows(rows, tw.cols, ell_width, dense_cap, std::move(counts)));
  TwellToHybrid<T> out;
  out.hybrid.ell_vals.assign(rows * ell_width, T{0});
  out.hybrid.tail_vals.assign(pattern->tail_count() * tw.cols, T{0});

  parallel_for(
      rows,
      [&](std::size_t r0, std::size_t r1) {
        for (std::size_t r = r0; r < r1; ++r) {
          if (!pattern->is_dense(r)) {
            // Exclusive prefix sum of tile counts gives each tile's offset.
            std::size_t offset = 0;
            for (std::size_t t = 0; t < tiles; ++t) {
              const std::size_t base = tw.slot_offset(r, t);
              const std::uint32_t z = tw.tile_nnz(r, t);
              for (std::uint32_t c = 0; c < z; ++c) {
                pattern->ell_cols[r * ell_width + offset + c] = tw.indices[base + c];
                out.hybrid.ell_vals[r * ell_width + offset + c] = tw.values[base + c];
              }
              offset += z;
            }
          } else if (pattern->tail_map[r] >= 0) {
            const std::size_t slot = static_cast<std::size_t>(pattern->tail_map[r]);
            T* dst = out.hybrid.tail_vals.data() + slot * tw.cols;
            std::uint8_t* sup = pattern->tail_support.data() + slot * tw.cols;
            for (std::size_t t = 0; t < tiles; ++t) {
              const std::size_t base = tw.slot_offset(r, t);
              for (std::uint32_t c = 0; c < tw.tile_nnz(r, t); ++c) {
                dst[tw.indices[base + c]] = tw.values[base + c];
                sup[tw.indices[base + c]] = 1;
              }
            }
          }
        }
      },
      64);

  if (want_stats && rows > 0) {
    double l0 = 0.0;
    double l1 = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
      l0 += pattern->row_nnz[r];
      for (std::size_t t = 0; t < tiles; ++t) {
        const std::size_t base = tw.slot_offset(r, t);
        for (std::uint32_t c = 0; c < tw.tile_nnz(r, t); ++c) l1 += static_cast<double>(tw.values[base + c]);
      }
    }
    out.l0 = l0 / static_cast<double>(rows);
    out.l1 = l1 / static_cast<double>(rows);
  }
  out.hybrid.pattern = std::move(pattern);
  return out;
}

std::optional<Violation> validate(const HybridPattern& p) {
  if (p.row_nnz.size() != p.rows || p.ell_cols.size() != p.rows * p.ell_width ||
      p.routing.size() != p.rows || p.tail_map.size() != p.rows) {
    throw Error(ErrorCode::Format, "HybridPattern: array sizes do not match the declared shape");
  }
  if (p.tail_support.size() != p.tail_rows.size() * p.cols) {
    return violation(ViolationKind::TailMapInconsistent, 0, p.tail_rows.size(),
                     "tail support does not cover the tail rows");
  }
  if (p.tail_rows.size() > p.dense_cap) {
    return violation(ViolationKind::TailMapInconsistent, 0, p.tail_rows.size(),
                     "tail rows exceed the dense capacity " + std::to_string(p.dense_cap));
  }
  for (std::size_t s = 0; s < p.tail_rows.size(); ++s) {
    const std::uint32_t r = p.tail_rows[s];
    if (r >= p.rows || p.tail_map[r] != static_cast<std::int32_t>(s)) {
      return violation(ViolationKind::TailMapInconsistent, r < p.rows ? r : 0, s,
                       "reverse map does not invert the tail map");
    }
  }
  for (std::size_t r = 0; r < p.rows; ++r) {
    const std::uint32_t n = p.row_nnz[r];
    const bool dense = p.routing[r] != 0;
    if (dense != (n > p.ell_width)) {
      return violation(ViolationKind::RoutingMismatch, r, n,
                       "count " + std::to_string(n) + " vs ELL width " + std::to_string(p.ell_width) +
                           (dense ? " routed dense" : " routed sparse"));
    }
    if (!dense) {
      if (p.tail_map[r] != -1) {
        return violation(ViolationKind::TailMapInconsistent, r, 0, "sparse row owns a tail slot");
      }
      const std::uint32_t* c = p.ell_cols.data() + r * p.ell_width;
      for (std::uint32_t k = 0; k < n; ++k) {
        if (c[k] >= p.cols) {
          return violation(ViolationKind::IndexOutOfTile, r, k, "column " + std::to_string(c[k]));
        }
        if (k > 0 && c[k] <= c[k - 1]) {
          return violation(ViolationKind::NonMonotoneIndices, r, k, "slot " + std::to_string(k));
        }
      }
      continue;
    }
    const std::int32_t slot = p.tail_map[r];
    if (slot < 0) {
      if (!p.overflow) {
        return violation(ViolationKind::TailMapInconsistent, r, 0,
                         "dense row has no tail slot and no overflow is flagged");
      }
      continue;
    }
    if (static_cast<std::size_t>(slot) >= p.tail_rows.size() || p.tail_rows[slot] != r) {
      return violation(ViolationKind::TailMapInconsistent, r, static_cast<std::size_t>(slot),
                       "tail map points to a slot owned by another row");
    }
    const std::uint8_t* sup = p.tail_support.data() + static_cast<std::size_t>(slot) * p.cols;
    const auto support = static_cast<std::uint32_t>(std::count(sup, sup + p.cols, std::uint8_t{1}));
    if (support != n) {
      return violation(ViolationKind::TailMapInconsistent, r, static_cast<std::size_t>(slot),
                       "tail support " + std::to_string(support) + " != count " + std::to_string(n));
    }
  }
  return std::nullopt;
}

template <class T>
std::optional<Violation> validate(const HybridMatrix<T>& h) {
  if (!h.pattern) throw Error(ErrorCode::Format, "HybridMatrix: missing pattern");
  const auto& p = *h.pattern;
  if (h.ell_vals.size() != p.rows * p.ell_width || h.tail_vals.size() != p.tail_count() * p.cols) {
    throw Error(ErrorCode::Format, "HybridMatrix: value arrays do not match the pattern");
  }
  return validate(p);
}

template <class T>
Matrix<T> hybrid_to_dense_matrix(const HybridMatrix<T>& h) {
  if (auto v = validate(h)) throw ValidationError(*v);
  const auto& p = *h.pattern;
  Matrix<T> out(p.rows, p.cols);
  for (std::size_t r = 0; r < p.rows; ++r) {
    auto row = out.row(r);
    if (!p.is_dense(r)) {
      for (std::uint32_t k = 0; k < p.row_nnz[r]; ++k) {
        row[p.ell_cols[r * p.ell_width + k]] = h.ell_vals[r * p.ell_width + k];
      }
    } else if (p.tail_map[r] >= 0) {
      const T* src = h.tail_vals.data() + static_cast<std::size_t>(p.tail_map[r]) * p.cols;
      std::copy(src, src + p.cols, row.begin());
    }
  }
  return out;
}

template <class T>
HybridMatrix<T> dense_to_hybrid(const Matrix<T>& dense, std::size_t ell_width,
                                std::size_t dense_cap, PackPredicate predicate) {
  std::vector<std::uint32_t> counts(dense.rows());
  for (std::size_t r = 0; r < dense.rows(); ++r) {
    const auto row = dense.row(r);
    counts[r] = static_cast<std::uint32_t>(
        std::count_if(row.begin(), row.end(), [&](T v) { return keep(v, predicate); }));
  }
  auto pattern = std::make_shared<HybridPattern>(
      route_rows(dense.rows(), dense.cols(), ell_width, dense_cap, std::move(counts)));
  HybridMatrix<T> out;
  out.ell_vals.assign(dense.rows() * ell_width, T{0});
  out.tail_vals.assign(pattern->tail_count() * dense.cols(), T{0});
  for (std::size_t r = 0; r < dense.rows(); ++r) {
    const auto row = dense.row(r);
    if (!pattern->is_dense(r)) {
      std::size_t k = 0;
      for (std::size_t c = 0; c < dense.cols(); ++c) {
        if (!keep(row[c], predicate)) continue;
        pattern->ell_cols[r * ell_width + k] = static_cast<std::uint32_t>(c);
        out.ell_vals[r * ell_width + k] = row[c];
        ++k;
      }
    } else if (pattern->tail_map[r] >= 0) {
      const std::size_t slot = static_cast<std::size_t>(pattern->tail_map[r]);
      for (std::size_t c = 0; c < dense.cols(); ++c) {
        if (!keep(row[c], predicate)) continue;
        out.tail_vals[slot * dense.cols() + c] = row[c];
        pattern->tail_support[slot * dense.cols() + c] = 1;
      }
    }
  }
  out.pattern = std::move(pattern);
  return out;
}

template <class T>
EllMatrix<T> dense_to_ell(const Matrix<T>& dense, std::size_t width, PackPredicate predicate) {
  EllMatrix<T> ell;
  ell.rows = dense.rows();
  ell.cols = dense.cols();
  ell.width = width;
  ell.vals.assign(ell.rows * width, T{0});
  ell.col_idx.assign(ell.rows * width, 0);
  ell.row_nnz.assign(ell.rows, 0);
  for (std::size_t r = 0; r < ell.rows; ++r) {
    const auto row = dense.row(r);
    std::uint32_t k = 0;
    for (std::size_t c = 0; c < ell.cols; ++c) {
      if (!keep(row[c], predicate)) continue;
      if (k < width) {
        ell.vals[r * width + k] = row[c];
        ell.col_idx[r * width + k] = static_cast<std::uint32_t>(c);
      }
      ++k;
    }
    ell.row_nnz[r] = k;
  }
  return ell;
}

template <class T>
std::optional<Violation> validate(const EllMatrix<T>& ell) {
  if (ell.vals.size() != ell.rows * ell.width || ell.col_idx.size() != ell.rows * ell.width ||
      ell.row_nnz.size() != ell.rows) {
    throw Error(ErrorCode::Format, "EllMatrix: array sizes do not match the declared shape");
  }
  for (std::size_t r = 0; r < ell.rows; ++r) {
    const std::size_t valid = std::min<std::size_t>(ell.row_nnz[r], ell.width);
    for (std::size_t k = 0; k < valid; ++k) {
      const std::uint32_t c = ell.col_idx[r * ell.width + k];
      if (c >= ell.cols) {
        return violation(ViolationKind::IndexOutOfTile, r, k, "column " + std::to_string(c));
      }
      if (k > 0 && c <= ell.col_idx[r * ell.width + k - 1]) {
        return violation(ViolationKind::NonMonotoneIndices, r, k, "slot " + std::to_string(k));
      }
    }
  }
  return std::nullopt;
}

template <class T>
Matrix<T> ell_to_dense(const EllMatrix<T>& ell) {
  if (auto v = validate(ell)) throw ValidationError(*v);
  Matrix<T> out(ell.rows, ell.cols);
  for (std::size_t r = 0; r < ell.rows; ++r) {
    if (ell.row_nnz[r] > ell.width) {
      throw ValidationError(violation(ViolationKind::CountExceedsSlots, r, ell.row_nnz[r],
                                      "row does not fit the ELL width"));
    }
    for (std::size_t k = 0; k < ell.row_nnz[r]; ++k) {
      out(r, ell.col_idx[r * ell.width + k]) = ell.vals[r * ell.width + k];
    }
  }
  return out;
}

PackedTwell twell_pack_words(const TwellMatrix<float>& tw) {
  tw.config.check(tw.cols);
  if (tw.slots() < 2) {
    throw Error(ErrorCode::InvalidArgument, "twell_pack_words: needs at least two slots per tile");
  }
  if (tw.cols >= (std::size_t{1} << 16)) {
    throw Error(ErrorCode::IndexWidthExceeded,
                "IndexWidthExceeded: width " + std::to_string(tw.cols) + " does not fit 16-bit indices");
  }
  PackedTwell packed;
  packed.rows = tw.rows;
  packed.cols = tw.cols;
  packed.config = tw.config;
  packed.words.assign(tw.rows * tw.stored_cols(), 0);
  const std::size_t capacity = tw.slots() - 1;
  for (std::size_t r = 0; r < tw.rows; ++r) {
    for (std::size_t t = 0; t < tw.tiles(); ++t) {
      const std::uint32_t z = tw.tile_nnz(r, t);
      if (z > capacity) {
        std::ostringstream os;
        os << "OverflowTile: row " << r << " tile " << t << " holds " << z
           << " entries, packed capacity is " << capacity;
        throw Error(ErrorCode::OverflowTile, os.str());
      }
      const std::size_t base = tw.slot_offset(r, t);
      packed.words[base] = z;
      for (std::uint32_t c = 0; c < z; ++c) {
        packed.words[base + 1 + c] = (tw.indices[base + c] & 0xFFFFu) |
                                     (static_cast<std::uint32_t>(encode_bf16(tw.values[base + c])) << 16);
      }
    }
  }
  return packed;
}

TwellMatrix<float> twell_unpack_words(const PackedTwell& packed) {
  TwellMatrix<float> tw(packed.rows, packed.cols, packed.config);
  if (packed.words.size() != tw.rows * tw.stored_cols()) {
    throw Error(ErrorCode::Format, "PackedTwell: word count does not match the declared shape");
  }
  for (std::size_t r = 0; r < tw.rows; ++r) {
    for (std::size_t t = 0; t < tw.tiles(); ++t) {
      const std::size_t base = tw.slot_offset(r, t);
      const std::uint32_t z = packed.words[base];
      if (z + 1 > tw.slots()) {
        throw ValidationError(violation(ViolationKind::CountExceedsSlots, r, t,
                                        "packed count " + std::to_string(z)));
      }
      tw.nnz[r * tw.tiles() + t] = z;
      for (std::uint32_t c = 0; c < z; ++c) {
        const std::uint32_t w = packed.words[base + 1 + c];
        tw.indices[base + c] = w & 0xFFFFu;
        tw.values[base + c] = decode_bf16(static_cast<std::uint16_t>(w >> 16));
      }
    }
  }
  return tw;
}

#define SPARSEFFN_INSTANTIATE(T)                                                                  \
  template struct TwellMatrix<T>;                                                                 \
  template struct HybridMatrix<T>;                                                                \
  template TwellMatrix<T> dense_to_twell<T>(const Matrix<T>&, const TwellConfig&, PackPredicate); \
  template Matrix<T> twell_to_dense<T>(const TwellMatrix<T>&);                                    \
  template TwellToHybrid<T> twell_to_hybrid<T>(const TwellMatrix<T>&, std::size_t, std::size_t,   \
                                               bool);                                             \
  template Matrix<T> hybrid_to_dense_matrix<T>(const HybridMatrix<T>&);                           \
  template HybridMatrix<T> dense_to_hybrid<T>(const Matrix<T>&, std::size_t, std::size_t,         \
                                              PackPredicate);                                     \
  template EllMatrix<T> dense_to_ell<T>(const Matrix<T>&, std::size_t, PackPredicate);            \
  template Matrix<T> ell_to_dense<T>(const EllMatrix<T>&);                                        \
  template std::optional<Violation> validate<T>(const TwellMatrix<T>&);                           \
  template std::optional<Violation> validate<T>(const EllMatrix<T>&);                             \
  template std::optional<Violation> validate<T>(const HybridMatrix<T>&);

SPARSEFFN_INSTANTIATE(float)
SPARSEFFN_INSTANTIATE(double)

#undef SPARSEFFN_INSTANTIATE

}  // namespace sparseffn
