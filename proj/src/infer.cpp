#include "sparseffn/infer.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <sstream>
#include <vector>

#include "sparseffn/parallel.hpp"

namespace sparseffn {

namespace {

void hilbert_rot(std::size_t s, std::size_t& x, std::size_t& y, std::size_t rx, std::size_t ry) {
  if (ry != 0) return;
  if (rx == 1) {
    x = s - 1 - x;
    y = s - 1 - y;
  }
  std::swap(x, y);
}

template <class T>
inline T store_round(T v, Precision p) noexcept {
  if constexpr (std::is_same_v<T, float>) {
    if (p == Precision::bf16) return round_bf16(v);
  }
  return v;
}

// Dots of R rows of `a` against one shared vector. Each row keeps 32
// partial sums reduced pairwise, so a row's result does not depend on R.
constexpr std::size_t kDotLanes = 32;

template <std::size_t R, class T>
void dot_rows(const T* const* a, const T* b, std::size_t n, T* out) noexcept {
  T s[R][kDotLanes] = {};
  const std::size_t full = n - n % kDotLanes;
  for (std::size_t r = 0; r < R; ++r) {
    const T* __restrict ar = a[r];
    T* __restrict sr = s[r];
    for (std::size_t j = 0; j < full; j += kDotLanes) {
      for (std::size_t l = 0; l < kDotLanes; ++l) sr[l] += ar[j + l] * b[j + l];
    }
    for (std::size_t l = 0; l < n - full; ++l) sr[l] += ar[full + l] * b[full + l];
  }
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t w = kDotLanes / 2; w >= 1; w /= 2) {
      for (std::size_t l = 0; l < w; ++l) s[r][l] = s[r][2 * l] + s[r][2 * l + 1];
    }
    out[r] = s[r][0];
  }
}

// y_r += alpha_r·x for R rows sharing x.
template <std::size_t R, class T>
void axpy_rows(const T* alpha, const T* x, T* const* y, std::size_t n) noexcept {
  for (std::size_t r = 0; r < R; ++r) {
    T* __restrict yr = y[r];
    const T* __restrict xr = x;
    const T ar = alpha[r];
    for (std::size_t i = 0; i < n; ++i) yr[i] += ar * xr[i];
  }
}

}  // namespace

TileSchedule hilbert_schedule(std::size_t grid_m, std::size_t grid_n) {
  if (grid_m == 0 || grid_n == 0) throw Error(ErrorCode::InvalidArgument, "hilbert_schedule: empty grid");
  TileSchedule sched;
  sched.grid_m = grid_m;
  sched.grid_n = grid_n;
  sched.order.reserve(grid_m * grid_n);
  const std::size_t side = std::bit_ceil(std::max(grid_m, grid_n));
  for (std::size_t d = 0; d < side * side; ++d) {
    std::size_t x = 0, y = 0, t = d;
    for (std::size_t s = 1; s < side; s *= 2) {
      const std::size_t rx = 1 & (t / 2);
      const std::size_t ry = 1 & (t ^ rx);
      hilbert_rot(s, x, y, rx, ry);
      x += s * rx;
      y += s * ry;
      t /= 4;
    }
    if (x < grid_m && y < grid_n) {
      sched.order.emplace_back(static_cast<std::uint32_t>(x), static_cast<std::uint32_t>(y));
    }
  }
  return sched;
}

template <class T>
TwellMatrix<T> gate_project_twell(const Matrix<T>& x, const Matrix<T>& W_g, const TwellConfig& cfg,
                                  Precision precision, KernelStats* stats, std::size_t tile_rows) {
  if (x.cols() != W_g.rows()) throw_dims("gate_project_twell", x.rows(), x.cols(), W_g.rows(), W_g.cols());
  cfg.check(W_g.cols());
  if (tile_rows == 0) throw Error(ErrorCode::InvalidArgument, "gate_project_twell: tile_rows must be positive");
  const std::size_t M = x.rows(), K = x.cols(), N = W_g.cols();
  TwellMatrix<T> tw(M, N, cfg);
  const std::size_t tile = cfg.tile;
  const std::size_t slots = tw.slots();
  if (M == 0 || N == 0) return tw;

  const TileSchedule sched = hilbert_schedule((M + tile_rows - 1) / tile_rows, tw.tiles());
  parallel_for(sched.order.size(), [&](std::size_t b, std::size_t e) {
    std::vector<T> strip(tile_rows * tile);
    for (std::size_t i = b; i < e; ++i) {
      const auto [tr, tc] = sched.order[i];
      const std::size_t r0 = tr * tile_rows;
      const std::size_t rows = std::min(tile_rows, M - r0);
      const std::size_t c0 = std::size_t{tc} * tile;
      detail::gemm(x.data() + r0 * K, K, W_g.data() + c0, N, strip.data(), tile, rows, tile, K);
      for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t base = tw.slot_offset(r0 + r, tc);
        const T* src = strip.data() + r * tile;
        std::uint32_t z = 0;
        for (std::size_t c = 0; c < tile; ++c) {
          const T v = store_round(src[c], precision);
          if (!(v > T{0})) continue;
          if (z == slots) {
            std::ostringstream os;
            os << "OverflowTile: row " << r0 + r << " tile " << tc << " holds more than " << slots
               << " entries";
            throw Error(ErrorCode::OverflowTile, os.str());
          }
          tw.values[base + z] = v;
          tw.indices[base + z] = static_cast<std::uint32_t>(c0 + c);
          ++z;
        }
        tw.nnz[(r0 + r) * tw.tiles() + tc] = z;
      }
    }
  });
  if (stats) {
    stats->macs += static_cast<std::uint64_t>(M) * N * K;
    stats->note_scratch(tile_rows * tile);
  }
  return tw;
}

template <class T>
Matrix<T> fused_up_down_t(const Matrix<T>& x, const TwellMatrix<T>& h_g, const Matrix<T>& W_u_t,
                          const Matrix<T>& W_d, Precision precision, KernelStats* stats) {
  const std::size_t M = x.rows(), K = x.cols(), N = h_g.cols;
  if (h_g.rows != M) throw_dims("fused_up_down gate rows", h_g.rows, h_g.cols, x.rows(), x.cols());
  if (W_u_t.rows() != N || W_u_t.cols() != K) throw_dims("fused_up_down W_u", W_u_t.cols(), W_u_t.rows(), K, N);
  if (W_d.rows() != N || W_d.cols() != K) throw_dims("fused_up_down W_d", W_d.rows(), W_d.cols(), N, K);

  // Rows are handled in blocks of kFusedRows. Within a block the stored
  // entries are regrouped by neuron so each W_u/W_d row pair is read once per
  // block, and up to four dots share each pass over W_u. Every output row
  // still accumulates in ascending neuron order.
  constexpr std::size_t kFusedRows = 512;
  Matrix<T> y(M, K);
  const std::size_t blocks = (M + kFusedRows - 1) / kFusedRows;
  std::atomic<std::uint64_t> macs{0};
  std::atomic<std::size_t> scratch{0};
  parallel_for(blocks, [&](std::size_t b, std::size_t e) {
    std::vector<std::uint32_t> start(N + 1);
    std::vector<std::uint32_t> fill(N);
    std::vector<std::uint32_t> rows;
    std::vector<T> vals;
    std::vector<T> u;
    std::uint64_t local = 0;
    for (std::size_t blk = b; blk < e; ++blk) {
      const std::size_t m0 = blk * kFusedRows, m1 = std::min(M, m0 + kFusedRows);
      std::fill(start.begin(), start.end(), 0u);
      for (std::size_t m = m0; m < m1; ++m) {
        for (std::size_t t = 0; t < h_g.tiles(); ++t) {
          const std::size_t base = h_g.slot_offset(m, t);
          for (std::uint32_t s = 0; s < h_g.tile_nnz(m, t); ++s) ++start[h_g.indices[base + s] + 1];
        }
      }
      for (std::size_t n = 0; n < N; ++n) start[n + 1] += start[n];
      const std::size_t count = start[N];
      rows.resize(count);
      vals.resize(count);
      u.resize(count);
      std::copy(start.begin(), start.end() - 1, fill.begin());
      for (std::size_t m = m0; m < m1; ++m) {
        for (std::size_t t = 0; t < h_g.tiles(); ++t) {
          const std::size_t base = h_g.slot_offset(m, t);
          for (std::uint32_t s = 0; s < h_g.tile_nnz(m, t); ++s) {
            const std::uint32_t slot = fill[h_g.indices[base + s]]++;
            rows[slot] = static_cast<std::uint32_t>(m);
            vals[slot] = h_g.values[base + s];
          }
        }
      }
      if (count == 0) continue;

      for (std::size_t n = 0; n < N; ++n) {
        const T* wu = W_u_t.data() + n * K;
        std::uint32_t i = start[n];
        const auto run = [&]<std::size_t R>() {
          const T* xr[R];
          for (std::size_t r = 0; r < R; ++r) xr[r] = x.data() + rows[i + r] * K;
          dot_rows<R>(xr, wu, K, u.data() + i);
          i += R;
        };
        while (i + 4 <= start[n + 1]) run.template operator()<4>();
        while (i < start[n + 1]) run.template operator()<1>();
      }
      for (std::size_t j = 0; j < count; ++j) u[j] = vals[j] * store_round(u[j], precision);
      for (std::size_t n = 0; n < N; ++n) {
        const T* wd = W_d.data() + n * K;
        std::uint32_t i = start[n];
        const auto run = [&]<std::size_t R>() {
          T* yr[R];
          for (std::size_t r = 0; r < R; ++r) yr[r] = y.data() + rows[i + r] * K;
          axpy_rows<R>(u.data() + i, wd, yr, K);
          i += R;
        };
        while (i + 4 <= start[n + 1]) run.template operator()<4>();
        while (i < start[n + 1]) run.template operator()<1>();
      }
      local += 2 * K * count;
      if (precision == Precision::bf16) {
        for (std::size_t m = m0; m < m1; ++m) {
          T* yr = y.data() + m * K;
          for (std::size_t c = 0; c < K; ++c) yr[c] = store_round(yr[c], precision);
        }
      }
      std::size_t used = start.size() + fill.size() + rows.size() + vals.size() + u.size();
      std::size_t seen = scratch.load(std::memory_order_relaxed);
      while (used > seen && !scratch.compare_exchange_weak(seen, used)) {
      }
    }
    macs.fetch_add(local, std::memory_order_relaxed);
  });
  if (stats) {
    stats->macs += macs.load();
    stats->note_scratch(scratch.load());
  }
  return y;
}

template <class T>
Matrix<T> fused_up_down(const Matrix<T>& x, const TwellMatrix<T>& h_g, const Matrix<T>& W_u,
                        const Matrix<T>& W_d, Precision precision, KernelStats* stats) {
  if (W_u.rows() != x.cols()) throw_dims("fused_up_down W_u", W_u.rows(), W_u.cols(), x.cols(), h_g.cols);
  return fused_up_down_t(x, h_g, transpose_dense(W_u), W_d, precision, stats);
}

template <class T>
Matrix<T> down_project_twell(const TwellMatrix<T>& h, const Matrix<T>& W_d, std::size_t split,
                             Precision precision, KernelStats* stats) {
  if (h.cols != W_d.rows()) throw_dims("down_project_twell", h.rows, h.cols, W_d.rows(), W_d.cols());
  const std::size_t M = h.rows, K = W_d.cols();
  if (split == 0 || K % split != 0) {
    throw Error(ErrorCode::InvalidArgument, "down_project_twell: output width " + std::to_string(K) +
                                                " is not divisible by split " + std::to_string(split));
  }
  const std::size_t width = K / split;
  Matrix<T> y(M, K);
  std::atomic<std::uint64_t> macs{0};
  parallel_for(
      M * split,
      [&](std::size_t b, std::size_t e) {
        std::uint64_t local = 0;
        for (std::size_t job = b; job < e; ++job) {
          const std::size_t m = job / split;
          const std::size_t c0 = (job % split) * width;
          T* yr = y.data() + m * K + c0;
          for (std::size_t t = 0; t < h.tiles(); ++t) {
            const std::size_t base = h.slot_offset(m, t);
            const std::uint32_t z = h.tile_nnz(m, t);
            for (std::uint32_t s = 0; s < z; ++s) {
              detail::axpy(h.values[base + s], W_d.data() + std::size_t{h.indices[base + s]} * K + c0, yr,
                           width);
              local += width;
            }
          }
          if (precision == Precision::bf16) {
            for (std::size_t c = 0; c < width; ++c) yr[c] = store_round(yr[c], precision);
          }
        }
        macs.fetch_add(local, std::memory_order_relaxed);
      },
      4);
  if (stats) stats->macs += macs.load();
  return y;
}

template <class T>
Matrix<T> ffn_forward_infer(const Matrix<T>& x, const FfnWeights<T>& weights,
                            const TwellConfig& cfg, Precision precision, KernelStats* stats) {
  weights.check_input(x);
  if (weights.variant == Variant::gated) {
    const auto h_g = gate_project_twell(x, weights.W_g, cfg, precision, stats);
    return fused_up_down(x, h_g, weights.W_u, weights.W_d, precision, stats);
  }
  const auto h = gate_project_twell(x, weights.W_u, cfg, precision, stats);
  return down_project_twell(h, weights.W_d, 1, precision, stats);
}

template <class T>
Matrix<T> ffn_forward_dense(const Matrix<T>& x, const FfnWeights<T>& weights, Precision precision,
                            KernelStats* stats) {
  weights.check_input(x);
  if (weights.variant == Variant::gated) {
    auto h = relu(matmul_dense(x, weights.W_g, precision, stats));
    const auto u = matmul_dense(x, weights.W_u, precision, stats);
    h = hadamard(h, u);
    for (auto& v : h.values()) v = store_round(v, precision);
    return matmul_dense(h, weights.W_d, precision, stats);
  }
  const auto h = relu(matmul_dense(x, weights.W_u, precision, stats));
  return matmul_dense(h, weights.W_d, precision, stats);
}

#define SPARSEFFN_INSTANTIATE(T)                                                                    \
  template TwellMatrix<T> gate_project_twell<T>(const Matrix<T>&, const Matrix<T>&,                \
                                                const TwellConfig&, Precision, KernelStats*,       \
                                                std::size_t);                                      \
  template Matrix<T> fused_up_down<T>(const Matrix<T>&, const TwellMatrix<T>&, const Matrix<T>&,   \
                                      const Matrix<T>&, Precision, KernelStats*);                  \
  template Matrix<T> fused_up_down_t<T>(const Matrix<T>&, const TwellMatrix<T>&, const Matrix<T>&, \
                                        const Matrix<T>&, Precision, KernelStats*);                \
  template Matrix<T> down_project_twell<T>(const TwellMatrix<T>&, const Matrix<T>&, std::size_t,   \
                                           Precision, KernelStats*);                               \
  template Matrix<T> ffn_forward_infer<T>(const Matrix<T>&, const FfnWeights<T>&,                  \
                                          const TwellConfig&, Precision, KernelStats*);            \
  template Matrix<T> ffn_forward_dense<T>(const Matrix<T>&, const FfnWeights<T>&, Precision,       \
                                          KernelStats*);

SPARSEFFN_INSTANTIATE(float)
SPARSEFFN_INSTANTIATE(double)

#undef SPARSEFFN_INSTANTIATE

}  // namespace sparseffn
