#include "sparseffn/train_kernels.hpp"

#include <atomic>
#include <cmath>

#include "sparseffn/parallel.hpp"

namespace sparseffn {

namespace {

template <class T>
inline T store_round(T v, Precision p) noexcept {
  if constexpr (std::is_same_v<T, float>) {
    if (p == Precision::bf16) return round_bf16(v);
  }
  return v;
}

template <class T>
inline T sign_of(T v) noexcept {
  return v > T{0} ? T{1} : (v < T{0} ? T{-1} : T{0});
}

void require_pattern(const PatternPtr& p, const char* op) {
  if (!p) throw Error(ErrorCode::InvalidArgument, std::string(op) + ": missing pattern");
  if (auto v = validate(*p)) throw ValidationError(*v);
}

template <class T>
void require_shared(const HybridMatrix<T>& a, const HybridMatrix<T>& b, const char* op) {
  if (!same_pattern(a.pattern, b.pattern)) {
    throw Error(ErrorCode::PatternMismatch, std::string(op) + ": operands do not share a sparsity pattern");
  }
}

}  // namespace

template <class T>
Matrix<T> hybrid_to_dense_matmul(const HybridMatrix<T>& H, const Matrix<T>& B, Precision precision,
                                 KernelStats* stats) {
  require_pattern(H.pattern, "hybrid_to_dense_matmul");
  const auto& p = *H.pattern;
  if (p.cols != B.rows()) throw_dims("hybrid_to_dense_matmul", p.rows, p.cols, B.rows(), B.cols());
  const std::size_t P = B.cols();
  const std::size_t W = p.ell_width;
  Matrix<T> y(p.rows, P);

  std::atomic<std::uint64_t> macs{0};
  parallel_for(
      p.rows,
      [&](std::size_t b, std::size_t e) {
        std::uint64_t local = 0;
        for (std::size_t r = b; r < e; ++r) {
          if (p.is_dense(r)) continue;
          T* yr = y.data() + r * P;
          const std::uint32_t n = p.row_nnz[r];
          for (std::uint32_t j = 0; j < n; ++j) {
            detail::axpy(H.ell_vals[r * W + j], B.data() + std::size_t{p.ell_cols[r * W + j]} * P, yr, P);
          }
          local += static_cast<std::uint64_t>(n) * P;
          if (precision == Precision::bf16) {
            for (std::size_t c = 0; c < P; ++c) yr[c] = store_round(yr[c], precision);
          }
        }
        macs.fetch_add(local, std::memory_order_relaxed);
      },
      16);

  const std::size_t tail = p.tail_count();
  if (tail > 0) {
    std::vector<T> tmp(tail * P);
    detail::gemm(H.tail_vals.data(), p.cols, B.data(), P, tmp.data(), P, tail, P, p.cols);
    for (std::size_t s = 0; s < tail; ++s) {
      T* yr = y.data() + std::size_t{p.tail_rows[s]} * P;
      for (std::size_t c = 0; c < P; ++c) yr[c] = store_round(tmp[s * P + c], precision);
    }
    macs.fetch_add(static_cast<std::uint64_t>(tail) * p.cols * P);
    if (stats) stats->note_scratch(tmp.size());
  }
  if (stats) stats->macs += macs.load();
  return y;
}

template <class T>
HybridMatrix<T> dense_to_hybrid_matmul_bt(const Matrix<T>& A, const Matrix<T>& B_t,
                                          const PatternPtr& pattern, Precision precision,
                                          KernelStats* stats) {
  require_pattern(pattern, "dense_to_hybrid_matmul");
  const auto& p = *pattern;
  const std::size_t K = A.cols();
  if (B_t.cols() != K) throw_dims("dense_to_hybrid_matmul", A.rows(), A.cols(), B_t.cols(), B_t.rows());
  if (p.rows != A.rows() || p.cols != B_t.rows()) {
    throw_dims("dense_to_hybrid_matmul pattern", p.rows, p.cols, A.rows(), B_t.rows());
  }
  HybridMatrix<T> out(pattern);
  const std::size_t W = p.ell_width;
  std::atomic<std::uint64_t> macs{0};
  parallel_for(
      p.rows,
      [&](std::size_t b, std::size_t e) {
        std::uint64_t local = 0;
        for (std::size_t r = b; r < e; ++r) {
          const T* ar = A.data() + r * K;
          if (!p.is_dense(r)) {
            const std::uint32_t n = p.row_nnz[r];
            for (std::uint32_t j = 0; j < n; ++j) {
              const T* br = B_t.data() + std::size_t{p.ell_cols[r * W + j]} * K;
              out.ell_vals[r * W + j] = store_round(detail::dot(ar, br, K), precision);
            }
            local += static_cast<std::uint64_t>(n) * K;
          } else if (p.tail_map[r] >= 0) {
            const std::size_t slot = static_cast<std::size_t>(p.tail_map[r]);
            const std::uint8_t* sup = p.tail_support.data() + slot * p.cols;
            T* dst = out.tail_vals.data() + slot * p.cols;
            for (std::size_t c = 0; c < p.cols; ++c) {
              if (!sup[c]) continue;
              dst[c] = store_round(detail::dot(ar, B_t.data() + c * K, K), precision);
              local += K;
            }
          }
        }
        macs.fetch_add(local, std::memory_order_relaxed);
      },
      16);
  if (stats) stats->macs += macs.load();
  return out;
}

template <class T>
HybridMatrix<T> dense_to_hybrid_matmul(const Matrix<T>& A, const Matrix<T>& B, const PatternPtr& pattern,
                                       Precision precision, KernelStats* stats) {
  if (A.cols() != B.rows()) throw_dims("dense_to_hybrid_matmul", A.rows(), A.cols(), B.rows(), B.cols());
  return dense_to_hybrid_matmul_bt(A, transpose_dense(B), pattern, precision, stats);
}

template <class T>
HybridMatrix<T> hybrid_transpose(const HybridMatrix<T>& H, std::size_t out_ell_width,
                                 std::size_t out_dense_cap) {
  require_pattern(H.pattern, "hybrid_transpose");
  const auto& src = *H.pattern;
  const std::size_t M = src.rows, N = src.cols, W = out_ell_width;

  auto p = std::make_shared<HybridPattern>();
  p->rows = N;
  p->cols = M;
  p->ell_width = W;
  p->dense_cap = out_dense_cap;
  p->row_nnz.assign(N, 0);
  p->ell_cols.assign(N * W, 0);
  p->routing.assign(N, 0);
  p->tail_map.assign(N, -1);
  std::vector<T> ell_vals(N * W, T{0});
  std::vector<T> tail_vals;

  // Source rows are visited in ascending order, so every output row receives
  // its columns in ascending order.
  auto place = [&](std::size_t c, std::uint32_t r, T v) {
    const std::uint32_t k = p->row_nnz[c]++;
    if (!p->routing[c]) {
      if (k < W) {
        p->ell_cols[c * W + k] = r;
        ell_vals[c * W + k] = v;
        return;
      }
      p->routing[c] = 1;
      if (p->tail_rows.size() == out_dense_cap) {
        p->overflow = true;
        return;
      }
      const std::size_t slot = p->tail_rows.size();
      p->tail_map[c] = static_cast<std::int32_t>(slot);
      p->tail_rows.push_back(static_cast<std::uint32_t>(c));
      tail_vals.resize((slot + 1) * M, T{0});
      p->tail_support.resize((slot + 1) * M, 0);
      for (std::size_t j = 0; j < W; ++j) {
        tail_vals[slot * M + p->ell_cols[c * W + j]] = ell_vals[c * W + j];
        p->tail_support[slot * M + p->ell_cols[c * W + j]] = 1;
      }
    }
    if (p->tail_map[c] < 0) return;
    const std::size_t slot = static_cast<std::size_t>(p->tail_map[c]);
    tail_vals[slot * M + r] = v;
    p->tail_support[slot * M + r] = 1;
  };

  for (std::size_t r = 0; r < M; ++r) {
    const auto r32 = static_cast<std::uint32_t>(r);
    if (!src.is_dense(r)) {
      for (std::uint32_t j = 0; j < src.row_nnz[r]; ++j) {
        place(src.ell_cols[r * src.ell_width + j], r32, H.ell_vals[r * src.ell_width + j]);
      }
    } else if (src.tail_map[r] >= 0) {
      const std::size_t slot = static_cast<std::size_t>(src.tail_map[r]);
      const std::uint8_t* sup = src.tail_support.data() + slot * N;
      for (std::size_t c = 0; c < N; ++c) {
        if (sup[c]) place(c, r32, H.tail_vals[slot * N + c]);
      }
    }
  }

  HybridMatrix<T> out;
  out.ell_vals = std::move(ell_vals);
  out.tail_vals = std::move(tail_vals);
  out.pattern = std::move(p);
  return out;
}

template <class T>
HybridMatrix<T> hybrid_elementwise_mul(const HybridMatrix<T>& A, const HybridMatrix<T>& B,
                                       Precision precision) {
  require_shared(A, B, "hybrid_elementwise_mul");
  HybridMatrix<T> out;
  out.pattern = A.pattern;
  out.ell_vals.resize(A.ell_vals.size());
  out.tail_vals.resize(A.tail_vals.size());
  for (std::size_t i = 0; i < A.ell_vals.size(); ++i) out.ell_vals[i] = store_round(A.ell_vals[i] * B.ell_vals[i], precision);
  for (std::size_t i = 0; i < A.tail_vals.size(); ++i) out.tail_vals[i] = store_round(A.tail_vals[i] * B.tail_vals[i], precision);
  return out;
}

template <class T>
HybridMatrix<T> inject_l1_grad(const HybridMatrix<T>& gradH, const HybridMatrix<T>& H, T coeff) {
  require_shared(gradH, H, "inject_l1_grad");
  HybridMatrix<T> out = gradH;
  if (coeff == T{0}) return out;
  const auto& p = *H.pattern;
  const std::size_t W = p.ell_width;
  for (std::size_t r = 0; r < p.rows; ++r) {
    if (p.is_dense(r)) continue;
    for (std::uint32_t j = 0; j < p.row_nnz[r]; ++j) out.ell_vals[r * W + j] += coeff * sign_of(H.ell_vals[r * W + j]);
  }
  for (std::size_t i = 0; i < p.tail_support.size(); ++i) {
    if (p.tail_support[i]) out.tail_vals[i] += coeff * sign_of(H.tail_vals[i]);
  }
  return out;
}

template <class T>
SparsityStats sparsity_stats(const HybridMatrix<T>& H) {
  require_pattern(H.pattern, "sparsity_stats");
  const auto& p = *H.pattern;
  SparsityStats s;
  if (p.rows == 0) return s;
  double l0 = 0.0, l1 = 0.0;
  const std::size_t W = p.ell_width;
  for (std::size_t r = 0; r < p.rows; ++r) {
    const std::uint32_t n = p.row_nnz[r];
    l0 += n;
    s.max_nnz = std::max(s.max_nnz, n);
    if (!p.is_dense(r)) {
      for (std::uint32_t j = 0; j < n; ++j) l1 += std::abs(static_cast<double>(H.ell_vals[r * W + j]));
    }
  }
  for (std::size_t i = 0; i < p.tail_support.size(); ++i) {
    if (p.tail_support[i]) l1 += std::abs(static_cast<double>(H.tail_vals[i]));
  }
  s.l0_mean = l0 / static_cast<double>(p.rows);
  s.l1_mean = l1 / static_cast<double>(p.rows);
  return s;
}

#define SPARSEFFN_INSTANTIATE(T)                                                                        \
  template Matrix<T> hybrid_to_dense_matmul<T>(const HybridMatrix<T>&, const Matrix<T>&, Precision,    \
                                               KernelStats*);                                          \
  template HybridMatrix<T> dense_to_hybrid_matmul<T>(const Matrix<T>&, const Matrix<T>&,               \
                                                     const PatternPtr&, Precision, KernelStats*);       \
  template HybridMatrix<T> dense_to_hybrid_matmul_bt<T>(const Matrix<T>&, const Matrix<T>&,            \
                                                        const PatternPtr&, Precision, KernelStats*);    \
  template HybridMatrix<T> hybrid_transpose<T>(const HybridMatrix<T>&, std::size_t, std::size_t);      \
  template HybridMatrix<T> hybrid_elementwise_mul<T>(const HybridMatrix<T>&, const HybridMatrix<T>&,   \
                                                     Precision);                                       \
  template HybridMatrix<T> inject_l1_grad<T>(const HybridMatrix<T>&, const HybridMatrix<T>&, T);       \
  template SparsityStats sparsity_stats<T>(const HybridMatrix<T>&);

SPARSEFFN_INSTANTIATE(float)
SPARSEFFN_INSTANTIATE(double)

#undef SPARSEFFN_INSTANTIATE

}  // namespace sparseffn
