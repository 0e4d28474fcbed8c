#include "sparseffn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "sparseffn/parallel.hpp"

namespace sparseffn {

const char* to_string(Precision p) noexcept {
  switch (p) {
    case Precision::f32: return "f32";
    case Precision::f64: return "f64";
    case Precision::bf16: return "bf16";
  }
  return "unknown";
}

template <class T>
Matrix<T>::Matrix(std::size_t rows, std::size_t cols, std::vector<T> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw Error(ErrorCode::DimensionMismatch, "Matrix: data length does not match rows*cols");
  }
}

template <class T>
Matrix<T>::Matrix(std::initializer_list<std::initializer_list<T>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw Error(ErrorCode::DimensionMismatch, "Matrix: ragged initializer");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

template <class T>
Matrix<T> Matrix<T>::identity(std::size_t n) {
  Matrix out(n, n);
  for (std::size_t i = 0; i < n; ++i) out(i, i) = T{1};
  return out;
}

template <class T>
Matrix<T> Matrix<T>::filled(std::size_t rows, std::size_t cols, T value) {
  Matrix out(rows, cols);
  std::fill(out.data_.begin(), out.data_.end(), value);
  return out;
}

namespace detail {

namespace {

template <class T>
struct Simd {
  typedef T vec __attribute__((vector_size(32)));
  static constexpr std::size_t lanes = 32 / sizeof(T);
};

template <class V, class T>
inline V load(const T* p) noexcept {
  V v;
  std::memcpy(&v, p, sizeof(V));
  return v;
}

template <class V, class T>
inline void store(T* p, const V& v) noexcept {
  std::memcpy(p, &v, sizeof(V));
}

constexpr std::size_t kMr = 4;
constexpr std::size_t kKc = 256;
constexpr std::size_t kNc = 512;

// One MR x NR block of C over a packed kc-deep panel of B.
template <class T>
void micro_kernel(const T* const* a_rows, const T* panel, T* c, std::size_t ldc,
                  std::size_t mr, std::size_t nr, std::size_t kc, bool first) noexcept {
  using V = typename Simd<T>::vec;
  constexpr std::size_t L = Simd<T>::lanes;
  constexpr std::size_t NR = 2 * L;
  V acc[kMr][2];
  if (first) {
    for (std::size_t r = 0; r < kMr; ++r) acc[r][0] = acc[r][1] = V{};
  } else {
    for (std::size_t r = 0; r < kMr; ++r) {
      T tmp[NR] = {};
      if (r < mr) std::memcpy(tmp, c + r * ldc, nr * sizeof(T));
      acc[r][0] = load<V>(tmp);
      acc[r][1] = load<V>(tmp + L);
    }
  }
  for (std::size_t p = 0; p < kc; ++p) {
    const V b0 = load<V>(panel + p * NR);
    const V b1 = load<V>(panel + p * NR + L);
    for (std::size_t r = 0; r < kMr; ++r) {
      const T av = a_rows[r][p];
      acc[r][0] += av * b0;
      acc[r][1] += av * b1;
    }
  }
  for (std::size_t r = 0; r < mr; ++r) {
    if (nr == NR) {
      store(c + r * ldc, acc[r][0]);
      store(c + r * ldc + L, acc[r][1]);
    } else {
      T tmp[NR];
      store(tmp, acc[r][0]);
      store(tmp + L, acc[r][1]);
      std::memcpy(c + r * ldc, tmp, nr * sizeof(T));
    }
  }
}

template <class T>
void gemm_rows(const T* a, std::size_t lda, const T* b, std::size_t ldb, T* c,
               std::size_t ldc, std::size_t r0, std::size_t r1, std::size_t n,
               std::size_t k) {
  constexpr std::size_t NR = 2 * Simd<T>::lanes;
  std::vector<T> packed(kKc * kNc);
  for (std::size_t jc = 0; jc < n; jc += kNc) {
    const std::size_t nc = std::min(kNc, n - jc);
    const std::size_t panels = (nc + NR - 1) / NR;
    for (std::size_t pc = 0; pc < k; pc += kKc) {
      const std::size_t kc = std::min(kKc, k - pc);
      for (std::size_t jp = 0; jp < panels; ++jp) {
        T* dst = packed.data() + jp * kc * NR;
        const std::size_t col0 = jc + jp * NR;
        const std::size_t width = std::min(NR, jc + nc - col0);
        for (std::size_t p = 0; p < kc; ++p) {
          const T* src = b + (pc + p) * ldb + col0;
          std::size_t j = 0;
          for (; j < width; ++j) dst[p * NR + j] = src[j];
          for (; j < NR; ++j) dst[p * NR + j] = T{0};
        }
      }
      for (std::size_t i0 = r0; i0 < r1; i0 += kMr) {
        const std::size_t mr = std::min(kMr, r1 - i0);
        const T* rows[kMr];
        for (std::size_t r = 0; r < kMr; ++r) rows[r] = a + (i0 + (r < mr ? r : 0)) * lda + pc;
        for (std::size_t jp = 0; jp < panels; ++jp) {
          const std::size_t col0 = jc + jp * NR;
          const std::size_t nr = std::min(NR, jc + nc - col0);
          micro_kernel(rows, packed.data() + jp * kc * NR, c + i0 * ldc + col0, ldc, mr, nr, kc,
                       pc == 0);
        }
      }
    }
  }
}

}  // namespace

template <class T>
void gemm(const T* a, std::size_t lda, const T* b, std::size_t ldb, T* c, std::size_t ldc,
          std::size_t m, std::size_t n, std::size_t k) {
  if (m == 0 || n == 0) return;
  if (k == 0) {
    for (std::size_t i = 0; i < m; ++i) std::fill(c + i * ldc, c + i * ldc + n, T{0});
    return;
  }
  const std::size_t blocks = (m + kMr - 1) / kMr;
  // Small problems are not worth a thread launch.
  const std::size_t min_blocks = std::max<std::size_t>(1, (1u << 20) / std::max<std::size_t>(1, n * k * kMr));
  parallel_for(
      blocks,
      [&](std::size_t b0, std::size_t b1) {
        gemm_rows(a, lda, b, ldb, c, ldc, b0 * kMr, std::min(m, b1 * kMr), n, k);
      },
      min_blocks);
}

template <class T>
T dot(const T* a, const T* b, std::size_t n) noexcept {
  T s[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (std::size_t l = 0; l < 8; ++l) s[l] += a[i + l] * b[i + l];
  }
  for (std::size_t l = 0; i < n; ++i, ++l) s[l] += a[i] * b[i];
  return ((s[0] + s[1]) + (s[2] + s[3])) + ((s[4] + s[5]) + (s[6] + s[7]));
}

template <class T>
void axpy(T alpha, const T* x, T* y, std::size_t n) noexcept {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template void gemm<float>(const float*, std::size_t, const float*, std::size_t, float*,
                          std::size_t, std::size_t, std::size_t, std::size_t);
template void gemm<double>(const double*, std::size_t, const double*, std::size_t, double*,
                           std::size_t, std::size_t, std::size_t, std::size_t);
template float dot<float>(const float*, const float*, std::size_t) noexcept;
template double dot<double>(const double*, const double*, std::size_t) noexcept;
template void axpy<float>(float, const float*, float*, std::size_t) noexcept;
template void axpy<double>(double, const double*, double*, std::size_t) noexcept;

}  // namespace detail

template <class T>
Matrix<T> matmul_dense(const Matrix<T>& a, const Matrix<T>& b, Precision precision,
                       KernelStats* stats) {
  if (a.cols() != b.rows()) throw_dims("matmul_dense", a.rows(), a.cols(), b.rows(), b.cols());
  Matrix<T> c(a.rows(), b.cols());
  detail::gemm(a.data(), a.cols(), b.data(), b.cols(), c.data(), c.cols(), a.rows(), b.cols(),
               a.cols());
  if constexpr (std::is_same_v<T, float>) {
    if (precision == Precision::bf16) quantize_bf16(c);
  }
  if (stats) stats->macs += static_cast<std::uint64_t>(a.rows()) * b.cols() * a.cols();
  return c;
}

template <class T>
Matrix<T> relu(const Matrix<T>& a) {
  Matrix<T> out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const T v = a.values()[i];
    out.values()[i] = v > T{0} ? v : T{0};
  }
  return out;
}

template <class T>
Matrix<T> silu(const Matrix<T>& a) {
  Matrix<T> out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const T v = a.values()[i];
    out.values()[i] = v / (T{1} + std::exp(-v));
  }
  return out;
}

template <class T>
Matrix<T> hadamard(const Matrix<T>& a, const Matrix<T>& b) {
  if (!a.same_shape(b)) throw_dims("hadamard", a.rows(), a.cols(), b.rows(), b.cols());
  Matrix<T> out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out.values()[i] = a.values()[i] * b.values()[i];
  return out;
}

template <class T>
Matrix<T> transpose_dense(const Matrix<T>& a) {
  Matrix<T> out(a.cols(), a.rows());
  constexpr std::size_t B = 32;
  for (std::size_t i0 = 0; i0 < a.rows(); i0 += B) {
    for (std::size_t j0 = 0; j0 < a.cols(); j0 += B) {
      const std::size_t i1 = std::min(a.rows(), i0 + B);
      const std::size_t j1 = std::min(a.cols(), j0 + B);
      for (std::size_t i = i0; i < i1; ++i)
        for (std::size_t j = j0; j < j1; ++j) out(j, i) = a(i, j);
    }
  }
  return out;
}

template <class T>
Matrix<T> randn(std::size_t rows, std::size_t cols, double sigma, SeededRng& rng) {
  if (sigma < 0.0) throw Error(ErrorCode::InvalidArgument, "randn: sigma must be non-negative");
  Matrix<T> out(rows, cols);
  if (sigma == 0.0) return out;
  for (auto& v : out.values()) v = static_cast<T>(sigma * rng.normal());
  return out;
}

template <class T>
bool all_finite(const Matrix<T>& a) noexcept {
  return std::all_of(a.values().begin(), a.values().end(),
                     [](T v) { return std::isfinite(v); });
}

void quantize_bf16(Matrix<float>& a) noexcept {
  for (auto& v : a.values()) v = round_bf16(v);
}

template <class T>
double max_relative_error(const Matrix<T>& a, const Matrix<T>& b) {
  if (!a.same_shape(b)) throw_dims("max_relative_error", a.rows(), a.cols(), b.rows(), b.cols());
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num = std::max(num, std::abs(static_cast<double>(a.values()[i]) - static_cast<double>(b.values()[i])));
    den = std::max(den, std::abs(static_cast<double>(b.values()[i])));
  }
  return den == 0.0 ? num : num / den;
}

#define SPARSEFFN_INSTANTIATE(T)                                                        \
  template class Matrix<T>;                                                             \
  template Matrix<T> matmul_dense<T>(const Matrix<T>&, const Matrix<T>&, Precision,     \
                                     KernelStats*);                                     \
  template Matrix<T> relu<T>(const Matrix<T>&);                                         \
  template Matrix<T> silu<T>(const Matrix<T>&);                                         \
  template Matrix<T> hadamard<T>(const Matrix<T>&, const Matrix<T>&);                   \
  template Matrix<T> transpose_dense<T>(const Matrix<T>&);                              \
  template Matrix<T> randn<T>(std::size_t, std::size_t, double, SeededRng&);            \
  template bool all_finite<T>(const Matrix<T>&) noexcept;                               \
  template double max_relative_error<T>(const Matrix<T>&, const Matrix<T>&);

SPARSEFFN_INSTANTIATE(float)
SPARSEFFN_INSTANTIATE(double)

#undef SPARSEFFN_INSTANTIATE

}  // namespace sparseffn
