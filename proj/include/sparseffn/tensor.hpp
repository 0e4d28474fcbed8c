#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "sparseffn/bf16.hpp"
#include "sparseffn/error.hpp"
#include "sparseffn/rng.hpp"

namespace sparseffn {

// Element precision. Values double as the dtype byte of the binary formats.
// bf16 keeps binary32 storage but rounds every stored result to brain-float,
// accumulating in binary32.
enum class Precision : std::uint8_t { f32 = 0x01, f64 = 0x02, bf16 = 0x03 };

const char* to_string(Precision p) noexcept;

// Work and scratch accounting filled in by kernels that accept it.
struct KernelStats {
  std::uint64_t macs = 0;
  // Largest transient buffer a kernel allocated, in elements.
  std::size_t peak_scratch = 0;

  void note_scratch(std::size_t elems) noexcept {
    if (elems > peak_scratch) peak_scratch = elems;
  }
  void merge(const KernelStats& o) noexcept {
    macs += o.macs;
    note_scratch(o.peak_scratch);
  }
};

// Row-major dense matrix.
template <class T>
class Matrix {
 public:
  using value_type = T;

  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<T> data);
  Matrix(std::initializer_list<std::initializer_list<T>> rows);

  static Matrix identity(std::size_t n);
  static Matrix filled(std::size_t rows, std::size_t cols, T value);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<T> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }

  bool same_shape(const Matrix& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }

  friend bool operator==(const Matrix& a, const Matrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

using DenseMatrix = Matrix<float>;
using DenseMatrix64 = Matrix<double>;

// C = A·B. Every output element is reduced over k in ascending order starting
// from zero, so results do not depend on blocking or worker count. In bf16
// mode the stored outputs are rounded.
template <class T>
Matrix<T> matmul_dense(const Matrix<T>& a, const Matrix<T>& b,
                       Precision precision = Precision::f32,
                       KernelStats* stats = nullptr);

template <class T> Matrix<T> relu(const Matrix<T>& a);
template <class T> Matrix<T> silu(const Matrix<T>& a);
template <class T> Matrix<T> hadamard(const Matrix<T>& a, const Matrix<T>& b);
template <class T> Matrix<T> transpose_dense(const Matrix<T>& a);

// i.i.d. N(0, sigma^2) draws in row-major order.
template <class T>
Matrix<T> randn(std::size_t rows, std::size_t cols, double sigma, SeededRng& rng);

template <class T> bool all_finite(const Matrix<T>& a) noexcept;

// Rounds every element to brain-float in place.
void quantize_bf16(Matrix<float>& a) noexcept;

template <class To, class From>
Matrix<To> cast(const Matrix<From>& a) {
  Matrix<To> out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out.values()[i] = static_cast<To>(a.values()[i]);
  return out;
}

// max|a - b| / max|b|; returns the absolute error when b is identically zero.
template <class T>
double max_relative_error(const Matrix<T>& a, const Matrix<T>& b);

namespace detail {

// Strided GEMM over raw storage: C[m×n] = A[m×k]·B[k×n] with the
// ascending-k reduction contract. Overwrites C.
template <class T>
void gemm(const T* a, std::size_t lda, const T* b, std::size_t ldb, T* c,
          std::size_t ldc, std::size_t m, std::size_t n, std::size_t k);

// Dot product with a fixed eight-lane partial-sum order.
template <class T>
T dot(const T* a, const T* b, std::size_t n) noexcept;

// y += alpha·x
template <class T>
void axpy(T alpha, const T* x, T* y, std::size_t n) noexcept;

}  // namespace detail

}  // namespace sparseffn
