#pragma once

// Reference computations for the tests. Everything here is written from the
// textbook definitions with plain loops and std::mt19937_64 inputs, and does
// not call into the library's kernels.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <random>
#include <vector>

#include "sparseffn/tensor.hpp"

namespace oracle {

using sparseffn::Matrix;

using Gen = std::mt19937_64;

template <class T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b) {
  Matrix<T> c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.cols(); ++j) {
      T acc = 0;
      for (std::size_t k = 0; k < a.cols(); ++k) acc += a(i, k) * b(k, j);
      c(i, j) = acc;
    }
  }
  return c;
}

template <class T>
Matrix<T> transpose(const Matrix<T>& a) {
  Matrix<T> t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

template <class T>
Matrix<T> relu(Matrix<T> a) {
  for (auto& v : a.values()) v = v > 0 ? v : T{0};
  return a;
}

template <class T>
Matrix<T> mul(const Matrix<T>& a, const Matrix<T>& b) {
  Matrix<T> c(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) c.values()[i] = a.values()[i] * b.values()[i];
  return c;
}

template <class T>
Matrix<T> add(const Matrix<T>& a, const Matrix<T>& b) {
  Matrix<T> c(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) c.values()[i] = a.values()[i] + b.values()[i];
  return c;
}

// Zeroes every position where mask is zero.
template <class T>
Matrix<T> masked(const Matrix<T>& a, const Matrix<T>& mask) {
  Matrix<T> c(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) c.values()[i] = mask.values()[i] != 0 ? a.values()[i] : T{0};
  return c;
}

template <class T>
Matrix<T> gated_ffn(const Matrix<T>& x, const Matrix<T>& wg, const Matrix<T>& wu, const Matrix<T>& wd) {
  return oracle::matmul(oracle::mul(oracle::relu(oracle::matmul(x, wg)), oracle::matmul(x, wu)), wd);
}

template <class T>
Matrix<T> plain_ffn(const Matrix<T>& x, const Matrix<T>& wu, const Matrix<T>& wd) {
  return oracle::matmul(oracle::relu(oracle::matmul(x, wu)), wd);
}

// max|a-b| / max|b|, falling back to max|a-b| when b is all zeros.
template <class T>
double rel_err(const Matrix<T>& a, const Matrix<T>& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num = std::max(num, std::abs(static_cast<double>(a.values()[i]) - static_cast<double>(b.values()[i])));
    den = std::max(den, std::abs(static_cast<double>(b.values()[i])));
  }
  return den == 0.0 ? num : num / den;
}

template <class T>
bool bitwise_equal(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::memcmp(&a.values()[i], &b.values()[i], sizeof(T)) != 0) return false;
  }
  return true;
}

template <class T>
Matrix<T> gaussian(std::size_t r, std::size_t c, Gen& g, double sd = 1.0) {
  std::normal_distribution<double> d(0.0, sd);
  Matrix<T> m(r, c);
  for (auto& v : m.values()) v = static_cast<T>(d(g));
  return m;
}

// Non-negative matrix where each element is kept with probability `density`.
template <class T>
Matrix<T> sparse_nonneg(std::size_t r, std::size_t c, double density, Gen& g) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Matrix<T> m(r, c);
  for (auto& v : m.values()) {
    if (u(g) < density) v = static_cast<T>(0.01 + u(g));
  }
  return m;
}

// Signed values on a random support.
template <class T>
Matrix<T> sparse_signed(std::size_t r, std::size_t c, double density, Gen& g) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Matrix<T> m(r, c);
  for (auto& v : m.values()) {
    if (u(g) < density) v = static_cast<T>(u(g) < 0.5 ? -(0.1 + u(g)) : 0.1 + u(g));
  }
  return m;
}

template <class T>
std::size_t count_nonzero_row(const Matrix<T>& m, std::size_t r) {
  std::size_t n = 0;
  for (std::size_t c = 0; c < m.cols(); ++c) n += m(r, c) != 0;
  return n;
}

template <class T>
std::size_t count_nonzero(const Matrix<T>& m) {
  std::size_t n = 0;
  for (std::size_t r = 0; r < m.rows(); ++r) n += count_nonzero_row(m, r);
  return n;
}

// Largest count of non-zeros in any aligned tile of width t.
template <class T>
std::size_t max_tile_count(const Matrix<T>& m, std::size_t t) {
  std::size_t best = 0;
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c0 = 0; c0 < m.cols(); c0 += t) {
      std::size_t n = 0;
      for (std::size_t c = c0; c < c0 + t; ++c) n += m(r, c) != 0;
      best = std::max(best, n);
    }
  }
  return best;
}

inline bool adjacent(std::pair<std::uint32_t, std::uint32_t> a, std::pair<std::uint32_t, std::uint32_t> b) {
  const long dr = std::labs(static_cast<long>(a.first) - static_cast<long>(b.first));
  const long dc = std::labs(static_cast<long>(a.second) - static_cast<long>(b.second));
  return dr + dc == 1;
}

}  // namespace oracle
