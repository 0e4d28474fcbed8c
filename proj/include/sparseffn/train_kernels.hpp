#pragma once

#include "sparseffn/formats.hpp"

namespace sparseffn {

// y = densify(H)·B. Sparse rows accumulate v·B[col,:] over their ELL prefix,
// tail rows go through the dense GEMM, empty rows cost nothing.
template <class T>
Matrix<T> hybrid_to_dense_matmul(const HybridMatrix<T>& H, const Matrix<T>& B,
                                 Precision precision = Precision::f32,
                                 KernelStats* stats = nullptr);

// Values of A·B at the positions stored in `pattern`. The result shares the
// pattern object. Only the pattern's positions are ever computed, so no
// M×N buffer exists; dense rows are masked to their stored support.
template <class T>
HybridMatrix<T> dense_to_hybrid_matmul(const Matrix<T>& A, const Matrix<T>& B, const PatternPtr& pattern,
                                       Precision precision = Precision::f32,
                                       KernelStats* stats = nullptr);

// Same with B given transposed (N×K), which is how weight matrices are laid
// out in the backward pass.
template <class T>
HybridMatrix<T> dense_to_hybrid_matmul_bt(const Matrix<T>& A, const Matrix<T>& B_t,
                                          const PatternPtr& pattern,
                                          Precision precision = Precision::f32,
                                          KernelStats* stats = nullptr);

// Transposes the stored structure (zeros on the pattern are kept). Output rows
// that outgrow out_ell_width claim a tail slot when they overflow; entries
// already placed in ELL slots are then copied over. Rows that find the tail
// full are dropped and the result's overflow flag is set. Rows a source has
// already dropped transpose as zeros.
template <class T>
HybridMatrix<T> hybrid_transpose(const HybridMatrix<T>& H, std::size_t out_ell_width,
                                 std::size_t out_dense_cap);

// Slot-wise product of two matrices on the same pattern.
template <class T>
HybridMatrix<T> hybrid_elementwise_mul(const HybridMatrix<T>& A, const HybridMatrix<T>& B,
                                       Precision precision = Precision::f32);

// gradH + coeff·sign(H) at every stored position, sign(0) = 0.
template <class T>
HybridMatrix<T> inject_l1_grad(const HybridMatrix<T>& gradH, const HybridMatrix<T>& H, T coeff);

struct SparsityStats {
  double l0_mean = 0.0;  // mean row count
  double l1_mean = 0.0;  // mean row sum of |v|
  std::uint32_t max_nnz = 0;
};

// Dropped rows of an overflowed matrix count toward l0 but carry no values.
template <class T>
SparsityStats sparsity_stats(const HybridMatrix<T>& H);

}  // namespace sparseffn
