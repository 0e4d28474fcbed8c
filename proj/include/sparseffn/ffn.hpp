#pragma once

#include "sparseffn/formats.hpp"
#include "sparseffn/train_kernels.hpp"
#include "sparseffn/weights.hpp"

namespace sparseffn {

struct HybridCaps {
  std::size_t ell_width = 128;
  std::size_t dense_cap = 16;
};

template <class T>
struct FfnCache {
  Variant variant = Variant::gated;
  Matrix<T> x;
  HybridMatrix<T> h_g;  // post-ReLU gate, gated only
  HybridMatrix<T> h_u;  // up values on the gate pattern, gated only
  HybridMatrix<T> h;    // hidden activations; every member shares one pattern
  SparsityStats stats;  // of h

  bool overflow() const noexcept { return h.overflow(); }
};

template <class T>
struct FfnGrads {
  Matrix<T> dW_g;  // empty for the non-gated variant
  Matrix<T> dW_u;
  Matrix<T> dW_d;
  Matrix<T> dx;
  bool overflow = false;  // a transposed operand lost rows
};

template <class T>
struct FfnForward {
  Matrix<T> y;
  FfnCache<T> cache;
};

// Separate up and down steps over hybrid intermediates. OverflowTile
// propagates from the gate packing; hybrid overflow is reported through the
// cache.
template <class T>
FfnForward<T> ffn_forward_train(const Matrix<T>& x, const FfnWeights<T>& weights,
                                const TwellConfig& cfg, const HybridCaps& caps,
                                Precision precision = Precision::f32,
                                KernelStats* stats = nullptr);

// Gradients of Σ dy⊙y + effective_l1·Σ|h|. Hidden gradients stay on the
// forward pattern, which also carries the ReLU derivative. transpose_caps
// sizes the transposed N×M operands used for the weight gradients.
template <class T>
FfnGrads<T> ffn_backward(const FfnCache<T>& cache, const Matrix<T>& dy, const FfnWeights<T>& weights,
                         T effective_l1, const HybridCaps& transpose_caps,
                         Precision precision = Precision::f32, KernelStats* stats = nullptr);

}  // namespace sparseffn
