#pragma once

#include "sparseffn/tensor.hpp"

namespace sparseffn {

enum class Variant { gated, non_gated };

// x: M×K. W_g, W_u: K×N. W_d: N×K. W_g is empty for the non-gated variant.
template <class T>
struct FfnWeights {
  Variant variant = Variant::gated;
  Matrix<T> W_g;
  Matrix<T> W_u;
  Matrix<T> W_d;

  std::size_t model_dim() const noexcept { return W_u.rows(); }
  std::size_t hidden_dim() const noexcept { return W_u.cols(); }

  // Throws DimensionMismatch on inconsistent shapes.
  void check() const;
  void check_input(const Matrix<T>& x) const;
};

template <class T>
FfnWeights<T> init_weights(Variant variant, std::size_t k, std::size_t n, double sigma,
                           SeededRng& rng);

}  // namespace sparseffn
