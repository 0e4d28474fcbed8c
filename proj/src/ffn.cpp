#include "sparseffn/ffn.hpp"

#include "sparseffn/infer.hpp"

namespace sparseffn {

template <class T>
FfnForward<T> ffn_forward_train(const Matrix<T>& x, const FfnWeights<T>& weights,
                                const TwellConfig& cfg, const HybridCaps& caps, Precision precision,
                                KernelStats* stats) {
  weights.check_input(x);
  FfnForward<T> out;
  auto& cache = out.cache;
  cache.variant = weights.variant;
  cache.x = x;
  if (weights.variant == Variant::gated) {
    const auto tw = gate_project_twell(x, weights.W_g, cfg, precision, stats);
    cache.h_g = twell_to_hybrid(tw, caps.ell_width, caps.dense_cap, false).hybrid;
    cache.h_u = dense_to_hybrid_matmul_bt(x, transpose_dense(weights.W_u), cache.h_g.pattern, precision, stats);
    cache.h = hybrid_elementwise_mul(cache.h_u, cache.h_g, precision);
  } else {
    const auto tw = gate_project_twell(x, weights.W_u, cfg, precision, stats);
    cache.h = twell_to_hybrid(tw, caps.ell_width, caps.dense_cap, false).hybrid;
  }
  cache.stats = sparsity_stats(cache.h);
  out.y = hybrid_to_dense_matmul(cache.h, weights.W_d, precision, stats);
  return out;
}

template <class T>
FfnGrads<T> ffn_backward(const FfnCache<T>& cache, const Matrix<T>& dy, const FfnWeights<T>& weights,
                         T effective_l1, const HybridCaps& transpose_caps, Precision precision,
                         KernelStats* stats) {
  weights.check_input(cache.x);
  if (weights.variant != cache.variant) {
    throw Error(ErrorCode::PatternMismatch, "ffn_backward: cache and weights are different variants");
  }
  const std::size_t M = cache.x.rows(), K = cache.x.cols(), N = weights.hidden_dim();
  if (dy.rows() != M || dy.cols() != K) throw_dims("ffn_backward dy", dy.rows(), dy.cols(), M, K);
  if (!cache.h.pattern || cache.h.rows() != M || cache.h.cols() != N) {
    throw Error(ErrorCode::DimensionMismatch, "ffn_backward: cache does not match the weights");
  }

  FfnGrads<T> g;
  auto grad_h = dense_to_hybrid_matmul_bt(dy, weights.W_d, cache.h.pattern, precision, stats);
  grad_h = inject_l1_grad(grad_h, cache.h, effective_l1);

  auto weight_grad = [&](const HybridMatrix<T>& hidden, const Matrix<T>& rhs) {
    const auto ht = hybrid_transpose(hidden, transpose_caps.ell_width, transpose_caps.dense_cap);
    g.overflow = g.overflow || ht.overflow();
    return hybrid_to_dense_matmul(ht, rhs, precision, stats);
  };

  g.dW_d = weight_grad(cache.h, dy);
  if (weights.variant == Variant::gated) {
    const auto grad_u = hybrid_elementwise_mul(grad_h, cache.h_g, precision);
    const auto grad_g = hybrid_elementwise_mul(grad_h, cache.h_u, precision);
    g.dW_u = transpose_dense(weight_grad(grad_u, cache.x));
    g.dW_g = transpose_dense(weight_grad(grad_g, cache.x));
    g.dx = hybrid_to_dense_matmul(grad_u, transpose_dense(weights.W_u), precision, stats);
    const auto dx_g = hybrid_to_dense_matmul(grad_g, transpose_dense(weights.W_g), precision, stats);
    for (std::size_t i = 0; i < g.dx.size(); ++i) g.dx.values()[i] += dx_g.values()[i];
  } else {
    g.dW_u = transpose_dense(weight_grad(grad_h, cache.x));
    g.dx = hybrid_to_dense_matmul(grad_h, transpose_dense(weights.W_u), precision, stats);
  }
  return g;
}

#define SPARSEFFN_INSTANTIATE(T)                                                                       \
  template FfnForward<T> ffn_forward_train<T>(const Matrix<T>&, const FfnWeights<T>&,                 \
                                              const TwellConfig&, const HybridCaps&, Precision,       \
                                              KernelStats*);                                          \
  template FfnGrads<T> ffn_backward<T>(const FfnCache<T>&, const Matrix<T>&, const FfnWeights<T>&, T, \
                                       const HybridCaps&, Precision, KernelStats*);

SPARSEFFN_INSTANTIATE(float)
SPARSEFFN_INSTANTIATE(double)

#undef SPARSEFFN_INSTANTIATE

}  // namespace sparseffn
