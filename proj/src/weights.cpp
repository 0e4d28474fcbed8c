#include "sparseffn/weights.hpp"

namespace sparseffn {

template <class T>
void FfnWeights<T>::check() const {
  if (variant == Variant::gated && !(W_g.rows() == W_u.rows() && W_g.cols() == W_u.cols())) {
    throw_dims("ffn weights W_g vs W_u", W_g.rows(), W_g.cols(), W_u.rows(), W_u.cols());
  }
  if (W_d.rows() != W_u.cols() || W_d.cols() != W_u.rows()) {
    throw_dims("ffn weights W_d vs W_u", W_d.rows(), W_d.cols(), W_u.rows(), W_u.cols());
  }
}

template <class T>
void FfnWeights<T>::check_input(const Matrix<T>& x) const {
  check();
  if (x.cols() != W_u.rows()) throw_dims("ffn input", x.rows(), x.cols(), W_u.rows(), W_u.cols());
}

template <class T>
FfnWeights<T> init_weights(Variant variant, std::size_t k, std::size_t n, double sigma,
                           SeededRng& rng) {
  FfnWeights<T> w;
  w.variant = variant;
  if (variant == Variant::gated) w.W_g = randn<T>(k, n, sigma, rng);
  w.W_u = randn<T>(k, n, sigma, rng);
  w.W_d = randn<T>(n, k, sigma, rng);
  return w;
}

template struct FfnWeights<float>;
template struct FfnWeights<double>;
template FfnWeights<float> init_weights<float>(Variant, std::size_t, std::size_t, double, SeededRng&);
template FfnWeights<double> init_weights<double>(Variant, std::size_t, std::size_t, double, SeededRng&);

}  // namespace sparseffn
