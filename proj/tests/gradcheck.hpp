#pragma once

// Central finite differences of Σ dy⊙y + l1·Σ|h| for one feedforward block,
// evaluated with the dense oracle pipeline in 64-bit.

#include <cmath>
#include <optional>
#include <string>

#include "oracles.hpp"
#include "sparseffn/ffn.hpp"

namespace gradcheck {

using sparseffn::DenseMatrix64;
using sparseffn::Variant;

struct Instance {
  Variant variant = Variant::gated;
  DenseMatrix64 x, wg, wu, wd, dy;
  double l1 = 0.0;
};

inline double loss(const Instance& in) {
  DenseMatrix64 h;
  if (in.variant == Variant::gated) {
    h = oracle::mul(oracle::relu(oracle::matmul(in.x, in.wg)), oracle::matmul(in.x, in.wu));
  } else {
    h = oracle::relu(oracle::matmul(in.x, in.wu));
  }
  const auto y = oracle::matmul(h, in.wd);
  double total = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) total += in.dy.values()[i] * y.values()[i];
  for (double v : h.values()) total += in.l1 * std::abs(v);
  return total;
}

// Draws an instance whose gate pre-activations and hidden values all stay at
// least `margin` away from zero, so the loss is smooth around it.
inline std::optional<Instance> draw(oracle::Gen& g, Variant variant, bool with_l1, double margin = 2e-2) {
  std::uniform_int_distribution<int> dim(2, 8);
  const std::size_t m = dim(g), k = dim(g), n = dim(g);
  Instance in;
  in.variant = variant;
  in.x = oracle::gaussian<double>(m, k, g);
  in.wu = oracle::gaussian<double>(k, n, g);
  if (variant == Variant::gated) in.wg = oracle::gaussian<double>(k, n, g);
  in.wd = oracle::gaussian<double>(n, k, g);
  in.dy = oracle::gaussian<double>(m, k, g);
  in.l1 = with_l1 ? 0.05 + std::uniform_real_distribution<double>(0.0, 0.5)(g) : 0.0;
  const auto pre = oracle::matmul(in.x, variant == Variant::gated ? in.wg : in.wu);
  for (double v : pre.values()) {
    if (std::abs(v) < margin) return std::nullopt;
  }
  if (variant == Variant::gated) {
    const auto up = oracle::matmul(in.x, in.wu);
    for (double v : up.values()) {
      if (std::abs(v) < margin) return std::nullopt;
    }
  }
  return in;
}

struct Result {
  double worst = 0.0;
  std::string where;
};

inline double fd_rel_err(const DenseMatrix64& analytic, DenseMatrix64& param, Instance& in, double step) {
  DenseMatrix64 fd(param.rows(), param.cols());
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double saved = param.values()[i];
    param.values()[i] = saved + step;
    const double up = loss(in);
    param.values()[i] = saved - step;
    const double down = loss(in);
    param.values()[i] = saved;
    fd.values()[i] = (up - down) / (2 * step);
  }
  return oracle::rel_err(analytic, fd);
}

// Compares the library's backward pass against finite differences for every
// gradient it returns. Forward routing uses a narrow ELL so both sparse and
// dense rows appear.
inline Result check(Instance in, double step = 1e-5) {
  sparseffn::FfnWeights<double> w;
  w.variant = in.variant;
  w.W_g = in.wg;
  w.W_u = in.wu;
  w.W_d = in.wd;
  sparseffn::TwellConfig cfg;
  cfg.tile = in.wu.cols();
  cfg.compress = 1;
  const std::size_t m = in.x.rows(), n = in.wu.cols();
  const sparseffn::HybridCaps fwd{2, m};
  const sparseffn::HybridCaps tr{1, n};
  const auto f = sparseffn::ffn_forward_train(in.x, w, cfg, fwd, sparseffn::Precision::f64);
  const auto grads = sparseffn::ffn_backward(f.cache, in.dy, w, in.l1, tr, sparseffn::Precision::f64);

  Result r;
  auto note = [&](double e, const char* name) {
    if (r.where.empty() || e > r.worst) {
      r.worst = e;
      r.where = name;
    }
  };
  note(fd_rel_err(grads.dx, in.x, in, step), "dx");
  note(fd_rel_err(grads.dW_u, in.wu, in, step), "dW_u");
  note(fd_rel_err(grads.dW_d, in.wd, in, step), "dW_d");
  if (in.variant == Variant::gated) note(fd_rel_err(grads.dW_g, in.wg, in, step), "dW_g");
  return r;
}

}  // namespace gradcheck
