// Acceptance checks. Each criterion prints one PASS/FAIL line; the exit code
// is the number of failed criteria.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"
#include "sparseffn/bench.hpp"
#include "sparseffn/ffn.hpp"
#include "sparseffn/formats.hpp"
#include "sparseffn/infer.hpp"
#include "sparseffn/train_kernels.hpp"
#include "sparseffn/trainer.hpp"

using namespace sparseffn;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::size_t pick(oracle::Gen& g, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(g);
}

double uniform01(oracle::Gen& g) { return std::uniform_real_distribution<double>(0.0, 1.0)(g); }

// ---------------------------------------------------------------------------

Outcome format_round_trips() {
  const auto t0 = Clock::now();
  oracle::Gen g(1001);
  const std::size_t tiles[] = {4, 64, 256};
  const std::size_t compress[] = {1, 2, 8};
  std::size_t done = 0, failures = 0, overflow_checked = 0, dense_routed = 0;
  std::string first_failure;
  auto fail = [&](const std::string& why) {
    if (failures++ == 0) first_failure = fmt("#%zu %s", done, why.c_str());
  };

  while (done < 1000) {
    const std::size_t T = tiles[pick(g, 0, 2)];
    const std::size_t C = compress[pick(g, 0, 2)];
    if (C > T) continue;
    const std::size_t M = pick(g, 1, 512);
    const std::size_t N = T * pick(g, 1, 512 / T);
    const std::size_t mode = pick(g, 0, 9);
    const double sparsity = mode == 0 ? 0.0 : mode == 1 ? 1.0 : uniform01(g);
    auto dense = oracle::sparse_nonneg<float>(M, N, 1.0 - sparsity, g);

    TwellConfig cfg;
    cfg.tile = T;
    cfg.compress = C;
    const std::size_t slots = T / C;
    if (oracle::max_tile_count(dense, T) > slots) {
      ++overflow_checked;
      bool threw = false;
      try {
        (void)dense_to_twell(dense, cfg);
      } catch (const Error& e) {
        threw = e.code() == ErrorCode::OverflowTile;
      }
      if (!threw) fail("over-full tile did not raise OverflowTile");
      // Keep the first T/C entries of every tile so the matrix fits.
      for (std::size_t r = 0; r < M; ++r) {
        for (std::size_t c0 = 0; c0 < N; c0 += T) {
          std::size_t kept = 0;
          for (std::size_t c = c0; c < c0 + T; ++c) {
            if (dense(r, c) != 0 && ++kept > slots) dense(r, c) = 0;
          }
        }
      }
    }

    try {
      const auto tw = dense_to_twell(dense, cfg);
      if (validate(tw)) fail("invalid TwELL");
      if (!oracle::bitwise_equal(twell_to_dense(tw), dense)) fail("dense->TwELL->dense differs");
      const std::size_t width = pick(g, 1, std::max<std::size_t>(1, N / 4));
      const auto hy = twell_to_hybrid(tw, width, M).hybrid;
      if (hy.overflow()) fail("hybrid overflowed with a full-size tail");
      dense_routed += hy.pattern->dense_rows();
      if (!oracle::bitwise_equal(hybrid_to_dense_matrix(hy), dense)) fail("TwELL->hybrid->dense differs");
    } catch (const std::exception& e) {
      fail(e.what());
    }
    ++done;
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = failures == 0 && secs < 30.0;
  o.detail = fmt("%zu matrices, %zu failures, %zu OverflowTile checks, %zu dense-routed rows, %.1f s (limit 30)",
                 done, failures, overflow_checked, dense_routed, secs);
  if (failures) o.detail += "; first: " + first_failure;
  return o;
}

// ---------------------------------------------------------------------------

// Gate (or up, for the non-gated variant) weights whose pre-activations are
// all positive, all negative or shifted to a random sparsity.
struct InferInstance {
  DenseMatrix x;
  FfnWeights<float> w;
};

InferInstance draw_infer(oracle::Gen& g, Variant v, std::size_t m, std::size_t k, std::size_t n, int edge) {
  InferInstance in;
  in.w.variant = v;
  const double sd = 1.0 / std::sqrt(static_cast<double>(k));
  in.w.W_u = oracle::gaussian<float>(k, n, g, sd);
  if (v == Variant::gated) in.w.W_g = oracle::gaussian<float>(k, n, g, sd);
  in.w.W_d = oracle::gaussian<float>(n, k, g, sd);
  auto& act = v == Variant::gated ? in.w.W_g : in.w.W_u;
  if (edge != 0) {
    // Positive inputs; the sign of the activation weights fixes every sign.
    in.x = oracle::sparse_nonneg<float>(m, k, 1.0, g);
    for (auto& a : act.values()) a = static_cast<float>((edge > 0 ? 1 : -1) * (0.01 + std::abs(a)));
  } else {
    in.x = oracle::gaussian<float>(m, k, g);
    for (std::size_t i = 0; i < m; ++i) in.x(i, 0) = 1.0f;
    const double shift = -2.5 * uniform01(g);
    for (std::size_t j = 0; j < n; ++j) act(0, j) = static_cast<float>(shift);
  }
  return in;
}

std::size_t safe_compress(const DenseMatrix& pre, std::size_t T, std::size_t want) {
  const std::size_t need = oracle::max_tile_count(oracle::relu(pre), T);
  std::size_t C = std::min(want, T);
  while (C > 1 && T / C < need) C /= 2;
  return C;
}

Outcome inference_equivalence() {
  const auto t0 = Clock::now();
  oracle::Gen g(2002);
  const std::size_t tiles[] = {4, 64, 256};
  double worst = 0.0;
  std::size_t failures = 0, zero_edge = 0, full_edge = 0, gated = 0;
  std::string first_failure;
  for (int i = 0; i < 200; ++i) {
    const Variant v = i % 2 == 0 ? Variant::gated : Variant::non_gated;
    gated += v == Variant::gated;
    const int edge = i % 10 == 0 ? 1 : i % 10 == 1 ? -1 : 0;  // 0% and 100% sparsity
    zero_edge += edge > 0;
    full_edge += edge < 0;
    const std::size_t T = tiles[pick(g, 0, 2)];
    const std::size_t m = pick(g, 1, 96), k = pick(g, 1, 96);
    const std::size_t n = T * pick(g, 1, std::max<std::size_t>(1, 512 / T));
    const auto in = draw_infer(g, v, m, k, n, edge);
    const auto& act = v == Variant::gated ? in.w.W_g : in.w.W_u;
    TwellConfig cfg;
    cfg.tile = T;
    cfg.compress = safe_compress(oracle::matmul(in.x, act), T, std::size_t{1} << pick(g, 0, 3));

    const auto x = cast<double>(in.x);
    const auto ref = v == Variant::gated
                         ? oracle::gated_ffn(x, cast<double>(in.w.W_g), cast<double>(in.w.W_u), cast<double>(in.w.W_d))
                         : oracle::plain_ffn(x, cast<double>(in.w.W_u), cast<double>(in.w.W_d));
    try {
      const auto y = cast<double>(ffn_forward_infer(in.x, in.w, cfg));
      const double e = oracle::rel_err(y, ref);
      const double e_dense = oracle::rel_err(cast<double>(ffn_forward_dense(in.x, in.w)), ref);
      worst = std::max({worst, e, e_dense});
      if (e > 1e-5 || e_dense > 1e-5 || !all_finite(y)) {
        if (failures++ == 0) first_failure = fmt("#%d rel err %.3g (dense %.3g)", i, e, e_dense);
      }
    } catch (const std::exception& ex) {
      if (failures++ == 0) first_failure = fmt("#%d %s", i, ex.what());
    }
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = failures == 0 && secs < 60.0;
  o.detail = fmt("200 instances (%zu gated, %zu at 0%%, %zu at 100%%), worst rel err %.2e (limit 1e-5), %.1f s",
                 gated, zero_edge, full_edge, worst, secs);
  if (failures) o.detail += "; first: " + first_failure;
  return o;
}

// ---------------------------------------------------------------------------

// Signed matrix with empty, sparse and dense rows for an ELL width of `width`.
DenseMatrix routed_matrix(std::size_t m, std::size_t n, std::size_t width, oracle::Gen& g) {
  auto d = oracle::sparse_signed<float>(m, n, 0.05 + 0.25 * uniform01(g), g);
  for (std::size_t r = 0; r < m; ++r) {
    if (r % 4 == 1) {
      std::size_t kept = 0;
      for (std::size_t c = 0; c < n; ++c) {
        if (d(r, c) != 0 && ++kept > width) d(r, c) = 0;
      }
      if (kept == 0) d(r, pick(g, 0, n - 1)) = -0.75f;
    } else if (r % 4 == 0) {
      for (std::size_t c = 0; c < n; ++c) {
        if (d(r, c) == 0 && c % 2 == 0) d(r, c) = static_cast<float>(0.25 + uniform01(g));
      }
    } else if (r % 7 == 3) {
      for (std::size_t c = 0; c < n; ++c) d(r, c) = 0;
    }
  }
  return d;
}

DenseMatrix64 support_of(const DenseMatrix& d) {
  DenseMatrix64 s(d.rows(), d.cols());
  for (std::size_t i = 0; i < d.size(); ++i) s.values()[i] = d.values()[i] != 0 ? 1.0 : 0.0;
  return s;
}

Outcome training_kernels() {
  const auto t0 = Clock::now();
  oracle::Gen g(3003);
  double worst = 0.0;
  std::size_t failures = 0, overflow_cases = 0, sparse_rows = 0, dense_rows = 0, dropped = 0;
  std::string first_failure;
  auto fail = [&](int i, const std::string& why) {
    if (failures++ == 0) first_failure = fmt("#%d %s", i, why.c_str());
  };
  auto tol = [&](int i, const char* what, double e) {
    worst = std::max(worst, e);
    if (e > 1e-5) fail(i, fmt("%s rel err %.3g", what, e));
  };

  for (int i = 0; i < 200; ++i) {
    const bool force_overflow = i % 10 == 9;
    const std::size_t m = pick(g, force_overflow ? 12 : 2, 96);
    const std::size_t n = pick(g, 4, 96), k = pick(g, 1, 48);
    const std::size_t width = 1 + n / 8;
    const auto d = routed_matrix(m, n, width, g);
    const auto dd = cast<double>(d);
    const auto H = dense_to_hybrid(d, width, m);
    const auto& p = *H.pattern;
    std::size_t here_dense = 0, here_sparse = 0;
    for (std::size_t r = 0; r < m; ++r) (p.is_dense(r) ? here_dense : here_sparse) += p.row_nnz[r] > 0;
    if (here_dense == 0 || here_sparse == 0) fail(i, "routing not mixed");
    dense_rows += here_dense;
    sparse_rows += here_sparse;

    try {
      const auto B = oracle::gaussian<float>(n, k, g);
      tol(i, "hybrid_to_dense_matmul",
          oracle::rel_err(cast<double>(hybrid_to_dense_matmul(H, B)), oracle::matmul(dd, cast<double>(B))));

      const auto A = oracle::gaussian<float>(m, k, g);
      const auto Bk = oracle::gaussian<float>(k, n, g);
      const auto masked = oracle::masked(oracle::matmul(cast<double>(A), cast<double>(Bk)), support_of(d));
      const auto P = dense_to_hybrid_matmul(A, Bk, H.pattern);
      if (!same_pattern(P.pattern, H.pattern)) fail(i, "product left the pattern");
      tol(i, "dense_to_hybrid_matmul", oracle::rel_err(cast<double>(hybrid_to_dense_matrix(P)), masked));
      const auto Pt = dense_to_hybrid_matmul_bt(A, oracle::transpose(Bk), H.pattern);
      tol(i, "dense_to_hybrid_matmul_bt", oracle::rel_err(cast<double>(hybrid_to_dense_matrix(Pt)), masked));

      tol(i, "hybrid_elementwise_mul",
          oracle::rel_err(cast<double>(hybrid_to_dense_matrix(hybrid_elementwise_mul(H, P))), oracle::mul(dd, masked)));

      const auto want = oracle::transpose(d);
      if (!force_overflow) {
        const auto t = hybrid_transpose(H, pick(g, 1, 6), n);
        if (t.overflow() || validate(t)) fail(i, "roomy transpose overflowed or is invalid");
        if (!oracle::bitwise_equal(hybrid_to_dense_matrix(t), want)) fail(i, "transpose not exact");
      } else {
        ++overflow_cases;
        const auto t = hybrid_transpose(H, 1, 1);
        if (!t.overflow()) fail(i, "undersized transpose did not overflow");
        if (validate(t)) fail(i, "overflowed transpose is invalid");
        const auto got = hybrid_to_dense_matrix(t);
        const auto& tp = *t.pattern;
        // Kept rows are exact; dropped rows are dense-routed without a tail slot.
        for (std::size_t r = 0; r < n; ++r) {
          const bool lost = tp.is_dense(r) && tp.tail_map[r] < 0;
          dropped += lost;
          if (tp.row_nnz[r] != oracle::count_nonzero_row(want, r)) fail(i, "transposed count wrong");
          for (std::size_t c = 0; c < m; ++c) {
            const float expect = lost ? 0.0f : want(r, c);
            if (std::memcmp(&got(r, c), &expect, sizeof(float)) != 0) {
              fail(i, fmt("overflowed transpose row %zu differs", r));
              break;
            }
          }
        }
      }
    } catch (const std::exception& e) {
      fail(i, e.what());
    }
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = failures == 0 && overflow_cases > 0 && secs < 60.0;
  o.detail = fmt("200 instances, %zu sparse / %zu dense rows, %zu overflow transposes (%zu rows dropped), "
                 "worst rel err %.2e (limit 1e-5), transpose exact, %.1f s",
                 sparse_rows, dense_rows, overflow_cases, dropped, worst, secs);
  if (failures) o.detail += fmt("; %zu failures, first: ", failures) + first_failure;
  return o;
}

// ---------------------------------------------------------------------------

Outcome gradient_check() {
  const auto t0 = Clock::now();
  oracle::Gen g(4004);
  double worst = 0.0;
  std::string worst_where;
  std::size_t failures = 0, rejected = 0;
  for (int i = 0; i < 50;) {
    const Variant v = (i / 2) % 2 == 0 ? Variant::gated : Variant::non_gated;
    const bool l1 = i % 2 == 1;
    const auto in = gradcheck::draw(g, v, l1);
    if (!in) {
      ++rejected;
      continue;
    }
    const auto r = gradcheck::check(*in);
    if (r.worst > worst) {
      worst = r.worst;
      worst_where = r.where;
    }
    failures += !(r.worst <= 1e-6);
    ++i;
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = failures == 0 && secs < 60.0;
  o.detail = fmt("50 instances (both variants, with and without L1, %zu near-kink draws skipped), "
                 "worst rel err %.2e in %s (limit 1e-6), %.1f s",
                 rejected, worst, worst_where.c_str(), secs);
  return o;
}

// ---------------------------------------------------------------------------

Outcome work_proportionality() {
  const auto t0 = Clock::now();
  oracle::Gen g(5005);
  const double targets[] = {0.0, 0.5, 0.9, 0.99, 0.995, 1.0};
  double worst_ratio = 0.0;
  std::size_t failures = 0, cases = 0;
  std::string first_failure;
  for (int rep = 0; rep < 2; ++rep) {
    for (double s : targets) {
      ++cases;
      const std::size_t m = pick(g, 64, 256), k = pick(g, 64, 256), n = 256 * pick(g, 1, 4);
      InferInstance in = draw_infer(g, Variant::gated, m, k, n, s == 0.0 ? 1 : s == 1.0 ? -1 : 0);
      if (s > 0.0 && s < 1.0) {
        // Shift the gate so that about a fraction s of it is non-positive.
        double norm2 = 0.0;
        for (std::size_t c = 1; c < k; ++c) norm2 += 1.0 / static_cast<double>(k);
        const float shift = static_cast<float>(normal_quantile(1.0 - s) * std::sqrt(norm2));
        for (std::size_t j = 0; j < n; ++j) in.w.W_g(0, j) = shift;
      }
      const auto pre = oracle::matmul(in.x, in.w.W_g);
      const std::uint64_t nnz = oracle::count_nonzero(oracle::relu(pre));
      TwellConfig cfg;
      cfg.tile = 256;
      cfg.compress = safe_compress(pre, 256, 8);

      KernelStats gate, fused, whole, dense;
      const auto h = gate_project_twell(in.x, in.w.W_g, cfg, Precision::f32, &gate);
      (void)fused_up_down(in.x, h, in.w.W_u, in.w.W_d, Precision::f32, &fused);
      (void)ffn_forward_infer(in.x, in.w, cfg, Precision::f32, &whole);
      (void)ffn_forward_dense(in.x, in.w, Precision::f32, &dense);

      const double mnk = static_cast<double>(m) * n * k;
      const double formula = (mnk + 2.0 * k * static_cast<double>(nnz)) / (3.0 * mnk);
      const double ratio = static_cast<double>(whole.macs) / static_cast<double>(dense.macs);
      const double dev = std::abs(ratio - formula) / formula;
      worst_ratio = std::max(worst_ratio, dev);
      const bool exact = h.total_nnz() == nnz && fused.macs == 2ull * k * nnz;
      if (!exact || dev > 0.01) {
        if (failures++ == 0)
          first_failure = fmt("s=%.3f nnz %llu stored %llu fused %llu ratio %.6f formula %.6f", s,
                              static_cast<unsigned long long>(nnz),
                              static_cast<unsigned long long>(h.total_nnz()),
                              static_cast<unsigned long long>(fused.macs), ratio, formula);
      }
    }
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = failures == 0;
  o.detail = fmt("%zu gated instances at sparsity 0..100%%, fused MACs = 2K*nnz exactly, "
                 "worst MAC-ratio deviation %.2e (limit 1e-2), %.1f s",
                 cases, worst_ratio, secs);
  if (failures) o.detail += "; first: " + first_failure;
  return o;
}

// ---------------------------------------------------------------------------

Outcome cpu_speedup(std::size_t reps) {
  const auto t0 = Clock::now();
  BenchConfig c;
  c.m = 2048;
  c.k = 2048;
  c.n = 5632;
  c.reps = reps;
  c.seed = 6006;
  const std::vector<double> targets = {0.90, 0.99, 0.995};
  const auto rs = run_bench_sweep(c, targets);
  bool ok = true;
  std::string parts;
  for (std::size_t i = 0; i < rs.size(); ++i) {
    const auto& r = rs[i];
    ok = ok && r.check_passed && r.max_rel_err <= 1e-5 && std::abs(r.realized_sparsity - targets[i]) < 0.005;
    if (i > 0) ok = ok && r.speedup > rs[i - 1].speedup;
    if (targets[i] >= 0.99) ok = ok && r.speedup > 1.0;
    parts += fmt("%s s=%.4f C=%zu dense %.3f s sparse %.3f s speedup %.3f", i ? ";" : "", r.realized_sparsity,
                 r.compress, r.dense_median, r.sparse_median, r.speedup);
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = ok && secs < 300.0;
  o.detail = fmt("M=2048 K=2048 N=5632, %zu reps, medians:", reps) + parts + fmt("; %.0f s (limit 300)", secs);
  return o;
}

// ---------------------------------------------------------------------------

// The default toy setup, seed 0.
TrainConfig toy_config() { return TrainConfig{}; }

Outcome sparsification_trend() {
  const auto t0 = Clock::now();
  const double coeffs[] = {0.0, 0.01, 0.1, 1.0};
  std::vector<FinalRecord> finals;
  for (double c : coeffs) {
    auto cfg = toy_config();
    cfg.l1_coefficient = c;
    finals.push_back(train_toy(cfg).report.final);
  }
  bool ok = true;
  std::string parts;
  for (std::size_t i = 0; i < finals.size(); ++i) {
    if (i > 0) ok = ok && finals[i].mean_nnz_all() <= finals[i - 1].mean_nnz_all();
    parts += fmt("%s c=%g nnz %.2f loss %.5f", i ? "," : "", coeffs[i], finals[i].mean_nnz_all(), finals[i].loss);
  }
  const double signed_gap = (finals[1].loss - finals[0].loss) / finals[0].loss;
  const double loss_gap = std::abs(signed_gap);
  ok = ok && loss_gap <= 0.10;
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = ok && secs < 600.0;
  o.detail = "L1 ladder:" + parts + fmt("; loss at c=0.01 differs by %+.1f%% (limit 10%%), %.0f s (limit 600)",
                                        100.0 * signed_gap, secs);
  return o;
}

Outcome mitigation() {
  const auto t0 = Clock::now();
  auto cfg = toy_config();
  cfg.l1_coefficient = 1.0;
  cfg.reinit_lambda = 0.0;
  const auto plain = train_toy(cfg).report.final;
  cfg.reinit_lambda = 0.1;
  const auto mitigated = train_toy(cfg).report.final;
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = mitigated.dead_frac_all() < plain.dead_frac_all() && secs < 600.0;
  o.detail = fmt("c=1: dead fraction %.4f with reinit 0.1 vs %.4f without, %.0f s (limit 600)",
                 mitigated.dead_frac_all(), plain.dead_frac_all(), secs);
  return o;
}

Outcome overflow_retry() {
  const auto t0 = Clock::now();
  auto cfg = toy_config();
  cfg.l1_coefficient = 0.01;
  cfg.dense_cap = cfg.batch;
  cfg.transpose_dense_cap = cfg.hidden;
  const auto roomy = train_toy(cfg).report.final;
  cfg.dense_cap = 1;
  cfg.transpose_dense_cap = 1;
  const auto tight = train_toy(cfg).report.final;
  const double gap = std::abs(tight.loss - roomy.loss) / roomy.loss;
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = tight.retries >= 1 && gap <= 1e-6;
  o.detail = fmt("caps 1/1: %llu retries, converged to %zu/%zu, loss %.9g vs roomy %.9g (%llu retries), "
                 "rel gap %.1e (limit 1e-6), %.0f s",
                 static_cast<unsigned long long>(tight.retries), tight.dense_cap, tight.transpose_dense_cap,
                 tight.loss, roomy.loss, static_cast<unsigned long long>(roomy.retries), gap, secs);
  return o;
}

// ---------------------------------------------------------------------------

Outcome schedule_property() {
  const auto t0 = Clock::now();
  std::size_t grids = 0, failures = 0;
  std::string first_failure;
  for (std::size_t gm = 1; gm <= 64; ++gm) {
    for (std::size_t gn = 1; gn <= 64; ++gn) {
      ++grids;
      const auto s = hilbert_schedule(gm, gn);
      std::vector<std::uint8_t> seen(gm * gn, 0);
      bool ok = s.grid_m == gm && s.grid_n == gn && s.order.size() == gm * gn;
      for (const auto& [r, c] : s.order) {
        if (r >= gm || c >= gn || seen[r * gn + c]++) {
          ok = false;
          break;
        }
      }
      const bool square_pow2 = gm == gn && (gm & (gm - 1)) == 0;
      if (ok && square_pow2) {
        for (std::size_t i = 1; i < s.order.size(); ++i) ok = ok && oracle::adjacent(s.order[i - 1], s.order[i]);
      }
      if (!ok && failures++ == 0) first_failure = fmt("%zux%zu", gm, gn);
    }
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = failures == 0 && secs < 5.0;
  o.detail = fmt("%zu grids bijective, square power-of-two grids fully adjacent, %.2f s (limit 5)", grids, secs);
  if (failures) o.detail += fmt("; %zu failures, first %s", failures, first_failure.c_str());
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sparseffn acceptance checks"};
  std::vector<int> only;
  std::size_t reps = 15;
  app.add_option("--criterion", only, "Run only these criteria (1-10)")->check(CLI::Range(1, 10));
  app.add_option("--bench-reps", reps, "Repetitions for the speedup sweep")->check(CLI::PositiveNumber);
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"format round trips", format_round_trips},
      {"inference fusion equivalence", inference_equivalence},
      {"training-kernel oracles", training_kernels},
      {"gradient check", gradient_check},
      {"work proportionality", work_proportionality},
      {"CPU speedup trend", [&] { return cpu_speedup(reps); }},
      {"sparsification trend", sparsification_trend},
      {"dead-neuron mitigation", mitigation},
      {"overflow-retry safety", overflow_retry},
      {"schedule property", schedule_property},
  };

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.detail = std::string("exception: ") + e.what();
    }
    failed += !o.pass;
    std::printf("criterion %2d %s  %s: %s\n", id, o.pass ? "PASS" : "FAIL", criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
  }
  return failed;
}
