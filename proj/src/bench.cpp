#include "sparseffn/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "json.hpp"
#include "sparseffn/formats.hpp"
#include "sparseffn/infer.hpp"

namespace sparseffn {

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

// Largest power-of-two C dividing T whose T/C slots clear the expected
// per-tile count by eight standard deviations.
std::size_t auto_compress(std::size_t tile, double sparsity) {
  const double p = 1.0 - sparsity;
  const double need = tile * p + 8.0 * std::sqrt(tile * p * (1.0 - p)) + 2.0;
  std::size_t c = 1;
  while (tile % (c * 2) == 0 && static_cast<double>(tile / (c * 2)) >= need) c *= 2;
  return c;
}

// Gate column shift τ so that P(N(−τ, 1) > 0) = 1 − s. Saturates at the
// edges so 0 and 1 give all-positive and all-negative pre-activations.
double gate_shift(double sparsity) {
  if (sparsity <= 0.0) return -1e4;
  if (sparsity >= 1.0) return 1e4;
  return normal_quantile(sparsity);
}

struct Problem {
  Matrix<float> x;
  FfnWeights<float> w;
  Matrix<float> w_u_t;  // gated only
};

Problem make_problem(const BenchConfig& cfg) {
  auto rng = SeededRng::derive(cfg.seed, 0xBE);
  Problem p;
  p.x = randn<float>(cfg.m, cfg.k, 1.0, rng);
  for (std::size_t r = 0; r < cfg.m; ++r) p.x(r, 0) = 1.0f;

  // Column 0 of x is a constant 1, so row 0 of the gate weights is a bias;
  // the remaining K−1 rows give unit-variance pre-activations.
  const double sd = cfg.k > 1 ? 1.0 / std::sqrt(static_cast<double>(cfg.k - 1)) : 1.0;
  auto gate = randn<float>(cfg.k, cfg.n, sd, rng);
  const auto shift = static_cast<float>(-gate_shift(cfg.sparsity));
  for (std::size_t c = 0; c < cfg.n; ++c) gate(0, c) = shift;

  p.w.variant = cfg.variant;
  if (cfg.variant == Variant::gated) {
    p.w.W_g = std::move(gate);
    p.w.W_u = randn<float>(cfg.k, cfg.n, 1.0 / std::sqrt(static_cast<double>(cfg.k)), rng);
    p.w_u_t = transpose_dense(p.w.W_u);
  } else {
    p.w.W_u = std::move(gate);
  }
  p.w.W_d = randn<float>(cfg.n, cfg.k, 1.0 / std::sqrt(static_cast<double>(cfg.n)), rng);
  return p;
}

Matrix<float> run_sparse(const Problem& p, const TwellConfig& tw, KernelStats* gate_stats, KernelStats* fused_stats,
                         TwellMatrix<float>* keep = nullptr) {
  if (p.w.variant == Variant::gated) {
    auto h = gate_project_twell(p.x, p.w.W_g, tw, Precision::f32, gate_stats);
    auto y = fused_up_down_t(p.x, h, p.w_u_t, p.w.W_d, Precision::f32, fused_stats);
    if (keep) *keep = std::move(h);
    return y;
  }
  auto h = gate_project_twell(p.x, p.w.W_u, tw, Precision::f32, gate_stats);
  auto y = down_project_twell(h, p.w.W_d, 1, Precision::f32, fused_stats);
  if (keep) *keep = std::move(h);
  return y;
}

}  // namespace

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw Error(ErrorCode::InvalidArgument, "normal_quantile needs 0 < p < 1");
  // Bisection on Φ(t) = erfc(−t/√2)/2, which is monotone and exact to the
  // library's erfc.
  double lo = -40.0, hi = 40.0;
  for (int i = 0; i < 200 && hi - lo > 1e-15; ++i) {
    const double mid = 0.5 * (lo + hi);
    const double cdf = 0.5 * std::erfc(-mid / std::sqrt(2.0));
    (cdf < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

void BenchConfig::check_config() const {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw Error(ErrorCode::InvalidArgument, what);
  };
  need(m >= 1 && k >= 1 && n >= 1, "bench dims m, k, n must be at least 1");
  need(sparsity >= 0.0 && sparsity <= 1.0, "sparsity must lie in [0, 1]");
  need(tile >= 1 && n % tile == 0, "tile must divide n");
  need(compress == 0 || tile % compress == 0, "compress must divide tile");
  need(ell_width >= 1, "ell_width must be at least 1");
  need(reps >= 1, "reps must be at least 1");
}

namespace {

struct Prepared {
  Problem prob;
  TwellConfig tw;
  BenchResult result;
};

Prepared prepare(const BenchConfig& cfg) {
  cfg.check_config();
  Prepared p{make_problem(cfg), {}, {}};
  auto& r = p.result;
  r.config = cfg;
  p.tw.tile = cfg.tile;
  p.tw.compress = cfg.compress ? cfg.compress : auto_compress(cfg.tile, cfg.sparsity);

  // Untimed sparse run: settles C (halving on overflow when it was picked
  // automatically) and gives the instrumented counts.
  KernelStats gate_stats, fused_stats;
  TwellMatrix<float> h;
  Matrix<float> y_sparse;
  while (true) {
    gate_stats = fused_stats = KernelStats{};
    try {
      y_sparse = run_sparse(p.prob, p.tw, &gate_stats, &fused_stats, &h);
      break;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::OverflowTile || cfg.compress != 0 || p.tw.compress == 1) throw;
      p.tw.compress /= 2;
    }
  }
  r.compress = p.tw.compress;
  r.nnz = h.total_nnz();
  r.realized_sparsity = 1.0 - static_cast<double>(r.nnz) / (static_cast<double>(cfg.m) * cfg.n);
  const auto hyb = twell_to_hybrid(h, cfg.ell_width, cfg.m);
  const auto& rows = hyb.hybrid.pattern->row_nnz;
  r.max_row_nnz = rows.empty() ? 0 : *std::max_element(rows.begin(), rows.end());
  r.dense_rows = hyb.hybrid.pattern->dense_rows();
  r.gate_macs = gate_stats.macs;
  r.fused_macs = fused_stats.macs;
  r.sparse_macs = gate_stats.macs + fused_stats.macs;

  KernelStats dense_stats;
  const auto y_dense = ffn_forward_dense(p.prob.x, p.prob.w, Precision::f32, &dense_stats);
  r.dense_macs = dense_stats.macs;
  r.mac_ratio = static_cast<double>(r.sparse_macs) / static_cast<double>(r.dense_macs);
  const double mnk = static_cast<double>(cfg.m) * cfg.n * cfg.k;
  const double nnz = static_cast<double>(r.nnz);
  r.theoretical_ratio = cfg.variant == Variant::gated ? (mnk + 2.0 * cfg.k * nnz) / (3.0 * mnk)
                                                      : (mnk + cfg.k * nnz) / (2.0 * mnk);
  if (cfg.check) {
    r.max_rel_err = max_relative_error(y_sparse, y_dense);
    r.check_passed = r.max_rel_err <= 1e-5;
  }
  return p;
}

}  // namespace

std::vector<BenchResult> run_bench_sweep(const BenchConfig& base, const std::vector<double>& sparsities) {
  if (sparsities.empty()) throw Error(ErrorCode::InvalidArgument, "bench sweep needs at least one sparsity");
  std::vector<Prepared> runs;
  for (double s : sparsities) {
    BenchConfig c = base;
    c.sparsity = s;
    runs.push_back(prepare(c));
  }
  // Dense work does not depend on the sparsity, so one dense run per round
  // serves every result. The visiting order rotates from round to round.
  std::vector<double> dense;
  for (std::size_t rep = 0; rep < base.reps; ++rep) {
    auto t0 = std::chrono::steady_clock::now();
    const auto yd = ffn_forward_dense(runs[rep % runs.size()].prob.x, runs[rep % runs.size()].prob.w);
    dense.push_back(seconds_since(t0));
    for (std::size_t j = 0; j < runs.size(); ++j) {
      auto& p = runs[(rep + j) % runs.size()];
      t0 = std::chrono::steady_clock::now();
      const auto ys = run_sparse(p.prob, p.tw, nullptr, nullptr);
      p.result.sparse_seconds.push_back(seconds_since(t0));
    }
  }
  std::vector<BenchResult> out;
  for (auto& p : runs) {
    auto& r = p.result;
    r.dense_seconds = dense;
    r.dense_median = median(r.dense_seconds);
    r.sparse_median = median(r.sparse_seconds);
    r.speedup = r.sparse_median > 0 ? r.dense_median / r.sparse_median : 0.0;
    out.push_back(std::move(r));
  }
  return out;
}

BenchResult run_bench(const BenchConfig& cfg) { return run_bench_sweep(cfg, {cfg.sparsity}).front(); }

std::string bench_to_json(const BenchResult& r, int indent) {
  const auto& c = r.config;
  nlohmann::json j = {{"schema", "sparseffn.bench/1"},
                      {"m", c.m},
                      {"k", c.k},
                      {"n", c.n},
                      {"variant", c.variant == Variant::gated ? "gated" : "non_gated"},
                      {"target_sparsity", c.sparsity},
                      {"realized_sparsity", r.realized_sparsity},
                      {"tile", c.tile},
                      {"compress", r.compress},
                      {"ell_width", c.ell_width},
                      {"reps", c.reps},
                      {"seed", c.seed},
                      {"nnz", r.nnz},
                      {"max_row_nnz", r.max_row_nnz},
                      {"dense_rows", r.dense_rows},
                      {"dense_macs", r.dense_macs},
                      {"sparse_macs", r.sparse_macs},
                      {"gate_macs", r.gate_macs},
                      {"fused_macs", r.fused_macs},
                      {"mac_ratio", r.mac_ratio},
                      {"theoretical_ratio", r.theoretical_ratio},
                      {"dense_seconds", r.dense_seconds},
                      {"sparse_seconds", r.sparse_seconds},
                      {"dense_median", r.dense_median},
                      {"sparse_median", r.sparse_median},
                      {"speedup", r.speedup},
                      {"max_rel_err", r.max_rel_err},
                      {"check_passed", r.check_passed}};
  return j.dump(indent);
}

BenchResult bench_from_json(const std::string& text) {
  BenchResult r;
  try {
    const auto j = nlohmann::json::parse(text);
    if (j.at("schema") != "sparseffn.bench/1") throw Error(ErrorCode::Format, "unknown bench schema");
    auto& c = r.config;
    c.m = j.at("m");
    c.k = j.at("k");
    c.n = j.at("n");
    c.variant = j.at("variant") == "gated" ? Variant::gated : Variant::non_gated;
    c.sparsity = j.at("target_sparsity");
    c.tile = j.at("tile");
    c.compress = j.at("compress");
    c.ell_width = j.at("ell_width");
    c.reps = j.at("reps");
    c.seed = j.at("seed");
    r.compress = j.at("compress");
    r.realized_sparsity = j.at("realized_sparsity");
    r.nnz = j.at("nnz");
    r.max_row_nnz = j.at("max_row_nnz");
    r.dense_rows = j.at("dense_rows");
    r.dense_macs = j.at("dense_macs");
    r.sparse_macs = j.at("sparse_macs");
    r.gate_macs = j.at("gate_macs");
    r.fused_macs = j.at("fused_macs");
    r.mac_ratio = j.at("mac_ratio");
    r.theoretical_ratio = j.at("theoretical_ratio");
    r.dense_seconds = j.at("dense_seconds").get<std::vector<double>>();
    r.sparse_seconds = j.at("sparse_seconds").get<std::vector<double>>();
    r.dense_median = j.at("dense_median");
    r.sparse_median = j.at("sparse_median");
    r.speedup = j.at("speedup");
    r.max_rel_err = j.at("max_rel_err");
    r.check_passed = j.at("check_passed");
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Format, std::string("bad bench record: ") + e.what());
  }
  return r;
}

}  // namespace sparseffn
