#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sparseffn/weights.hpp"

namespace sparseffn {

struct BenchConfig {
  std::size_t m = 512;
  std::size_t k = 512;
  std::size_t n = 1408;
  double sparsity = 0.99;  // target fraction of zero gate activations
  Variant variant = Variant::gated;
  std::size_t tile = 256;
  std::size_t compress = 0;  // 0 picks the largest safe C for the target
  std::size_t ell_width = 128;
  std::size_t reps = 3;
  std::uint64_t seed = 0;
  bool check = true;  // compare sparse and dense outputs

  // Throws InvalidArgument naming the bad field.
  void check_config() const;
};

struct BenchResult {
  BenchConfig config;
  std::size_t compress = 0;  // C actually used
  double realized_sparsity = 0.0;
  std::uint64_t nnz = 0;
  std::uint32_t max_row_nnz = 0;
  std::size_t dense_rows = 0;  // rows over ell_width in a hybrid view of h
  std::uint64_t dense_macs = 0;
  std::uint64_t sparse_macs = 0;
  std::uint64_t gate_macs = 0;
  std::uint64_t fused_macs = 0;  // up/down (gated) or down (non-gated)
  double mac_ratio = 0.0;          // sparse_macs / dense_macs
  double theoretical_ratio = 0.0;  // (MNK + 2K·nnz) / (3MNK), or (MNK + K·nnz) / (2MNK)
  std::vector<double> dense_seconds;
  std::vector<double> sparse_seconds;
  double dense_median = 0.0;
  double sparse_median = 0.0;
  double speedup = 0.0;  // dense_median / sparse_median
  double max_rel_err = 0.0;
  bool check_passed = true;
};

// Draws random inputs and weights whose gate pre-activations are shifted so
// that a `sparsity` fraction is expected to be non-positive, then times the
// dense reference and the sparse pipeline. Up weights are transposed once
// before timing, as a model loader would. Dense and sparse repetitions
// alternate.
BenchResult run_bench(const BenchConfig& cfg);

// Same for several target sparsities. All problems are built first; each
// repetition round runs the dense reference once, shared by every result,
// then the sparse pipeline at every sparsity, so slow phases of the machine
// hit all of them alike.
std::vector<BenchResult> run_bench_sweep(const BenchConfig& base, const std::vector<double>& sparsities);

// One record per line of the documented schema:
//   { "schema": "sparseffn.bench/1", "m", "k", "n", "variant", "target_sparsity",
//     "realized_sparsity", "tile", "compress", "ell_width", "reps", "seed", "nnz",
//     "max_row_nnz", "dense_rows", "dense_macs", "sparse_macs", "gate_macs",
//     "fused_macs", "mac_ratio", "theoretical_ratio", "dense_seconds": [...],
//     "sparse_seconds": [...], "dense_median", "sparse_median", "speedup",
//     "max_rel_err", "check_passed" }
std::string bench_to_json(const BenchResult& r, int indent = -1);
BenchResult bench_from_json(const std::string& text);

// Φ⁻¹(p) for 0 < p < 1.
double normal_quantile(double p);

}  // namespace sparseffn
