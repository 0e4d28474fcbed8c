#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "sparseffn/ffn.hpp"
#include "sparseffn/statkit.hpp"

namespace sparseffn {

// Toy sparse training setup. Keys accepted by set_config_value match the
// member names.
struct TrainConfig {
  std::size_t layers = 2;
  std::size_t batch = 128;  // M
  std::size_t model_dim = 64;  // K
  std::size_t hidden = 256;  // N
  std::size_t steps = 2000;
  Variant variant = Variant::gated;

  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.1;
  double max_grad_norm = 1.0;  // 0 disables clipping

  double l1_coefficient = 0.0;
  std::size_t warmup_plain_steps = 0;
  std::size_t warmup_ramp_steps = 0;
  double reinit_lambda = 0.0;
  double init_sigma = 0.02;

  // Hidden activations (M×N) and their transposes (N×M).
  std::size_t ell_width = 128;
  std::size_t dense_cap = 16;
  std::size_t transpose_ell_width = 64;
  std::size_t transpose_dense_cap = 32;
  std::size_t tile = 256;
  std::size_t compress = 1;
  std::size_t max_retries = 32;  // per step

  // Synthetic task: tokens drawn from a Zipf law over `vocab`, embedded and
  // offset by a position embedding; the target is x + teacher(x) for a
  // sparse random gated teacher.
  std::size_t vocab = 512;
  std::size_t seq_len = 32;
  std::size_t teacher_hidden = 32;
  double teacher_density = 0.25;
  double zipf_exponent = 1.0;
  double input_mean = 0.5;

  std::uint64_t seed = 0;

  // Throws InvalidArgument naming the first bad field.
  void check() const;
};

// Sets one field from text. Throws InvalidArgument naming the key on an
// unknown key or unparsable value.
void set_config_value(TrainConfig& cfg, const std::string& key, const std::string& value);
// Flat key=value lines; blank lines and lines starting with '#' are skipped.
TrainConfig parse_train_config(std::istream& is);
TrainConfig load_train_config(const std::string& path);
std::vector<std::pair<std::string, std::string>> config_entries(const TrainConfig& cfg);

double l1_schedule(std::size_t step, const TrainConfig& cfg);

// coeff · (1/L) · Σ_l l1_mean_l / N, where l1_mean_l is the per-row mean of
// Σ_n |h| for layer l.
double l1_loss(const std::vector<double>& per_layer_l1_means, std::size_t hidden, std::size_t layers,
               double coeff);

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.1;
  double max_grad_norm = 1.0;  // 0 disables clipping
};

template <class T>
struct OptimizerState {
  std::vector<Matrix<T>> m;
  std::vector<Matrix<T>> v;
  std::uint64_t step = 0;
};

// One AdamW update with bias-corrected moments and decoupled weight decay.
// Gradients are first scaled so their global L2 norm is at most
// max_grad_norm. Returns the norm before clipping.
template <class T>
double adamw_step(const std::vector<Matrix<T>*>& params, const std::vector<const Matrix<T>*>& grads,
                  OptimizerState<T>& state, const AdamWConfig& cfg);

// 1 per neuron that fired in at least one row of the pattern.
std::vector<std::uint8_t> neuron_activity(const HybridPattern& pattern);

// Fraction of neurons with no activity, per layer.
std::vector<double> track_dead_neurons(const std::vector<std::vector<std::uint8_t>>& activity);

// W[:, j] ← (1−λ)·W[:, j] + λ·N(0, σ²) for every j with dead_mask[j] set.
// Noise is drawn column by column, rows in order. Returns the number of
// columns touched.
template <class T>
std::size_t reinit_dead_columns(Matrix<T>& W, const std::vector<std::uint8_t>& dead_mask, double lambda,
                                double sigma, SeededRng& rng);

struct ToyTask {
  Matrix<float> embed;  // vocab × K
  Matrix<float> pos;    // seq_len × K
  FfnWeights<float> teacher;
  std::vector<double> zipf_cdf;
};

struct Batch {
  Matrix<float> x;
  Matrix<float> target;
  std::vector<std::int32_t> tokens;
  std::vector<std::uint32_t> positions;
  std::vector<std::uint64_t> sequences;
};

ToyTask make_task(const TrainConfig& cfg);
// Stream that train_toy draws step `step`'s batch from.
SeededRng step_stream(const TrainConfig& cfg, std::size_t step);
Batch sample_batch(const ToyTask& task, const TrainConfig& cfg, SeededRng& rng, std::uint64_t first_sequence);

struct StepRecord {
  std::uint64_t step = 0;
  double loss = 0.0;     // task loss
  double l1_loss = 0.0;  // regularizer term
  double l1_coeff = 0.0;
  double grad_norm = 0.0;
  std::vector<double> mean_nnz;
  std::vector<std::uint32_t> max_nnz;
  std::vector<double> dead_frac;
  std::uint32_t retries = 0;
};

// Measured on a held-out batch after the last step.
struct FinalRecord {
  double loss = 0.0;
  std::vector<double> mean_nnz;
  std::vector<std::uint32_t> max_nnz;
  std::vector<double> dead_frac;
  std::uint64_t retries = 0;
  double wall_seconds = 0.0;
  std::size_t ell_width = 0;
  std::size_t dense_cap = 0;
  std::size_t transpose_ell_width = 0;
  std::size_t transpose_dense_cap = 0;
  std::size_t compress = 0;

  double mean_nnz_all() const;
  double dead_frac_all() const;
};

struct TrainReport {
  TrainConfig config;
  std::vector<StepRecord> steps;  // one per completed optimizer step
  FinalRecord final;
};

struct TrainResult {
  TrainReport report;
  std::vector<FfnWeights<float>> weights;
  // Per-row activity on the held-out batch, with bitmaps.
  std::vector<ActivationRecord> activations;
};

// Runs the residual stack z ← z + FFN_l(z) on the synthetic task with MSE
// loss plus the L1 term. Hybrid overflow doubles the offending dense_cap and
// an OverflowTile halves C; either way the step is recomputed from the
// unchanged parameters. Throws NonFinite on a non-finite loss and
// CapacityExceeded when a step exhausts max_retries.
TrainResult train_toy(const TrainConfig& cfg);

// JSON schema:
//   { "schema": "sparseffn.train_report/1",
//     "config": { <config key>: value, ... },
//     "steps": { "step": [...], "loss": [...], "l1_loss": [...], "l1_coeff": [...],
//                "grad_norm": [...], "retries": [...],
//                "mean_nnz_layer_<l>": [...], "max_nnz_layer_<l>": [...],
//                "dead_frac_layer_<l>": [...] },
//     "final": { "loss", "mean_nnz": [...], "max_nnz": [...], "dead_frac": [...],
//                "retries", "wall_seconds", "ell_width", "dense_cap",
//                "transpose_ell_width", "transpose_dense_cap", "compress" } }
std::string report_to_json(const TrainReport& report, int indent = -1);
TrainReport report_from_json(const std::string& text);

// step,loss,l1_coeff,mean_nnz_layer_i…,max_nnz_layer_i…,dead_frac_layer_i…,retries
void write_report_csv(std::ostream& os, const TrainReport& report);

}  // namespace sparseffn
