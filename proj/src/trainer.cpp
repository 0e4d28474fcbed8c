#include "sparseffn/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include "json.hpp"
#include "sparseffn/infer.hpp"

namespace sparseffn {

namespace {

// Stream ids for SeededRng::derive.
constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kTaskStream = 2;
constexpr std::uint64_t kReinitStream = 3;
constexpr std::uint64_t kEvalStream = 4;
constexpr std::uint64_t kBatchStreamBase = 1u << 20;

[[noreturn]] void bad_field(const std::string& key, const std::string& why) {
  throw Error(ErrorCode::InvalidArgument, "config key '" + key + "': " + why);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t parse_count(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_field(key, "expected a non-negative integer, got '" + v + "'");
  return static_cast<std::size_t>(out);
}

double parse_real(const std::string& key, const std::string& v) {
  // from_chars for double is not available on every toolchain; strtod with a
  // full-consumption check is equivalent here.
  if (v.empty()) bad_field(key, "expected a number");
  char* end = nullptr;
  const double out = std::strtod(v.c_str(), &end);
  if (end != v.c_str() + v.size() || !std::isfinite(out)) bad_field(key, "expected a number, got '" + v + "'");
  return out;
}

std::string format_real(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

struct Field {
  std::function<void(TrainConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const TrainConfig&)> get;
};

template <class M>
Field count_field(M TrainConfig::*m) {
  return {[m](TrainConfig& c, const std::string& k, const std::string& v) { c.*m = static_cast<M>(parse_count(k, v)); },
          [m](const TrainConfig& c) { return std::to_string(c.*m); }};
}

Field real_field(double TrainConfig::*m) {
  return {[m](TrainConfig& c, const std::string& k, const std::string& v) { c.*m = parse_real(k, v); },
          [m](const TrainConfig& c) { return format_real(c.*m); }};
}

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = {
      {"layers", count_field(&TrainConfig::layers)},
      {"batch", count_field(&TrainConfig::batch)},
      {"model_dim", count_field(&TrainConfig::model_dim)},
      {"hidden", count_field(&TrainConfig::hidden)},
      {"steps", count_field(&TrainConfig::steps)},
      {"variant",
       {[](TrainConfig& c, const std::string& k, const std::string& v) {
          if (v == "gated") {
            c.variant = Variant::gated;
          } else if (v == "non_gated") {
            c.variant = Variant::non_gated;
          } else {
            bad_field(k, "expected gated or non_gated, got '" + v + "'");
          }
        },
        [](const TrainConfig& c) { return std::string(c.variant == Variant::gated ? "gated" : "non_gated"); }}},
      {"lr", real_field(&TrainConfig::lr)},
      {"beta1", real_field(&TrainConfig::beta1)},
      {"beta2", real_field(&TrainConfig::beta2)},
      {"eps", real_field(&TrainConfig::eps)},
      {"weight_decay", real_field(&TrainConfig::weight_decay)},
      {"max_grad_norm", real_field(&TrainConfig::max_grad_norm)},
      {"l1_coefficient", real_field(&TrainConfig::l1_coefficient)},
      {"warmup_plain_steps", count_field(&TrainConfig::warmup_plain_steps)},
      {"warmup_ramp_steps", count_field(&TrainConfig::warmup_ramp_steps)},
      {"reinit_lambda", real_field(&TrainConfig::reinit_lambda)},
      {"init_sigma", real_field(&TrainConfig::init_sigma)},
      {"ell_width", count_field(&TrainConfig::ell_width)},
      {"dense_cap", count_field(&TrainConfig::dense_cap)},
      {"transpose_ell_width", count_field(&TrainConfig::transpose_ell_width)},
      {"transpose_dense_cap", count_field(&TrainConfig::transpose_dense_cap)},
      {"tile", count_field(&TrainConfig::tile)},
      {"compress", count_field(&TrainConfig::compress)},
      {"max_retries", count_field(&TrainConfig::max_retries)},
      {"vocab", count_field(&TrainConfig::vocab)},
      {"seq_len", count_field(&TrainConfig::seq_len)},
      {"teacher_hidden", count_field(&TrainConfig::teacher_hidden)},
      {"teacher_density", real_field(&TrainConfig::teacher_density)},
      {"zipf_exponent", real_field(&TrainConfig::zipf_exponent)},
      {"input_mean", real_field(&TrainConfig::input_mean)},
      {"seed", count_field(&TrainConfig::seed)},
  };
  return table;
}

double sum_squares(const Matrix<float>& m) {
  double s = 0.0;
  for (float v : m.values()) s += static_cast<double>(v) * v;
  return s;
}

void add_into(Matrix<float>& a, const Matrix<float>& b) {
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) av[i] += bv[i];
}

// Mean squared error and its gradient with respect to `pred`.
double mse(const Matrix<float>& pred, const Matrix<float>& target, Matrix<float>* grad) {
  const auto p = pred.values();
  const auto t = target.values();
  double total = 0.0;
  const double scale = 2.0 / static_cast<double>(p.size());
  if (grad) *grad = Matrix<float>(pred.rows(), pred.cols());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double d = static_cast<double>(p[i]) - t[i];
    total += d * d;
    if (grad) grad->values()[i] = static_cast<float>(scale * d);
  }
  return total / static_cast<double>(p.size());
}

Matrix<float>& gate_weights(FfnWeights<float>& w) { return w.variant == Variant::gated ? w.W_g : w.W_u; }

struct Capacities {
  HybridCaps forward;
  HybridCaps transpose;
  TwellConfig tile;
};

// Outcome of one attempt at a forward pass over the stack.
struct StackForward {
  Matrix<float> out;
  std::vector<FfnCache<float>> caches;
};

enum class Attempt { ok, forward_overflow, transpose_overflow };

Attempt forward_stack(const std::vector<FfnWeights<float>>& weights, const Matrix<float>& x, const Capacities& caps,
                      StackForward& result) {
  result.caches.clear();
  result.out = x;
  for (const auto& w : weights) {
    auto f = ffn_forward_train(result.out, w, caps.tile, caps.forward);
    if (f.cache.overflow()) return Attempt::forward_overflow;
    add_into(result.out, f.y);
    result.caches.push_back(std::move(f.cache));
  }
  return Attempt::ok;
}

// Repeats `fn` while it reports an overflow, growing the offending capacity
// between attempts. Returns the number of repeats.
std::uint32_t with_retries(const TrainConfig& cfg, Capacities& caps, std::size_t step,
                           const std::function<Attempt()>& fn) {
  std::uint32_t retries = 0;
  while (true) {
    Attempt a;
    try {
      a = fn();
    } catch (const Error& e) {
      if (e.code() != ErrorCode::OverflowTile || caps.tile.compress <= 1) throw;
      caps.tile.compress /= 2;
      if (++retries > cfg.max_retries) break;
      continue;
    }
    if (a == Attempt::ok) return retries;
    if (++retries > cfg.max_retries) break;
    auto& cap = a == Attempt::forward_overflow ? caps.forward.dense_cap : caps.transpose.dense_cap;
    const std::size_t limit = a == Attempt::forward_overflow ? cfg.batch : cfg.hidden;
    cap = std::min(std::max<std::size_t>(cap * 2, 1), limit);
  }
  throw Error(ErrorCode::CapacityExceeded,
              "step " + std::to_string(step) + " still overflows after " + std::to_string(cfg.max_retries) + " retries");
}

ActivationRecord activity_record(const Batch& b, std::size_t r, const std::vector<FfnCache<float>>& caches,
                                 std::size_t hidden) {
  ActivationRecord rec;
  rec.seq = b.sequences[r];
  rec.pos = b.positions[r];
  rec.token = b.tokens[r];
  for (const auto& c : caches) {
    const auto& p = *c.h.pattern;
    rec.counts.push_back(p.row_nnz[r]);
    std::vector<std::uint8_t> bits((hidden + 7) / 8, 0);
    if (p.is_dense(r)) {
      const auto slot = p.tail_map[r];
      for (std::size_t n = 0; n < hidden; ++n) {
        if (p.tail_support[static_cast<std::size_t>(slot) * hidden + n]) bits[n / 8] |= std::uint8_t(1u << (n % 8));
      }
    } else {
      for (std::size_t j = 0; j < p.row_nnz[r]; ++j) {
        const auto n = p.ell_cols[r * p.ell_width + j];
        bits[n / 8] |= std::uint8_t(1u << (n % 8));
      }
    }
    rec.activity.push_back(std::move(bits));
  }
  return rec;
}

template <class V>
nlohmann::json column(const std::vector<StepRecord>& steps, V&& get) {
  auto arr = nlohmann::json::array();
  for (const auto& s : steps) arr.push_back(get(s));
  return arr;
}

}  // namespace

void TrainConfig::check() const {
  auto need = [](bool ok, const char* key, const std::string& why) {
    if (!ok) bad_field(key, why);
  };
  need(layers >= 1, "layers", "must be at least 1");
  need(batch >= 1, "batch", "must be at least 1");
  need(model_dim >= 1, "model_dim", "must be at least 1");
  need(hidden >= 1, "hidden", "must be at least 1");
  need(steps >= 1, "steps", "must be at least 1");
  need(lr > 0, "lr", "must be positive");
  need(beta1 >= 0 && beta1 < 1, "beta1", "must lie in [0, 1)");
  need(beta2 >= 0 && beta2 < 1, "beta2", "must lie in [0, 1)");
  need(eps > 0, "eps", "must be positive");
  need(weight_decay >= 0, "weight_decay", "must be non-negative");
  need(max_grad_norm >= 0, "max_grad_norm", "must be non-negative");
  need(l1_coefficient >= 0, "l1_coefficient", "must be non-negative");
  need(reinit_lambda >= 0 && reinit_lambda <= 1, "reinit_lambda", "must lie in [0, 1]");
  need(init_sigma >= 0, "init_sigma", "must be non-negative");
  need(ell_width >= 1, "ell_width", "must be at least 1");
  need(dense_cap >= 1, "dense_cap", "must be at least 1");
  need(transpose_ell_width >= 1, "transpose_ell_width", "must be at least 1");
  need(transpose_dense_cap >= 1, "transpose_dense_cap", "must be at least 1");
  need(tile >= 1 && hidden % tile == 0, "tile", "must divide hidden");
  need(compress >= 1 && tile % compress == 0, "compress", "must divide tile");
  need(max_retries >= 1, "max_retries", "must be at least 1");
  need(vocab >= 1, "vocab", "must be at least 1");
  need(vocab <= static_cast<std::size_t>(INT32_MAX), "vocab", "too large");
  need(seq_len >= 1, "seq_len", "must be at least 1");
  need(teacher_hidden >= 1, "teacher_hidden", "must be at least 1");
  need(teacher_density > 0 && teacher_density <= 1, "teacher_density", "must lie in (0, 1]");
  need(zipf_exponent >= 0, "zipf_exponent", "must be non-negative");
}

void set_config_value(TrainConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& [name, field] : fields()) {
    if (name == key) {
      field.set(cfg, key, trim(value));
      return;
    }
  }
  bad_field(key, "unknown key");
}

TrainConfig parse_train_config(std::istream& is) {
  TrainConfig cfg;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::InvalidArgument,
                  "config line " + std::to_string(line_no) + ": expected key=value, got '" + t + "'");
    }
    set_config_value(cfg, trim(t.substr(0, eq)), t.substr(eq + 1));
  }
  cfg.check();
  return cfg;
}

TrainConfig load_train_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorCode::Io, "cannot open " + path);
  return parse_train_config(f);
}

std::vector<std::pair<std::string, std::string>> config_entries(const TrainConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& [name, field] : fields()) out.emplace_back(name, field.get(cfg));
  return out;
}

double l1_schedule(std::size_t step, const TrainConfig& cfg) {
  if (step < cfg.warmup_plain_steps) return 0.0;
  const std::size_t into = step - cfg.warmup_plain_steps;
  if (into >= cfg.warmup_ramp_steps) return cfg.l1_coefficient;
  return cfg.l1_coefficient * static_cast<double>(into) / static_cast<double>(cfg.warmup_ramp_steps);
}

double l1_loss(const std::vector<double>& per_layer_l1_means, std::size_t hidden, std::size_t layers, double coeff) {
  if (per_layer_l1_means.size() != layers) {
    throw Error(ErrorCode::DimensionMismatch, "l1_loss: expected one mean per layer");
  }
  if (coeff == 0.0) return 0.0;
  double total = 0.0;
  for (double v : per_layer_l1_means) total += v / static_cast<double>(hidden);
  return coeff * total / static_cast<double>(layers);
}

template <class T>
double adamw_step(const std::vector<Matrix<T>*>& params, const std::vector<const Matrix<T>*>& grads,
                  OptimizerState<T>& state, const AdamWConfig& cfg) {
  if (params.size() != grads.size()) throw Error(ErrorCode::DimensionMismatch, "adamw: parameter/gradient count");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i]->same_shape(*grads[i])) {
      throw_dims("adamw_step", params[i]->rows(), params[i]->cols(), grads[i]->rows(), grads[i]->cols());
    }
  }
  if (state.m.empty()) {
    for (const auto* p : params) {
      state.m.emplace_back(p->rows(), p->cols());
      state.v.emplace_back(p->rows(), p->cols());
    }
  }
  if (state.m.size() != params.size()) throw Error(ErrorCode::DimensionMismatch, "adamw: state does not match params");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!state.m[i].same_shape(*params[i])) throw Error(ErrorCode::DimensionMismatch, "adamw: moment shape");
  }

  double sq = 0.0;
  for (const auto* g : grads) {
    for (T v : g->values()) sq += static_cast<double>(v) * static_cast<double>(v);
  }
  const double norm = std::sqrt(sq);
  const double clip = cfg.max_grad_norm > 0 && norm > cfg.max_grad_norm ? cfg.max_grad_norm / norm : 1.0;

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  const double decay = 1.0 - cfg.lr * cfg.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i]->values();
    auto g = grads[i]->values();
    auto m = state.m[i].values();
    auto v = state.v[i].values();
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = static_cast<double>(g[j]) * clip;
      const double mj = cfg.beta1 * static_cast<double>(m[j]) + (1.0 - cfg.beta1) * gj;
      const double vj = cfg.beta2 * static_cast<double>(v[j]) + (1.0 - cfg.beta2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double step = cfg.lr * (mj / bc1) / (std::sqrt(vj / bc2) + cfg.eps);
      p[j] = static_cast<T>(static_cast<double>(p[j]) * decay - step);
    }
  }
  return norm;
}

std::vector<std::uint8_t> neuron_activity(const HybridPattern& p) {
  std::vector<std::uint8_t> active(p.cols, 0);
  for (std::size_t r = 0; r < p.rows; ++r) {
    if (p.is_dense(r)) continue;
    for (std::size_t j = 0; j < p.row_nnz[r]; ++j) active[p.ell_cols[r * p.ell_width + j]] = 1;
  }
  for (std::size_t s = 0; s < p.tail_count(); ++s) {
    for (std::size_t n = 0; n < p.cols; ++n) active[n] |= p.tail_support[s * p.cols + n];
  }
  return active;
}

std::vector<double> track_dead_neurons(const std::vector<std::vector<std::uint8_t>>& activity) {
  std::vector<double> out;
  out.reserve(activity.size());
  for (const auto& layer : activity) {
    if (layer.empty()) {
      out.push_back(0.0);
      continue;
    }
    const auto dead = std::count(layer.begin(), layer.end(), std::uint8_t{0});
    out.push_back(static_cast<double>(dead) / static_cast<double>(layer.size()));
  }
  return out;
}

template <class T>
std::size_t reinit_dead_columns(Matrix<T>& W, const std::vector<std::uint8_t>& dead_mask, double lambda, double sigma,
                                SeededRng& rng) {
  if (dead_mask.size() != W.cols()) {
    throw Error(ErrorCode::DimensionMismatch, "reinit: mask length " + std::to_string(dead_mask.size()) +
                                                  " does not match " + std::to_string(W.cols()) + " columns");
  }
  if (lambda < 0 || lambda > 1) throw Error(ErrorCode::InvalidArgument, "reinit: lambda must lie in [0, 1]");
  if (lambda == 0.0) return 0;
  std::size_t touched = 0;
  for (std::size_t j = 0; j < W.cols(); ++j) {
    if (!dead_mask[j]) continue;
    ++touched;
    for (std::size_t i = 0; i < W.rows(); ++i) {
      const double noise = sigma * rng.normal();
      W(i, j) = static_cast<T>((1.0 - lambda) * static_cast<double>(W(i, j)) + lambda * noise);
    }
  }
  return touched;
}

ToyTask make_task(const TrainConfig& cfg) {
  cfg.check();
  auto rng = SeededRng::derive(cfg.seed, kTaskStream);
  const std::size_t k = cfg.model_dim;
  ToyTask task;

  // Shared offset on every token embedding: a common direction that a
  // neuron can anti-align with and go silent on the whole batch.
  const auto mean = randn<float>(1, k, cfg.input_mean, rng);
  task.embed = randn<float>(cfg.vocab, k, 1.0, rng);
  for (std::size_t t = 0; t < cfg.vocab; ++t) {
    for (std::size_t c = 0; c < k; ++c) task.embed(t, c) += mean(0, c);
  }
  task.pos = randn<float>(cfg.seq_len, k, 0.5, rng);

  double z = 0.0;
  task.zipf_cdf.resize(cfg.vocab);
  for (std::size_t t = 0; t < cfg.vocab; ++t) {
    z += std::pow(static_cast<double>(t + 1), -cfg.zipf_exponent);
    task.zipf_cdf[t] = z;
  }
  for (auto& c : task.zipf_cdf) c /= z;

  auto& tw = task.teacher;
  tw.variant = Variant::gated;
  const double in_sd = 1.0 / std::sqrt(static_cast<double>(k) * cfg.teacher_density);
  auto sparse = [&](std::size_t r, std::size_t c, double sd) {
    Matrix<float> m(r, c);
    for (auto& v : m.values()) {
      const bool keep = rng.uniform() < cfg.teacher_density;
      const double draw = rng.normal();
      v = keep ? static_cast<float>(sd * draw) : 0.0f;
    }
    return m;
  };
  tw.W_g = sparse(k, cfg.teacher_hidden, in_sd);
  tw.W_u = sparse(k, cfg.teacher_hidden, in_sd);
  tw.W_d = sparse(cfg.teacher_hidden, k, 1.0);

  // Scale the teacher so its output has unit RMS on a calibration batch.
  auto cal_rng = SeededRng::derive(cfg.seed, kTaskStream + 100);
  TrainConfig cal_cfg = cfg;
  cal_cfg.batch = std::max<std::size_t>(cfg.batch, 512);
  Matrix<float> x(cal_cfg.batch, k);
  for (std::size_t r = 0; r < cal_cfg.batch; ++r) {
    const auto tok = cal_rng.below(cfg.vocab);
    for (std::size_t c = 0; c < k; ++c) x(r, c) = task.embed(tok, c) + task.pos(r % cfg.seq_len, c);
  }
  const auto y = ffn_forward_dense(x, tw);
  const double rms = std::sqrt(sum_squares(y) / static_cast<double>(y.size()));
  if (rms > 0) {
    for (auto& v : tw.W_d.values()) v = static_cast<float>(v / rms);
  }
  return task;
}

SeededRng step_stream(const TrainConfig& cfg, std::size_t step) {
  return SeededRng::derive(cfg.seed, kBatchStreamBase + step);
}

Batch sample_batch(const ToyTask& task, const TrainConfig& cfg, SeededRng& rng, std::uint64_t first_sequence) {
  const std::size_t m = cfg.batch, k = cfg.model_dim;
  Batch b;
  b.x = Matrix<float>(m, k);
  b.tokens.resize(m);
  b.positions.resize(m);
  b.sequences.resize(m);
  for (std::size_t r = 0; r < m; ++r) {
    const double u = rng.uniform();
    const auto it = std::upper_bound(task.zipf_cdf.begin(), task.zipf_cdf.end(), u);
    const auto tok = std::min<std::size_t>(static_cast<std::size_t>(it - task.zipf_cdf.begin()), cfg.vocab - 1);
    const std::size_t pos = r % cfg.seq_len;
    b.tokens[r] = static_cast<std::int32_t>(tok);
    b.positions[r] = static_cast<std::uint32_t>(pos);
    b.sequences[r] = first_sequence + r / cfg.seq_len;
    for (std::size_t c = 0; c < k; ++c) b.x(r, c) = task.embed(tok, c) + task.pos(pos, c);
  }
  b.target = ffn_forward_dense(b.x, task.teacher);
  add_into(b.target, b.x);
  return b;
}

double FinalRecord::mean_nnz_all() const {
  if (mean_nnz.empty()) return 0.0;
  double s = 0.0;
  for (double v : mean_nnz) s += v;
  return s / static_cast<double>(mean_nnz.size());
}

double FinalRecord::dead_frac_all() const {
  if (dead_frac.empty()) return 0.0;
  double s = 0.0;
  for (double v : dead_frac) s += v;
  return s / static_cast<double>(dead_frac.size());
}

TrainResult train_toy(const TrainConfig& cfg) {
  cfg.check();
  const auto start = std::chrono::steady_clock::now();
  const std::size_t L = cfg.layers, M = cfg.batch, N = cfg.hidden;

  TrainResult result;
  result.report.config = cfg;
  auto& weights = result.weights;
  {
    auto rng = SeededRng::derive(cfg.seed, kInitStream);
    for (std::size_t l = 0; l < L; ++l) {
      weights.push_back(init_weights<float>(cfg.variant, cfg.model_dim, N, cfg.init_sigma, rng));
    }
  }
  std::vector<Matrix<float>*> params;
  for (auto& w : weights) {
    if (w.variant == Variant::gated) params.push_back(&w.W_g);
    params.push_back(&w.W_u);
    params.push_back(&w.W_d);
  }

  const auto task = make_task(cfg);
  auto reinit_rng = SeededRng::derive(cfg.seed, kReinitStream);
  const AdamWConfig opt{cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay, cfg.max_grad_norm};
  OptimizerState<float> state;

  Capacities caps;
  caps.forward = {cfg.ell_width, cfg.dense_cap};
  caps.transpose = {cfg.transpose_ell_width, cfg.transpose_dense_cap};
  caps.tile.tile = cfg.tile;
  caps.tile.compress = cfg.compress;

  const std::uint64_t seqs_per_batch = (M + cfg.seq_len - 1) / cfg.seq_len;
  std::uint64_t total_retries = 0;
  StackForward fwd;
  std::vector<FfnGrads<float>> grads(L);

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    auto batch_rng = step_stream(cfg, step);
    const auto batch = sample_batch(task, cfg, batch_rng, step * seqs_per_batch);
    const double coeff = l1_schedule(step, cfg);
    const auto effective = static_cast<float>(coeff / (static_cast<double>(L) * M * N));

    double task_loss = 0.0, reg = 0.0;
    // Every attempt starts from the same parameters: nothing below writes to
    // `weights` until the attempt succeeds.
    const auto retries = with_retries(cfg, caps, step, [&] {
      const auto a = forward_stack(weights, batch.x, caps, fwd);
      if (a != Attempt::ok) return a;
      Matrix<float> dz;
      task_loss = mse(fwd.out, batch.target, &dz);
      std::vector<double> l1_means;
      for (const auto& c : fwd.caches) l1_means.push_back(c.stats.l1_mean);
      reg = l1_loss(l1_means, N, L, coeff);
      if (!std::isfinite(task_loss + reg)) {
        throw Error(ErrorCode::NonFinite,
                    "non-finite loss at step " + std::to_string(step) +
                        (step == 0 ? std::string(" (no completed step)")
                                   : " (last good step " + std::to_string(step - 1) + ")"));
      }
      for (std::size_t l = L; l-- > 0;) {
        grads[l] = ffn_backward(fwd.caches[l], dz, weights[l], effective, caps.transpose);
        if (grads[l].overflow) return Attempt::transpose_overflow;
        add_into(dz, grads[l].dx);
      }
      return Attempt::ok;
    });
    total_retries += retries;

    std::vector<const Matrix<float>*> grad_ptrs;
    for (const auto& g : grads) {
      if (cfg.variant == Variant::gated) grad_ptrs.push_back(&g.dW_g);
      grad_ptrs.push_back(&g.dW_u);
      grad_ptrs.push_back(&g.dW_d);
    }
    StepRecord rec;
    rec.step = step;
    rec.loss = task_loss;
    rec.l1_loss = reg;
    rec.l1_coeff = coeff;
    rec.retries = retries;
    rec.grad_norm = adamw_step(params, grad_ptrs, state, opt);

    std::vector<std::vector<std::uint8_t>> activity;
    for (const auto& c : fwd.caches) {
      rec.mean_nnz.push_back(c.stats.l0_mean);
      rec.max_nnz.push_back(c.stats.max_nnz);
      activity.push_back(neuron_activity(*c.h.pattern));
    }
    rec.dead_frac = track_dead_neurons(activity);
    if (cfg.reinit_lambda > 0) {
      for (std::size_t l = 0; l < L; ++l) {
        std::vector<std::uint8_t> dead(N);
        for (std::size_t n = 0; n < N; ++n) dead[n] = activity[l][n] ? 0 : 1;
        reinit_dead_columns(gate_weights(weights[l]), dead, cfg.reinit_lambda, cfg.init_sigma, reinit_rng);
      }
    }
    result.report.steps.push_back(std::move(rec));
  }

  for (const auto* p : params) {
    if (!all_finite(*p)) throw Error(ErrorCode::NonFinite, "parameters became non-finite during training");
  }

  auto eval_rng = SeededRng::derive(cfg.seed, kEvalStream);
  const auto eval = sample_batch(task, cfg, eval_rng, std::uint64_t{1} << 40);
  total_retries += with_retries(cfg, caps, cfg.steps, [&] { return forward_stack(weights, eval.x, caps, fwd); });

  auto& fin = result.report.final;
  fin.loss = mse(fwd.out, eval.target, nullptr);
  std::vector<std::vector<std::uint8_t>> activity;
  for (const auto& c : fwd.caches) {
    fin.mean_nnz.push_back(c.stats.l0_mean);
    fin.max_nnz.push_back(c.stats.max_nnz);
    activity.push_back(neuron_activity(*c.h.pattern));
  }
  fin.dead_frac = track_dead_neurons(activity);
  for (std::size_t r = 0; r < M; ++r) result.activations.push_back(activity_record(eval, r, fwd.caches, N));
  fin.retries = total_retries;
  fin.ell_width = caps.forward.ell_width;
  fin.dense_cap = caps.forward.dense_cap;
  fin.transpose_ell_width = caps.transpose.ell_width;
  fin.transpose_dense_cap = caps.transpose.dense_cap;
  fin.compress = caps.tile.compress;
  fin.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

std::string report_to_json(const TrainReport& report, int indent) {
  using nlohmann::json;
  json j;
  j["schema"] = "sparseffn.train_report/1";
  json cfg = json::object();
  for (const auto& [k, v] : config_entries(report.config)) {
    if (k == "variant") {
      cfg[k] = v;
    } else if (v.find_first_of(".eE") != std::string::npos || v.find("inf") != std::string::npos) {
      cfg[k] = std::stod(v);
    } else {
      cfg[k] = std::stoull(v);
    }
  }
  j["config"] = cfg;

  const auto& s = report.steps;
  json steps;
  steps["step"] = column(s, [](const StepRecord& r) { return r.step; });
  steps["loss"] = column(s, [](const StepRecord& r) { return r.loss; });
  steps["l1_loss"] = column(s, [](const StepRecord& r) { return r.l1_loss; });
  steps["l1_coeff"] = column(s, [](const StepRecord& r) { return r.l1_coeff; });
  steps["grad_norm"] = column(s, [](const StepRecord& r) { return r.grad_norm; });
  steps["retries"] = column(s, [](const StepRecord& r) { return r.retries; });
  for (std::size_t l = 0; l < report.config.layers; ++l) {
    const auto tag = std::to_string(l);
    steps["mean_nnz_layer_" + tag] = column(s, [l](const StepRecord& r) { return r.mean_nnz.at(l); });
    steps["max_nnz_layer_" + tag] = column(s, [l](const StepRecord& r) { return r.max_nnz.at(l); });
    steps["dead_frac_layer_" + tag] = column(s, [l](const StepRecord& r) { return r.dead_frac.at(l); });
  }
  j["steps"] = steps;

  const auto& f = report.final;
  j["final"] = {{"loss", f.loss},
                {"mean_nnz", f.mean_nnz},
                {"max_nnz", f.max_nnz},
                {"dead_frac", f.dead_frac},
                {"retries", f.retries},
                {"wall_seconds", f.wall_seconds},
                {"ell_width", f.ell_width},
                {"dense_cap", f.dense_cap},
                {"transpose_ell_width", f.transpose_ell_width},
                {"transpose_dense_cap", f.transpose_dense_cap},
                {"compress", f.compress}};
  return j.dump(indent);
}

TrainReport report_from_json(const std::string& text) {
  using nlohmann::json;
  TrainReport r;
  try {
    const auto j = json::parse(text);
    if (j.at("schema") != "sparseffn.train_report/1") throw Error(ErrorCode::Format, "unknown report schema");
    for (const auto& [k, v] : j.at("config").items()) {
      set_config_value(r.config, k, v.is_string() ? v.get<std::string>() : v.dump());
    }
    const auto& s = j.at("steps");
    const std::size_t n = s.at("step").size();
    r.steps.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      auto& rec = r.steps[i];
      rec.step = s.at("step").at(i).get<std::uint64_t>();
      rec.loss = s.at("loss").at(i).get<double>();
      rec.l1_loss = s.at("l1_loss").at(i).get<double>();
      rec.l1_coeff = s.at("l1_coeff").at(i).get<double>();
      rec.grad_norm = s.at("grad_norm").at(i).get<double>();
      rec.retries = s.at("retries").at(i).get<std::uint32_t>();
      for (std::size_t l = 0; l < r.config.layers; ++l) {
        const auto tag = std::to_string(l);
        rec.mean_nnz.push_back(s.at("mean_nnz_layer_" + tag).at(i).get<double>());
        rec.max_nnz.push_back(s.at("max_nnz_layer_" + tag).at(i).get<std::uint32_t>());
        rec.dead_frac.push_back(s.at("dead_frac_layer_" + tag).at(i).get<double>());
      }
    }
    const auto& f = j.at("final");
    r.final.loss = f.at("loss").get<double>();
    r.final.mean_nnz = f.at("mean_nnz").get<std::vector<double>>();
    r.final.max_nnz = f.at("max_nnz").get<std::vector<std::uint32_t>>();
    r.final.dead_frac = f.at("dead_frac").get<std::vector<double>>();
    r.final.retries = f.at("retries").get<std::uint64_t>();
    r.final.wall_seconds = f.at("wall_seconds").get<double>();
    r.final.ell_width = f.at("ell_width").get<std::size_t>();
    r.final.dense_cap = f.at("dense_cap").get<std::size_t>();
    r.final.transpose_ell_width = f.at("transpose_ell_width").get<std::size_t>();
    r.final.transpose_dense_cap = f.at("transpose_dense_cap").get<std::size_t>();
    r.final.compress = f.at("compress").get<std::size_t>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Format, std::string("bad train report: ") + e.what());
  }
  return r;
}

void write_report_csv(std::ostream& os, const TrainReport& report) {
  const std::size_t L = report.config.layers;
  os << "step,loss,l1_coeff";
  for (const char* name : {"mean_nnz_layer_", "max_nnz_layer_", "dead_frac_layer_"}) {
    for (std::size_t l = 0; l < L; ++l) os << ',' << name << l;
  }
  os << ",retries\n";
  for (const auto& r : report.steps) {
    os << r.step << ',' << format_real(r.loss) << ',' << format_real(r.l1_coeff);
    for (double v : r.mean_nnz) os << ',' << format_real(v);
    for (auto v : r.max_nnz) os << ',' << v;
    for (double v : r.dead_frac) os << ',' << format_real(v);
    os << ',' << r.retries << '\n';
  }
}

template double adamw_step<float>(const std::vector<Matrix<float>*>&, const std::vector<const Matrix<float>*>&,
                                  OptimizerState<float>&, const AdamWConfig&);
template double adamw_step<double>(const std::vector<Matrix<double>*>&, const std::vector<const Matrix<double>*>&,
                                   OptimizerState<double>&, const AdamWConfig&);
template std::size_t reinit_dead_columns<float>(Matrix<float>&, const std::vector<std::uint8_t>&, double, double,
                                                SeededRng&);
template std::size_t reinit_dead_columns<double>(Matrix<double>&, const std::vector<std::uint8_t>&, double, double,
                                                 SeededRng&);

}  // namespace sparseffn
