// sparseffn command-line tool. Links the C API only.

#include <charconv>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "sparseffn.h"

namespace {

enum Exit { kOk = 0, kInternal = 1, kUsage = 2, kCapacity = 3, kNumeric = 4 };

int exit_code(sfn_status s) {
  switch (s) {
    case SFN_OK: return kOk;
    case SFN_OVERFLOW_TILE:
    case SFN_CAPACITY_EXCEEDED: return kCapacity;
    case SFN_NON_FINITE: return kNumeric;
    case SFN_INTERNAL: return kInternal;
    default: return kUsage;
  }
}

struct Failure {
  int code;
};

void check(sfn_status s, const std::string& context) {
  if (s == SFN_OK) return;
  std::cerr << "sparseffn: " << context << ": " << sfn_last_error() << "\n";
  throw Failure{exit_code(s)};
}

[[noreturn]] void usage(const std::string& msg) {
  std::cerr << "sparseffn: " << msg << "\n";
  throw Failure{kUsage};
}

template <class T, void (*Del)(T*)>
struct Deleter {
  void operator()(T* p) const { Del(p); }
};
using TrainConfigPtr = std::unique_ptr<sfn_train_config, Deleter<sfn_train_config, sfn_train_config_destroy>>;
using TrainResultPtr = std::unique_ptr<sfn_train_result, Deleter<sfn_train_result, sfn_train_result_destroy>>;
using BenchPtr = std::unique_ptr<sfn_bench_results, Deleter<sfn_bench_results, sfn_bench_results_destroy>>;

std::string take(char* s) {
  std::string out = s ? s : "";
  sfn_string_free(s);
  return out;
}

const char* kind_name(sfn_kind k) {
  switch (k) {
    case SFN_KIND_DENSE: return "dense";
    case SFN_KIND_TWELL: return "twell";
    case SFN_KIND_HYBRID: return "hybrid";
  }
  return "?";
}

const char* dtype_name(sfn_dtype d) {
  switch (d) {
    case SFN_DTYPE_F32: return "f32";
    case SFN_DTYPE_F64: return "f64";
    case SFN_DTYPE_BF16: return "bf16";
    default: return "keep";
  }
}

struct Globals {
  std::optional<std::size_t> threads;
  std::optional<std::uint64_t> seed;
  bool json = false;
};

// convert ------------------------------------------------------------------

struct ConvertArgs {
  std::string in, out, to = "dense", dtype = "keep";
  std::size_t tile = 0, compress = 1, ell_width = 128, dense_cap = 0;
};

int run_convert(const ConvertArgs& a, const Globals& g) {
  sfn_convert_options o;
  sfn_convert_options_default(&o);
  static const std::map<std::string, sfn_kind> kinds{
      {"dense", SFN_KIND_DENSE}, {"twell", SFN_KIND_TWELL}, {"hybrid", SFN_KIND_HYBRID}};
  static const std::map<std::string, sfn_dtype> dtypes{
      {"keep", SFN_DTYPE_KEEP}, {"f32", SFN_DTYPE_F32}, {"f64", SFN_DTYPE_F64}, {"bf16", SFN_DTYPE_BF16}};
  o.target = kinds.at(a.to);
  o.dtype = dtypes.at(a.dtype);
  o.tile = a.tile;
  o.compress = a.compress;
  o.ell_width = a.ell_width;
  o.dense_cap = a.dense_cap;
  check(sfn_file_convert(a.in.c_str(), a.out.c_str(), &o), "convert " + a.in);
  if (g.json) {
    std::cout << nlohmann::json{{"input", a.in}, {"output", a.out}, {"format", a.to}}.dump() << "\n";
  } else {
    std::cout << "wrote " << a.out << " (" << a.to << ")\n";
  }
  return kOk;
}

// validate -----------------------------------------------------------------

int run_validate(const std::string& path, const Globals& g) {
  sfn_file_info info{};
  check(sfn_file_validate(path.c_str(), &info), "validate " + path);
  nlohmann::json j{{"path", path},
                   {"kind", kind_name(info.kind)},
                   {"dtype", dtype_name(info.dtype)},
                   {"rows", info.rows},
                   {"cols", info.cols},
                   {"nnz", info.nnz}};
  if (info.kind == SFN_KIND_TWELL) {
    j["tile"] = info.tile;
    j["compress"] = info.compress;
  }
  if (info.kind == SFN_KIND_HYBRID) {
    j["ell_width"] = info.ell_width;
    j["dense_cap"] = info.dense_cap;
    j["dense_rows"] = info.dense_rows;
    j["overflow"] = info.overflow != 0;
  }
  if (g.json) {
    std::cout << j.dump() << "\n";
    return kOk;
  }
  std::cout << path << ": valid " << kind_name(info.kind) << " " << info.rows << "x" << info.cols << " "
            << dtype_name(info.dtype) << ", nnz " << info.nnz;
  if (info.kind == SFN_KIND_TWELL) std::cout << ", T=" << info.tile << " C=" << info.compress;
  if (info.kind == SFN_KIND_HYBRID) {
    std::cout << ", ell_width " << info.ell_width << ", dense rows " << info.dense_rows << "/" << info.dense_cap;
    if (info.overflow) std::cout << " (overflowed)";
  }
  std::cout << "\n";
  return kOk;
}

// bench --------------------------------------------------------------------

struct BenchArgs {
  std::size_t m = 0, k = 0, n = 0, tile = 0, compress = 0, ell_width = 0, reps = 0;
  std::vector<double> sparsity{0.99};
  std::string variant = "gated";
  bool no_check = false;
};

int run_bench(const BenchArgs& a, const Globals& g) {
  sfn_bench_config c;
  sfn_bench_config_default(&c);
  if (a.m) c.m = a.m;
  if (a.k) c.k = a.k;
  if (a.n) c.n = a.n;
  if (a.tile) c.tile = a.tile;
  c.compress = a.compress;
  if (a.ell_width) c.ell_width = a.ell_width;
  if (a.reps) c.reps = a.reps;
  if (g.seed) c.seed = *g.seed;
  c.variant = a.variant == "gated" ? SFN_GATED : SFN_NON_GATED;
  c.check = a.no_check ? 0 : 1;

  sfn_bench_results* raw = nullptr;
  check(sfn_bench_run(&c, a.sparsity.data(), a.sparsity.size(), &raw), "bench");
  BenchPtr results(raw);

  int code = kOk;
  if (!g.json) {
    std::printf("%-8s %-9s %4s %10s %10s %9s %9s %9s %8s %10s\n", "target", "realized", "C", "nnz", "mac_ratio",
                "theory", "dense_s", "sparse_s", "speedup", "max_err");
  }
  for (std::size_t i = 0; i < sfn_bench_results_count(results.get()); ++i) {
    char* s = nullptr;
    check(sfn_bench_result_json(results.get(), i, -1, &s), "bench");
    const std::string text = take(s);
    const auto j = nlohmann::json::parse(text);
    if (g.json) {
      std::cout << text << "\n";
    } else {
      std::printf("%-8.4f %-9.5f %4llu %10llu %10.5f %9.5f %9.4f %9.4f %8.3f %10.2e\n",
                  j.at("target_sparsity").get<double>(), j.at("realized_sparsity").get<double>(),
                  j.at("compress").get<unsigned long long>(), j.at("nnz").get<unsigned long long>(),
                  j.at("mac_ratio").get<double>(), j.at("theoretical_ratio").get<double>(),
                  j.at("dense_median").get<double>(), j.at("sparse_median").get<double>(),
                  j.at("speedup").get<double>(), j.at("max_rel_err").get<double>());
    }
    if (!j.at("check_passed").get<bool>()) {
      std::cerr << "sparseffn: bench: sparse output differs from the dense reference at sparsity "
                << j.at("target_sparsity").get<double>() << " (max relative error "
                << j.at("max_rel_err").get<double>() << ")\n";
      code = kNumeric;
    }
  }
  return code;
}

// train-toy ----------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::vector<std::string> set;
  std::vector<double> l1;
  std::string out = "train";
  std::string log_format = "alog";
  bool no_log = false;
};

// Shortest text that reads back as the same double.
std::string coefficient_tag(double c) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, c);
  return std::string(buf, res.ptr);
}

int run_train(const TrainArgs& a, const Globals& g) {
  sfn_train_config* raw = nullptr;
  if (!a.config.empty()) {
    check(sfn_train_config_load(a.config.c_str(), &raw), "config " + a.config);
  } else {
    check(sfn_train_config_create(&raw), "config");
  }
  TrainConfigPtr base(raw);
  for (const auto& kv : a.set) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) usage("--set expects key=value, got '" + kv + "'");
    check(sfn_train_config_set(base.get(), kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str()), "--set");
  }
  if (g.seed) check(sfn_train_config_set(base.get(), "seed", std::to_string(*g.seed).c_str()), "--seed");
  check(sfn_train_config_check(base.get()), "config");

  struct Run {
    std::optional<double> l1;
    std::string prefix;
  };
  std::vector<Run> runs;
  if (a.l1.empty()) {
    runs.push_back({std::nullopt, a.out});
  } else {
    for (double c : a.l1) runs.push_back({c, a.out + "_l1_" + coefficient_tag(c)});
  }

  for (const auto& run : runs) {
    sfn_train_config* cfg_raw = nullptr;
    check(sfn_train_config_clone(base.get(), &cfg_raw), "config");
    TrainConfigPtr cfg(cfg_raw);
    if (run.l1) {
      check(sfn_train_config_set(cfg.get(), "l1_coefficient", coefficient_tag(*run.l1).c_str()), "--l1");
    }
    sfn_train_result* res_raw = nullptr;
    check(sfn_train_run(cfg.get(), &res_raw), "train-toy");
    TrainResultPtr res(res_raw);

    char* s = nullptr;
    check(sfn_train_result_json(res.get(), 2, &s), "train-toy");
    const std::string json_path = run.prefix + ".json";
    {
      std::ofstream os(json_path);
      os << take(s) << "\n";
      if (!os) usage("cannot write " + json_path);
    }
    const std::string csv_path = run.prefix + ".csv";
    check(sfn_train_result_write_csv(res.get(), csv_path.c_str()), "train-toy");
    std::string log_path;
    if (!a.no_log) {
      const bool binary = a.log_format == "alog";
      log_path = run.prefix + (binary ? ".alog" : ".log.csv");
      check(sfn_train_result_write_log(res.get(), log_path.c_str(), binary ? 1 : 0), "train-toy");
    }

    nlohmann::json summary{{"report", json_path},
                           {"csv", csv_path},
                           {"final_loss", sfn_train_result_final_loss(res.get())},
                           {"final_mean_nnz", sfn_train_result_final_mean_nnz(res.get())},
                           {"final_dead_frac", sfn_train_result_final_dead_frac(res.get())},
                           {"retries", sfn_train_result_retries(res.get())}};
    if (run.l1) summary["l1_coefficient"] = *run.l1;
    if (!log_path.empty()) summary["activation_log"] = log_path;
    if (g.json) {
      std::cout << summary.dump() << "\n";
    } else {
      std::cout << run.prefix << ": loss " << sfn_train_result_final_loss(res.get()) << ", mean nnz "
                << sfn_train_result_final_mean_nnz(res.get()) << ", dead "
                << sfn_train_result_final_dead_frac(res.get()) << ", retries "
                << sfn_train_result_retries(res.get()) << "\n";
    }
  }
  return kOk;
}

// stats --------------------------------------------------------------------

struct StatsArgs {
  std::string stat, input, out = "-", x_col, y_col;
  int layer = -1;
  double min_freq = 1.0 / 16384.0;
  std::size_t k = 10;
};

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

int run_correlate(const StatsArgs& a, const Globals& g) {
  if (a.x_col.empty() || a.y_col.empty()) usage("stats correlate needs --x and --y column names");
  std::ifstream in(a.input);
  if (!in) usage("cannot open " + a.input);
  std::string line;
  if (!std::getline(in, line)) usage(a.input + ": empty table");
  const auto header = split_csv(line);
  auto column = [&](const std::string& name) {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return i;
    }
    usage(a.input + ": no column '" + name + "'");
  };
  const std::size_t xi = column(a.x_col), yi = column(a.y_col);
  std::vector<double> xs, ys;
  for (std::size_t row = 2; std::getline(in, line); ++row) {
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    try {
      if (xi >= cells.size() || yi >= cells.size()) throw std::invalid_argument("short row");
      xs.push_back(std::stod(cells[xi]));
      ys.push_back(std::stod(cells[yi]));
    } catch (const std::exception&) {
      usage(a.input + ": line " + std::to_string(row) + " is not numeric in the chosen columns");
    }
  }
  double r = 0.0;
  check(sfn_correlate(xs.data(), ys.data(), xs.size(), &r), "correlate");
  if (g.json) {
    std::cout << nlohmann::json{{"x", a.x_col}, {"y", a.y_col}, {"n", xs.size()}, {"pearson", r}}.dump() << "\n";
  } else {
    std::cout << "pearson," << r << "\n";
  }
  return kOk;
}

int run_stats(const StatsArgs& a, const Globals& g) {
  if (a.stat == "correlate") return run_correlate(a, g);
  static const std::map<std::string, sfn_statistic> stats{
      {"layer", SFN_STAT_LAYER}, {"position", SFN_STAT_POSITION}, {"tokens", SFN_STAT_TOKENS}};
  sfn_stats_options o;
  sfn_stats_options_default(&o);
  o.layer = a.layer;
  o.min_freq = a.min_freq;
  o.k = a.k;
  check(sfn_stats_file(a.input.c_str(), stats.at(a.stat), &o, a.out.c_str()), "stats " + a.input);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse feed-forward kernels: format conversion, benchmarks, toy training, statistics"};
  app.set_version_flag("--version", std::string(sfn_version()));
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  std::size_t threads = 0;
  std::uint64_t seed = 0;
  auto* threads_opt =
      app.add_option("--threads", threads, "Worker cap (default: SPARSEFFN_THREADS, else all cores)")
          ->check(CLI::PositiveNumber);
  auto* seed_opt = app.add_option("--seed", seed, "Seed for generated data");
  app.add_flag("--json", g.json, "Machine-readable output");

  ConvertArgs ca;
  auto* convert = app.add_subcommand("convert", "Convert between DNSE, TWLL and HYBR files");
  convert->add_option("input", ca.in, "Source file")->required();
  convert->add_option("output", ca.out, "Destination file")->required();
  convert->add_option("--to", ca.to, "Target format")->check(CLI::IsMember({"dense", "twell", "hybrid"}))->required();
  convert->add_option("--dtype", ca.dtype, "Payload type")->check(CLI::IsMember({"keep", "f32", "f64", "bf16"}));
  convert->add_option("--tile", ca.tile, "TwELL tile width T (0: largest power of two up to 256 dividing N)");
  convert->add_option("--compress", ca.compress, "TwELL compression C");
  convert->add_option("--ell-width", ca.ell_width, "Hybrid ELL width");
  convert->add_option("--dense-cap", ca.dense_cap, "Hybrid dense-tail capacity (0: all rows)");

  std::string validate_path;
  auto* validate = app.add_subcommand("validate", "Check a stored matrix against its format rules");
  validate->add_option("input", validate_path, "File to check")->required();

  BenchArgs ba;
  auto* bench = app.add_subcommand("bench", "Time the sparse pipeline against the dense block");
  bench->add_option("--m", ba.m, "Rows of x (default 512)");
  bench->add_option("--k", ba.k, "Model width (default 512)");
  bench->add_option("--n", ba.n, "Hidden width (default 1408)");
  bench->add_option("--sparsity", ba.sparsity, "Target gate sparsity; several values run interleaved")
      ->delimiter(',')
      ->check(CLI::Range(0.0, 1.0));
  bench->add_option("--variant", ba.variant, "gated or non-gated")->check(CLI::IsMember({"gated", "non-gated"}));
  bench->add_option("--tile", ba.tile, "TwELL tile width (default 256)");
  bench->add_option("--compress", ba.compress, "TwELL compression (0: pick from the sparsity)");
  bench->add_option("--ell-width", ba.ell_width, "Hybrid width used for reporting (default 128)");
  bench->add_option("--reps", ba.reps, "Timed repetitions (default 3)");
  bench->add_flag("--no-check", ba.no_check, "Skip the dense-versus-sparse output check");

  TrainArgs ta;
  auto* train = app.add_subcommand("train-toy", "Train the toy sparse model and write reports");
  train->add_option("--config", ta.config, "key=value config file");
  train->add_option("--set", ta.set, "Override one key, as key=value (repeatable)");
  train->add_option("--l1", ta.l1, "L1 coefficients to sweep, one run each")->delimiter(',');
  train->add_option("--out", ta.out, "Output prefix for .json, .csv and the activation log");
  train->add_option("--log-format", ta.log_format, "Activation log format")->check(CLI::IsMember({"alog", "csv"}));
  train->add_flag("--no-log", ta.no_log, "Skip the activation log");

  StatsArgs sa;
  auto* stats = app.add_subcommand("stats", "Statistics over an activation log");
  stats->add_option("statistic", sa.stat, "layer, position, tokens or correlate")
      ->check(CLI::IsMember({"layer", "position", "tokens", "correlate"}))
      ->required();
  stats->add_option("input", sa.input, "Activation log (ALOG or CSV); for correlate, a CSV table")->required();
  stats->add_option("--out", sa.out, "Output CSV path ('-' for stdout)");
  stats->add_option("--layer", sa.layer, "Restrict position and token statistics to one layer");
  stats->add_option("--min-freq", sa.min_freq, "Token frequency floor");
  stats->add_option("--k", sa.k, "Tokens per extreme");
  stats->add_option("--x", sa.x_col, "correlate: first column");
  stats->add_option("--y", sa.y_col, "correlate: second column");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  if (*threads_opt) g.threads = threads;
  if (*seed_opt) g.seed = seed;
  if (g.threads) sfn_set_threads(*g.threads);

  try {
    if (*convert) return run_convert(ca, g);
    if (*validate) return run_validate(validate_path, g);
    if (*bench) return run_bench(ba, g);
    if (*train) return run_train(ta, g);
    if (*stats) return run_stats(sa, g);
  } catch (const Failure& f) {
    return f.code;
  } catch (const std::exception& e) {
    std::cerr << "sparseffn: " << e.what() << "\n";
    return kInternal;
  }
  return kUsage;
}
