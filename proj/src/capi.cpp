#include "sparseffn.h"

#include <cstdlib>
#include <cstring>
#include <fstream>
#include <iostream>
#include <new>
#include <sstream>
#include <string>

#include "sparseffn/bench.hpp"
#include "sparseffn/formats.hpp"
#include "sparseffn/infer.hpp"
#include "sparseffn/io.hpp"
#include "sparseffn/parallel.hpp"
#include "sparseffn/statkit.hpp"
#include "sparseffn/trainer.hpp"

using namespace sparseffn;

struct sfn_matrix {
  Matrix<float> m;
};
struct sfn_twell {
  TwellMatrix<float> t;
};
struct sfn_hybrid {
  HybridMatrix<float> h;
};
struct sfn_weights {
  FfnWeights<float> w;
};
struct sfn_train_config {
  TrainConfig cfg;
};
struct sfn_train_result {
  TrainResult r;
};
struct sfn_bench_results {
  std::vector<BenchResult> r;
};

namespace {

thread_local std::string g_last_error;

sfn_status to_status(ErrorCode c) {
  switch (c) {
    case ErrorCode::InvalidArgument: return SFN_INVALID_ARGUMENT;
    case ErrorCode::DimensionMismatch: return SFN_DIMENSION_MISMATCH;
    case ErrorCode::OverflowTile: return SFN_OVERFLOW_TILE;
    case ErrorCode::IndexWidthExceeded: return SFN_INDEX_WIDTH_EXCEEDED;
    case ErrorCode::Validation: return SFN_VALIDATION;
    case ErrorCode::PatternMismatch: return SFN_PATTERN_MISMATCH;
    case ErrorCode::CapacityExceeded: return SFN_CAPACITY_EXCEEDED;
    case ErrorCode::Io: return SFN_IO;
    case ErrorCode::Format: return SFN_FORMAT;
    case ErrorCode::NonFinite: return SFN_NON_FINITE;
  }
  return SFN_INTERNAL;
}

sfn_status fail(sfn_status s, const std::string& msg) {
  g_last_error = msg;
  return s;
}

template <class F>
sfn_status guard(F&& f) noexcept {
  try {
    f();
    g_last_error.clear();
    return SFN_OK;
  } catch (const Error& e) {
    return fail(to_status(e.code()), std::string(to_string(e.code())) + ": " + e.what());
  } catch (const std::bad_alloc&) {
    return fail(SFN_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(SFN_INTERNAL, e.what());
  } catch (...) {
    return fail(SFN_INTERNAL, "unknown failure");
  }
}

void need(const void* p, const char* what) {
  if (!p) throw Error(ErrorCode::InvalidArgument, std::string(what) + " is null");
}

Precision to_precision(sfn_dtype d, Precision keep) {
  switch (d) {
    case SFN_DTYPE_KEEP: return keep;
    case SFN_DTYPE_F32: return Precision::f32;
    case SFN_DTYPE_F64: return Precision::f64;
    case SFN_DTYPE_BF16: return Precision::bf16;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown dtype " + std::to_string(static_cast<int>(d)));
}

sfn_dtype from_precision(Precision p) {
  switch (p) {
    case Precision::f32: return SFN_DTYPE_F32;
    case Precision::f64: return SFN_DTYPE_F64;
    case Precision::bf16: return SFN_DTYPE_BF16;
  }
  return SFN_DTYPE_KEEP;
}

Variant to_variant(sfn_variant v) {
  if (v == SFN_GATED) return Variant::gated;
  if (v == SFN_NON_GATED) return Variant::non_gated;
  throw Error(ErrorCode::InvalidArgument, "unknown variant " + std::to_string(static_cast<int>(v)));
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

template <class M>
void check_valid(const M& m) {
  if (auto v = validate(m)) throw ValidationError(*v);
}

// Largest power of two up to 256 dividing cols, or cols itself.
std::size_t auto_tile(std::size_t cols) {
  for (std::size_t t = 256; t > 1; t /= 2) {
    if (cols % t == 0) return t;
  }
  return cols;
}

std::uint64_t count_nonzero(const Matrix<double>& m) {
  std::uint64_t n = 0;
  for (std::size_t i = 0; i < m.size(); ++i) n += m.data()[i] != 0.0;
  return n;
}

// Any stored file as a dense matrix, after checking its structure.
Matrix<double> load_any_dense(const std::string& path, FileKind kind, Precision* dtype) {
  switch (kind) {
    case FileKind::dense: return load_dense<double>(path, dtype);
    case FileKind::twell: {
      auto tw = load_twell<double>(path, dtype);
      check_valid(tw);
      return twell_to_dense(tw);
    }
    case FileKind::hybrid: {
      auto h = load_hybrid<double>(path, dtype);
      check_valid(h);
      if (h.overflow()) {
        throw Error(ErrorCode::CapacityExceeded, path + ": hybrid source overflowed its dense tail; dropped rows "
                                                        "cannot be recovered");
      }
      return hybrid_to_dense_matrix(h);
    }
  }
  throw Error(ErrorCode::Format, path + ": unknown file kind");
}

}  // namespace

extern "C" {

const char* sfn_version(void) { return SPARSEFFN_VERSION; }

const char* sfn_last_error(void) { return g_last_error.c_str(); }

const char* sfn_status_name(sfn_status status) {
  switch (status) {
    case SFN_OK: return "OK";
    case SFN_INVALID_ARGUMENT: return "InvalidArgument";
    case SFN_DIMENSION_MISMATCH: return "DimensionMismatch";
    case SFN_OVERFLOW_TILE: return "OverflowTile";
    case SFN_INDEX_WIDTH_EXCEEDED: return "IndexWidthExceeded";
    case SFN_VALIDATION: return "Validation";
    case SFN_PATTERN_MISMATCH: return "PatternMismatch";
    case SFN_CAPACITY_EXCEEDED: return "CapacityExceeded";
    case SFN_IO: return "Io";
    case SFN_FORMAT: return "Format";
    case SFN_NON_FINITE: return "NonFinite";
    case SFN_INTERNAL: return "Internal";
  }
  return "Unknown";
}

void sfn_string_free(char* s) { std::free(s); }

void sfn_set_threads(size_t n) { set_num_threads(n); }
size_t sfn_threads(void) { return num_threads(); }

sfn_status sfn_matrix_create(size_t rows, size_t cols, const float* data, sfn_matrix** out) {
  return guard([&] {
    need(out, "out");
    auto h = std::make_unique<sfn_matrix>();
    h->m = Matrix<float>(rows, cols);
    if (data) std::memcpy(h->m.data(), data, rows * cols * sizeof(float));
    *out = h.release();
  });
}

void sfn_matrix_destroy(sfn_matrix* m) { delete m; }
size_t sfn_matrix_rows(const sfn_matrix* m) { return m ? m->m.rows() : 0; }
size_t sfn_matrix_cols(const sfn_matrix* m) { return m ? m->m.cols() : 0; }
float* sfn_matrix_data(sfn_matrix* m) { return m ? m->m.data() : nullptr; }

sfn_status sfn_matrix_load(const char* path, sfn_matrix** out) {
  return guard([&] {
    need(path, "path");
    need(out, "out");
    auto h = std::make_unique<sfn_matrix>();
    h->m = load_dense<float>(path);
    *out = h.release();
  });
}

sfn_status sfn_matrix_save(const sfn_matrix* m, const char* path, sfn_dtype dtype) {
  return guard([&] {
    need(m, "matrix");
    need(path, "path");
    save_dense(path, m->m, to_precision(dtype, Precision::f32));
  });
}

sfn_status sfn_twell_from_dense(const sfn_matrix* m, size_t tile, size_t compress, sfn_twell** out) {
  return guard([&] {
    need(m, "matrix");
    need(out, "out");
    TwellConfig cfg;
    cfg.tile = tile;
    cfg.compress = compress;
    auto h = std::make_unique<sfn_twell>();
    h->t = dense_to_twell(m->m, cfg);
    *out = h.release();
  });
}

void sfn_twell_destroy(sfn_twell* t) { delete t; }

sfn_status sfn_twell_to_dense(const sfn_twell* t, sfn_matrix** out) {
  return guard([&] {
    need(t, "twell");
    need(out, "out");
    auto h = std::make_unique<sfn_matrix>();
    h->m = twell_to_dense(t->t);
    *out = h.release();
  });
}

uint64_t sfn_twell_nnz(const sfn_twell* t) { return t ? t->t.total_nnz() : 0; }

sfn_status sfn_twell_load(const char* path, sfn_twell** out) {
  return guard([&] {
    need(path, "path");
    need(out, "out");
    auto h = std::make_unique<sfn_twell>();
    h->t = load_twell<float>(path);
    check_valid(h->t);
    *out = h.release();
  });
}

sfn_status sfn_twell_save(const sfn_twell* t, const char* path, sfn_dtype dtype) {
  return guard([&] {
    need(t, "twell");
    need(path, "path");
    save_twell(path, t->t, to_precision(dtype, Precision::f32));
  });
}

sfn_status sfn_hybrid_from_twell(const sfn_twell* t, size_t ell_width, size_t dense_cap, sfn_hybrid** out,
                                 int* overflow) {
  return guard([&] {
    need(t, "twell");
    need(out, "out");
    auto h = std::make_unique<sfn_hybrid>();
    h->h = twell_to_hybrid(t->t, ell_width, dense_cap, false).hybrid;
    if (overflow) *overflow = h->h.overflow() ? 1 : 0;
    *out = h.release();
  });
}

sfn_status sfn_hybrid_from_dense(const sfn_matrix* m, size_t ell_width, size_t dense_cap, sfn_hybrid** out,
                                 int* overflow) {
  return guard([&] {
    need(m, "matrix");
    need(out, "out");
    auto h = std::make_unique<sfn_hybrid>();
    h->h = dense_to_hybrid(m->m, ell_width, dense_cap);
    if (overflow) *overflow = h->h.overflow() ? 1 : 0;
    *out = h.release();
  });
}

void sfn_hybrid_destroy(sfn_hybrid* h) { delete h; }

sfn_status sfn_hybrid_to_dense(const sfn_hybrid* h, sfn_matrix** out) {
  return guard([&] {
    need(h, "hybrid");
    need(out, "out");
    auto d = std::make_unique<sfn_matrix>();
    d->m = hybrid_to_dense_matrix(h->h);
    *out = d.release();
  });
}

uint64_t sfn_hybrid_nnz(const sfn_hybrid* h) { return h && h->h.pattern ? h->h.pattern->total_nnz() : 0; }
size_t sfn_hybrid_dense_rows(const sfn_hybrid* h) { return h && h->h.pattern ? h->h.pattern->dense_rows() : 0; }

sfn_status sfn_hybrid_load(const char* path, sfn_hybrid** out) {
  return guard([&] {
    need(path, "path");
    need(out, "out");
    auto h = std::make_unique<sfn_hybrid>();
    h->h = load_hybrid<float>(path);
    check_valid(h->h);
    *out = h.release();
  });
}

sfn_status sfn_hybrid_save(const sfn_hybrid* h, const char* path, sfn_dtype dtype) {
  return guard([&] {
    need(h, "hybrid");
    need(path, "path");
    save_hybrid(path, h->h, to_precision(dtype, Precision::f32));
  });
}

sfn_status sfn_file_validate(const char* path, sfn_file_info* info) {
  return guard([&] {
    need(path, "path");
    sfn_file_info out{};
    Precision dtype{};
    const FileHeader head = peek_header(path);
    switch (head.kind) {
      case FileKind::dense: {
        const auto m = load_dense<double>(path, &dtype);
        out.kind = SFN_KIND_DENSE;
        out.rows = m.rows();
        out.cols = m.cols();
        out.nnz = count_nonzero(m);
        break;
      }
      case FileKind::twell: {
        const auto tw = load_twell<double>(path, &dtype);
        check_valid(tw);
        out.kind = SFN_KIND_TWELL;
        out.rows = tw.rows;
        out.cols = tw.cols;
        out.nnz = tw.total_nnz();
        out.tile = tw.config.tile;
        out.compress = tw.config.compress;
        break;
      }
      case FileKind::hybrid: {
        const auto h = load_hybrid<double>(path, &dtype);
        check_valid(h);
        out.kind = SFN_KIND_HYBRID;
        out.rows = h.rows();
        out.cols = h.cols();
        out.nnz = h.pattern->total_nnz();
        out.ell_width = h.pattern->ell_width;
        out.dense_cap = h.pattern->dense_cap;
        out.dense_rows = h.pattern->dense_rows();
        out.overflow = h.overflow() ? 1 : 0;
        break;
      }
    }
    out.dtype = from_precision(dtype);
    if (info) *info = out;
  });
}

void sfn_convert_options_default(sfn_convert_options* opts) {
  if (!opts) return;
  opts->target = SFN_KIND_DENSE;
  opts->dtype = SFN_DTYPE_KEEP;
  opts->tile = 0;
  opts->compress = 1;
  opts->ell_width = 128;
  opts->dense_cap = 0;
}

sfn_status sfn_file_convert(const char* in_path, const char* out_path, const sfn_convert_options* opts) {
  return guard([&] {
    need(in_path, "input path");
    need(out_path, "output path");
    need(opts, "options");
    Precision src_dtype{};
    const FileHeader head = peek_header(in_path);
    const auto dense = load_any_dense(in_path, head.kind, &src_dtype);
    const Precision dtype = to_precision(opts->dtype, src_dtype);
    switch (opts->target) {
      case SFN_KIND_DENSE: save_dense(out_path, dense, dtype); break;
      case SFN_KIND_TWELL: {
        TwellConfig cfg;
        cfg.tile = opts->tile ? opts->tile : auto_tile(dense.cols());
        cfg.compress = opts->compress;
        save_twell(out_path, dense_to_twell(dense, cfg, PackPredicate::nonzero), dtype);
        break;
      }
      case SFN_KIND_HYBRID: {
        const std::size_t cap = opts->dense_cap ? opts->dense_cap : dense.rows();
        const auto h = dense_to_hybrid(dense, opts->ell_width, cap, PackPredicate::nonzero);
        if (h.overflow()) {
          throw Error(ErrorCode::CapacityExceeded, "rows over ell_width " + std::to_string(opts->ell_width) +
                                                       " exceed dense_cap " + std::to_string(cap));
        }
        save_hybrid(out_path, h, dtype);
        break;
      }
      default: throw Error(ErrorCode::InvalidArgument, "unknown target kind");
    }
  });
}

sfn_status sfn_weights_create(sfn_variant variant, const sfn_matrix* w_g, const sfn_matrix* w_u,
                              const sfn_matrix* w_d, sfn_weights** out) {
  return guard([&] {
    need(w_u, "W_u");
    need(w_d, "W_d");
    need(out, "out");
    auto h = std::make_unique<sfn_weights>();
    h->w.variant = to_variant(variant);
    if (h->w.variant == Variant::gated) {
      need(w_g, "W_g");
      h->w.W_g = w_g->m;
    }
    h->w.W_u = w_u->m;
    h->w.W_d = w_d->m;
    h->w.check();
    *out = h.release();
  });
}

sfn_status sfn_weights_init(sfn_variant variant, size_t k, size_t n, double sigma, uint64_t seed,
                            sfn_weights** out) {
  return guard([&] {
    need(out, "out");
    auto rng = SeededRng::derive(seed, 1);
    auto h = std::make_unique<sfn_weights>();
    h->w = init_weights<float>(to_variant(variant), k, n, sigma, rng);
    *out = h.release();
  });
}

void sfn_weights_destroy(sfn_weights* w) { delete w; }

sfn_status sfn_ffn_forward_infer(const sfn_matrix* x, const sfn_weights* w, size_t tile, size_t compress,
                                 sfn_matrix** out) {
  return guard([&] {
    need(x, "x");
    need(w, "weights");
    need(out, "out");
    TwellConfig cfg;
    cfg.tile = tile;
    cfg.compress = compress;
    auto h = std::make_unique<sfn_matrix>();
    h->m = ffn_forward_infer(x->m, w->w, cfg);
    *out = h.release();
  });
}

sfn_status sfn_ffn_forward_dense(const sfn_matrix* x, const sfn_weights* w, sfn_matrix** out) {
  return guard([&] {
    need(x, "x");
    need(w, "weights");
    need(out, "out");
    auto h = std::make_unique<sfn_matrix>();
    h->m = ffn_forward_dense(x->m, w->w);
    *out = h.release();
  });
}

void sfn_bench_config_default(sfn_bench_config* cfg) {
  if (!cfg) return;
  const BenchConfig d;
  cfg->m = d.m;
  cfg->k = d.k;
  cfg->n = d.n;
  cfg->variant = SFN_GATED;
  cfg->tile = d.tile;
  cfg->compress = d.compress;
  cfg->ell_width = d.ell_width;
  cfg->reps = d.reps;
  cfg->seed = d.seed;
  cfg->check = d.check ? 1 : 0;
}

sfn_status sfn_bench_run(const sfn_bench_config* cfg, const double* sparsities, size_t count,
                         sfn_bench_results** out) {
  return guard([&] {
    need(cfg, "config");
    need(sparsities, "sparsities");
    need(out, "out");
    BenchConfig c;
    c.m = cfg->m;
    c.k = cfg->k;
    c.n = cfg->n;
    c.variant = to_variant(cfg->variant);
    c.tile = cfg->tile;
    c.compress = cfg->compress;
    c.ell_width = cfg->ell_width;
    c.reps = cfg->reps;
    c.seed = cfg->seed;
    c.check = cfg->check != 0;
    auto h = std::make_unique<sfn_bench_results>();
    h->r = run_bench_sweep(c, std::vector<double>(sparsities, sparsities + count));
    *out = h.release();
  });
}

void sfn_bench_results_destroy(sfn_bench_results* r) { delete r; }
size_t sfn_bench_results_count(const sfn_bench_results* r) { return r ? r->r.size() : 0; }

sfn_status sfn_bench_result_json(const sfn_bench_results* r, size_t i, int indent, char** json) {
  return guard([&] {
    need(r, "results");
    need(json, "out");
    if (i >= r->r.size()) throw Error(ErrorCode::InvalidArgument, "bench result index out of range");
    *json = dup_string(bench_to_json(r->r[i], indent));
  });
}

sfn_status sfn_train_config_create(sfn_train_config** out) {
  return guard([&] {
    need(out, "out");
    *out = new sfn_train_config{};
  });
}

sfn_status sfn_train_config_load(const char* path, sfn_train_config** out) {
  return guard([&] {
    need(path, "path");
    need(out, "out");
    auto h = std::make_unique<sfn_train_config>();
    h->cfg = load_train_config(path);
    *out = h.release();
  });
}

sfn_status sfn_train_config_clone(const sfn_train_config* cfg, sfn_train_config** out) {
  return guard([&] {
    need(cfg, "config");
    need(out, "out");
    *out = new sfn_train_config{cfg->cfg};
  });
}

void sfn_train_config_destroy(sfn_train_config* cfg) { delete cfg; }

sfn_status sfn_train_config_set(sfn_train_config* cfg, const char* key, const char* value) {
  return guard([&] {
    need(cfg, "config");
    need(key, "key");
    need(value, "value");
    set_config_value(cfg->cfg, key, value);
  });
}

sfn_status sfn_train_config_check(const sfn_train_config* cfg) {
  return guard([&] {
    need(cfg, "config");
    cfg->cfg.check();
  });
}

sfn_status sfn_train_config_text(const sfn_train_config* cfg, char** text) {
  return guard([&] {
    need(cfg, "config");
    need(text, "out");
    std::string s;
    for (const auto& [k, v] : config_entries(cfg->cfg)) s += k + "=" + v + "\n";
    *text = dup_string(s);
  });
}

sfn_status sfn_train_run(const sfn_train_config* cfg, sfn_train_result** out) {
  return guard([&] {
    need(cfg, "config");
    need(out, "out");
    auto h = std::make_unique<sfn_train_result>();
    h->r = train_toy(cfg->cfg);
    *out = h.release();
  });
}

void sfn_train_result_destroy(sfn_train_result* r) { delete r; }

sfn_status sfn_train_result_json(const sfn_train_result* r, int indent, char** json) {
  return guard([&] {
    need(r, "result");
    need(json, "out");
    *json = dup_string(report_to_json(r->r.report, indent));
  });
}

sfn_status sfn_train_result_write_csv(const sfn_train_result* r, const char* path) {
  return guard([&] {
    need(r, "result");
    need(path, "path");
    std::ofstream os(path);
    if (!os) throw Error(ErrorCode::Io, std::string("cannot create ") + path);
    write_report_csv(os, r->r.report);
    if (!os) throw Error(ErrorCode::Io, std::string("write failed: ") + path);
  });
}

sfn_status sfn_train_result_write_log(const sfn_train_result* r, const char* path, int binary) {
  return guard([&] {
    need(r, "result");
    need(path, "path");
    std::ofstream os(path, binary ? std::ios::binary : std::ios::out);
    if (!os) throw Error(ErrorCode::Io, std::string("cannot create ") + path);
    const auto& cfg = r->r.report.config;
    const auto layers = static_cast<std::uint32_t>(cfg.layers);
    if (binary) {
      AlogWriter w(os, layers, static_cast<std::uint32_t>(cfg.hidden), true);
      for (const auto& rec : r->r.activations) w.write(rec);
    } else {
      write_csv_log_header(os, layers);
      for (const auto& rec : r->r.activations) write_csv_log_row(os, rec);
    }
    if (!os) throw Error(ErrorCode::Io, std::string("write failed: ") + path);
  });
}

double sfn_train_result_final_loss(const sfn_train_result* r) { return r ? r->r.report.final.loss : 0.0; }
double sfn_train_result_final_mean_nnz(const sfn_train_result* r) {
  return r ? r->r.report.final.mean_nnz_all() : 0.0;
}
double sfn_train_result_final_dead_frac(const sfn_train_result* r) {
  return r ? r->r.report.final.dead_frac_all() : 0.0;
}
uint64_t sfn_train_result_retries(const sfn_train_result* r) { return r ? r->r.report.final.retries : 0; }

void sfn_stats_options_default(sfn_stats_options* opts) {
  if (!opts) return;
  opts->layer = -1;
  opts->min_freq = 1.0 / 16384.0;
  opts->k = 10;
}

sfn_status sfn_stats_file(const char* log_path, sfn_statistic stat, const sfn_stats_options* opts,
                          const char* out_path) {
  return guard([&] {
    need(log_path, "log path");
    sfn_stats_options o;
    sfn_stats_options_default(&o);
    if (opts) o = *opts;
    std::optional<std::uint32_t> layer;
    if (o.layer >= 0) layer = static_cast<std::uint32_t>(o.layer);
    auto log = open_log(std::string(log_path));
    if (layer && *layer >= log->header().layers) {
      throw Error(ErrorCode::InvalidArgument, "layer " + std::to_string(*layer) + " out of range; log has " +
                                                  std::to_string(log->header().layers) + " layers");
    }
    std::ostringstream os;
    switch (stat) {
      case SFN_STAT_LAYER: write_layer_stats_csv(os, layer_stats(*log)); break;
      case SFN_STAT_POSITION: write_position_stats_csv(os, position_stats(*log, layer)); break;
      case SFN_STAT_TOKENS: write_token_extremes_csv(os, token_extremes(*log, o.min_freq, o.k, layer)); break;
      default: throw Error(ErrorCode::InvalidArgument, "unknown statistic");
    }
    if (!out_path || std::string(out_path) == "-") {
      std::cout << os.str() << std::flush;
      return;
    }
    std::ofstream f(out_path);
    if (!f) throw Error(ErrorCode::Io, std::string("cannot create ") + out_path);
    f << os.str();
    if (!f) throw Error(ErrorCode::Io, std::string("write failed: ") + out_path);
  });
}

sfn_status sfn_correlate(const double* x, const double* y, size_t n, double* out) {
  return guard([&] {
    need(x, "x");
    need(y, "y");
    need(out, "out");
    *out = correlate(std::vector<double>(x, x + n), std::vector<double>(y, y + n));
  });
}

}  // extern "C"
