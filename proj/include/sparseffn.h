#ifndef SPARSEFFN_H
#define SPARSEFFN_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#  define SFN_API __declspec(dllexport)
#else
#  define SFN_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Every call returns a status; on failure the message of the most recent
 * failing call on this thread is available from sfn_last_error(). */
typedef enum sfn_status {
  SFN_OK = 0,
  SFN_INVALID_ARGUMENT = 1,
  SFN_DIMENSION_MISMATCH = 2,
  SFN_OVERFLOW_TILE = 3,
  SFN_INDEX_WIDTH_EXCEEDED = 4,
  SFN_VALIDATION = 5,
  SFN_PATTERN_MISMATCH = 6,
  SFN_CAPACITY_EXCEEDED = 7,
  SFN_IO = 8,
  SFN_FORMAT = 9,
  SFN_NON_FINITE = 10,
  SFN_INTERNAL = 99
} sfn_status;

typedef enum sfn_kind { SFN_KIND_DENSE = 0, SFN_KIND_TWELL = 1, SFN_KIND_HYBRID = 2 } sfn_kind;

/* 0 keeps the source dtype where that applies. */
typedef enum sfn_dtype { SFN_DTYPE_KEEP = 0, SFN_DTYPE_F32 = 1, SFN_DTYPE_F64 = 2, SFN_DTYPE_BF16 = 3 } sfn_dtype;

typedef enum sfn_variant { SFN_GATED = 0, SFN_NON_GATED = 1 } sfn_variant;

typedef struct sfn_matrix sfn_matrix;
typedef struct sfn_twell sfn_twell;
typedef struct sfn_hybrid sfn_hybrid;
typedef struct sfn_weights sfn_weights;
typedef struct sfn_train_config sfn_train_config;
typedef struct sfn_train_result sfn_train_result;
typedef struct sfn_bench_results sfn_bench_results;

SFN_API const char* sfn_version(void);
SFN_API const char* sfn_last_error(void);
SFN_API const char* sfn_status_name(sfn_status status);

/* Strings returned through char** out-parameters are owned by the caller. */
SFN_API void sfn_string_free(char* s);

/* 0 restores the default (SPARSEFFN_THREADS, else hardware concurrency). */
SFN_API void sfn_set_threads(size_t n);
SFN_API size_t sfn_threads(void);

/* Dense float32 matrices, row-major. data may be NULL for zeros. */
SFN_API sfn_status sfn_matrix_create(size_t rows, size_t cols, const float* data, sfn_matrix** out);
SFN_API void sfn_matrix_destroy(sfn_matrix* m);
SFN_API size_t sfn_matrix_rows(const sfn_matrix* m);
SFN_API size_t sfn_matrix_cols(const sfn_matrix* m);
SFN_API float* sfn_matrix_data(sfn_matrix* m);
SFN_API sfn_status sfn_matrix_load(const char* path, sfn_matrix** out);
SFN_API sfn_status sfn_matrix_save(const sfn_matrix* m, const char* path, sfn_dtype dtype);

/* TwELL: keeps strictly positive entries. */
SFN_API sfn_status sfn_twell_from_dense(const sfn_matrix* m, size_t tile, size_t compress, sfn_twell** out);
SFN_API void sfn_twell_destroy(sfn_twell* t);
SFN_API sfn_status sfn_twell_to_dense(const sfn_twell* t, sfn_matrix** out);
SFN_API uint64_t sfn_twell_nnz(const sfn_twell* t);
SFN_API sfn_status sfn_twell_load(const char* path, sfn_twell** out);
SFN_API sfn_status sfn_twell_save(const sfn_twell* t, const char* path, sfn_dtype dtype);

/* Hybrid ELL plus dense tail. *overflow is set when rows were dropped. */
SFN_API sfn_status sfn_hybrid_from_twell(const sfn_twell* t, size_t ell_width, size_t dense_cap, sfn_hybrid** out,
                                         int* overflow);
SFN_API sfn_status sfn_hybrid_from_dense(const sfn_matrix* m, size_t ell_width, size_t dense_cap, sfn_hybrid** out,
                                         int* overflow);
SFN_API void sfn_hybrid_destroy(sfn_hybrid* h);
SFN_API sfn_status sfn_hybrid_to_dense(const sfn_hybrid* h, sfn_matrix** out);
SFN_API uint64_t sfn_hybrid_nnz(const sfn_hybrid* h);
SFN_API size_t sfn_hybrid_dense_rows(const sfn_hybrid* h);
SFN_API sfn_status sfn_hybrid_load(const char* path, sfn_hybrid** out);
SFN_API sfn_status sfn_hybrid_save(const sfn_hybrid* h, const char* path, sfn_dtype dtype);

typedef struct sfn_file_info {
  sfn_kind kind;
  sfn_dtype dtype;
  size_t rows;
  size_t cols;
  uint64_t nnz;
  size_t tile;       /* TwELL only */
  size_t compress;   /* TwELL only */
  size_t ell_width;  /* hybrid only */
  size_t dense_cap;  /* hybrid only */
  size_t dense_rows; /* hybrid only */
  int overflow;      /* hybrid only */
} sfn_file_info;

/* Reads a file fully and checks its structural rules. A broken rule gives
 * SFN_VALIDATION with the rule named in sfn_last_error(). */
SFN_API sfn_status sfn_file_validate(const char* path, sfn_file_info* info);

typedef struct sfn_convert_options {
  sfn_kind target;
  sfn_dtype dtype;
  size_t tile;
  size_t compress;
  size_t ell_width;
  size_t dense_cap;
} sfn_convert_options;

SFN_API void sfn_convert_options_default(sfn_convert_options* opts);

/* Converts among DNSE, TWLL and HYBR files. A tile over its slot budget gives
 * SFN_OVERFLOW_TILE; a hybrid target whose dense tail is too small gives
 * SFN_CAPACITY_EXCEEDED and writes nothing. */
SFN_API sfn_status sfn_file_convert(const char* in_path, const char* out_path, const sfn_convert_options* opts);

/* Feed-forward block weights: W_g, W_u are K×N, W_d is N×K. w_g is ignored
 * for the non-gated variant. The matrices are copied. */
SFN_API sfn_status sfn_weights_create(sfn_variant variant, const sfn_matrix* w_g, const sfn_matrix* w_u,
                                      const sfn_matrix* w_d, sfn_weights** out);
SFN_API sfn_status sfn_weights_init(sfn_variant variant, size_t k, size_t n, double sigma, uint64_t seed,
                                    sfn_weights** out);
SFN_API void sfn_weights_destroy(sfn_weights* w);

SFN_API sfn_status sfn_ffn_forward_infer(const sfn_matrix* x, const sfn_weights* w, size_t tile, size_t compress,
                                         sfn_matrix** out);
SFN_API sfn_status sfn_ffn_forward_dense(const sfn_matrix* x, const sfn_weights* w, sfn_matrix** out);

typedef struct sfn_bench_config {
  size_t m, k, n;
  sfn_variant variant;
  size_t tile;
  size_t compress; /* 0 picks automatically */
  size_t ell_width;
  size_t reps;
  uint64_t seed;
  int check;
} sfn_bench_config;

SFN_API void sfn_bench_config_default(sfn_bench_config* cfg);

/* One result per sparsity; repetitions visit every sparsity in turn. */
SFN_API sfn_status sfn_bench_run(const sfn_bench_config* cfg, const double* sparsities, size_t count,
                                 sfn_bench_results** out);
SFN_API void sfn_bench_results_destroy(sfn_bench_results* r);
SFN_API size_t sfn_bench_results_count(const sfn_bench_results* r);
/* indent < 0 gives one line. */
SFN_API sfn_status sfn_bench_result_json(const sfn_bench_results* r, size_t i, int indent, char** json);

/* Training configuration; keys match the key=value config file. */
SFN_API sfn_status sfn_train_config_create(sfn_train_config** out);
SFN_API sfn_status sfn_train_config_load(const char* path, sfn_train_config** out);
SFN_API sfn_status sfn_train_config_clone(const sfn_train_config* cfg, sfn_train_config** out);
SFN_API void sfn_train_config_destroy(sfn_train_config* cfg);
SFN_API sfn_status sfn_train_config_set(sfn_train_config* cfg, const char* key, const char* value);
/* Validates the configuration, naming the first bad key. */
SFN_API sfn_status sfn_train_config_check(const sfn_train_config* cfg);
/* key=value text of every setting. */
SFN_API sfn_status sfn_train_config_text(const sfn_train_config* cfg, char** text);

SFN_API sfn_status sfn_train_run(const sfn_train_config* cfg, sfn_train_result** out);
SFN_API void sfn_train_result_destroy(sfn_train_result* r);
SFN_API sfn_status sfn_train_result_json(const sfn_train_result* r, int indent, char** json);
SFN_API sfn_status sfn_train_result_write_csv(const sfn_train_result* r, const char* path);
/* Held-out activation log; binary selects ALOG over CSV. */
SFN_API sfn_status sfn_train_result_write_log(const sfn_train_result* r, const char* path, int binary);
SFN_API double sfn_train_result_final_loss(const sfn_train_result* r);
SFN_API double sfn_train_result_final_mean_nnz(const sfn_train_result* r);
SFN_API double sfn_train_result_final_dead_frac(const sfn_train_result* r);
SFN_API uint64_t sfn_train_result_retries(const sfn_train_result* r);

typedef enum sfn_statistic { SFN_STAT_LAYER = 0, SFN_STAT_POSITION = 1, SFN_STAT_TOKENS = 2 } sfn_statistic;

typedef struct sfn_stats_options {
  int layer; /* position and token statistics: -1 averages over layers */
  double min_freq;
  size_t k;
} sfn_stats_options;

SFN_API void sfn_stats_options_default(sfn_stats_options* opts);

/* Streams an ALOG or CSV activation log and writes one statistic as CSV. */
SFN_API sfn_status sfn_stats_file(const char* log_path, sfn_statistic stat, const sfn_stats_options* opts,
                                  const char* out_path);
SFN_API sfn_status sfn_correlate(const double* x, const double* y, size_t n, double* out);

#ifdef __cplusplus
}
#endif

#endif
