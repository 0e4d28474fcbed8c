#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace sparseffn {

// One activation-log row: tags plus the row's non-zero count in every layer.
// `activity`, when present, holds one bitmap of `hidden` bits per layer
// marking the neurons that fired for this row.
struct ActivationRecord {
  std::uint64_t seq = 0;
  std::uint32_t pos = 0;
  std::int32_t token = -1;  // -1 when untagged
  std::vector<std::uint32_t> counts;
  std::vector<std::vector<std::uint8_t>> activity;
};

struct LogHeader {
  std::uint32_t layers = 0;
  std::uint32_t hidden = 0;  // 0 when unknown (CSV logs)
  bool has_activity = false;
};

// Binary ALOG layout, little-endian:
//   "ALOG", u8 version=1, u32 layers, u32 hidden, u8 flags (bit 0: activity
//   bitmaps present), then records of u64 seq, u32 pos, i32 token,
//   u32 counts[layers] and, with bit 0 set, layers × ceil(hidden/8) bitmap
//   bytes (neuron n at bit n%8 of byte n/8).
//
// CSV logs have the header `seq,pos,token,nnz_layer_0,...,nnz_layer_{L-1}`;
// token may be empty.
class AlogWriter {
 public:
  AlogWriter(std::ostream& os, std::uint32_t layers, std::uint32_t hidden, bool with_activity);
  void write(const ActivationRecord& rec);

 private:
  std::ostream& os_;
  LogHeader header_;
};

void write_csv_log_header(std::ostream& os, std::uint32_t layers);
void write_csv_log_row(std::ostream& os, const ActivationRecord& rec);

// Streaming reader over either format. Records are validated as they are read:
// counts must not exceed the hidden size when it is known.
class LogReader {
 public:
  virtual ~LogReader() = default;
  virtual const LogHeader& header() const = 0;
  virtual bool next(ActivationRecord& rec) = 0;
};

// Picks the format from the first bytes of the file.
std::unique_ptr<LogReader> open_log(const std::string& path);
std::unique_ptr<LogReader> open_log(std::istream& is);

struct LayerStat {
  std::uint32_t layer = 0;
  double mean_nnz = 0.0;
  std::uint32_t max_nnz = 0;
  std::optional<double> dead_frac;  // needs activity bitmaps
};

struct PositionStat {
  std::uint32_t position = 0;
  double mean_nnz = 0.0;
  std::uint64_t rows = 0;
};

struct TokenStat {
  std::int32_t token = 0;
  double frequency = 0.0;
  double mean_nnz = 0.0;
};

struct TokenExtremes {
  std::vector<TokenStat> lowest;   // ascending mean_nnz
  std::vector<TokenStat> highest;  // descending mean_nnz
};

// Accumulators. Sums are kept as integers so means are exact up to the final
// division; shards merge by adding.
class LayerAccumulator {
 public:
  void add(const LogHeader& h, const ActivationRecord& rec);
  void merge(const LayerAccumulator& o);
  std::vector<LayerStat> result() const;

 private:
  std::uint64_t rows_ = 0;
  std::uint32_t hidden_ = 0;
  bool has_activity_ = false;
  std::vector<std::uint64_t> sum_;
  std::vector<std::uint32_t> max_;
  std::vector<std::vector<std::uint8_t>> ever_;
};

// With `layer` unset, a row's count is the mean over its layers.
class PositionAccumulator {
 public:
  explicit PositionAccumulator(std::optional<std::uint32_t> layer = std::nullopt) : layer_(layer) {}
  void add(const ActivationRecord& rec);
  void merge(const PositionAccumulator& o);
  std::vector<PositionStat> result() const;

 private:
  std::optional<std::uint32_t> layer_;
  std::uint32_t layers_ = 0;
  std::map<std::uint32_t, std::pair<std::uint64_t, std::uint64_t>> buckets_;  // sum, rows
};

class TokenAccumulator {
 public:
  explicit TokenAccumulator(std::optional<std::uint32_t> layer = std::nullopt) : layer_(layer) {}
  void add(const ActivationRecord& rec);
  void merge(const TokenAccumulator& o);
  TokenExtremes result(double min_freq, std::size_t k) const;

 private:
  std::optional<std::uint32_t> layer_;
  std::uint32_t layers_ = 0;
  std::uint64_t tagged_rows_ = 0;
  std::map<std::int32_t, std::pair<std::uint64_t, std::uint64_t>> buckets_;  // sum, rows
};

// Whole-log convenience wrappers. layer_stats throws on an empty log.
std::vector<LayerStat> layer_stats(LogReader& log);
std::vector<PositionStat> position_stats(LogReader& log, std::optional<std::uint32_t> layer = std::nullopt);
TokenExtremes token_extremes(LogReader& log, double min_freq, std::size_t k,
                             std::optional<std::uint32_t> layer = std::nullopt);

// Pearson correlation; throws on length mismatch, fewer than two points or
// zero variance.
double correlate(const std::vector<double>& x, const std::vector<double>& y);

// CSV emitters. Headers:
//   layer,mean_nnz,max_nnz,dead_frac     (dead_frac empty when unknown)
//   position,mean_nnz
//   kind,rank,token,frequency,mean_nnz
void write_layer_stats_csv(std::ostream& os, const std::vector<LayerStat>& stats);
void write_position_stats_csv(std::ostream& os, const std::vector<PositionStat>& stats);
void write_token_extremes_csv(std::ostream& os, const TokenExtremes& ex);

}  // namespace sparseffn
