#include "sparseffn/statkit.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "sparseffn/error.hpp"

namespace sparseffn {

namespace {

constexpr char kMagic[4] = {'A', 'L', 'O', 'G'};
constexpr std::uint8_t kVersion = 1;
constexpr std::uint32_t kMaxLayers = 1u << 16;
constexpr std::uint32_t kMaxHidden = 1u << 28;

void put_le(std::ostream& os, std::uint64_t v, int bytes) {
  char b[8];
  for (int i = 0; i < bytes; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(b, bytes);
}

bool get_le(std::istream& is, std::uint64_t& v, int bytes, bool at_record_start = false) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), bytes);
  const auto got = is.gcount();
  if (got == 0 && at_record_start) return false;
  if (got != bytes) throw Error(ErrorCode::Format, "truncated activation log");
  v = 0;
  for (int i = 0; i < bytes; ++i) v |= std::uint64_t{b[i]} << (8 * i);
  return true;
}

std::size_t bitmap_bytes(std::uint32_t hidden) { return (hidden + 7) / 8; }

void check_record(const LogHeader& h, const ActivationRecord& rec, std::uint64_t index) {
  if (rec.counts.size() != h.layers) {
    throw Error(ErrorCode::Format, "activation log row " + std::to_string(index) + " has " +
                                       std::to_string(rec.counts.size()) + " counts, expected " +
                                       std::to_string(h.layers));
  }
  if (h.hidden == 0) return;
  for (std::size_t l = 0; l < rec.counts.size(); ++l) {
    if (rec.counts[l] > h.hidden) {
      throw Error(ErrorCode::Validation, "activation log row " + std::to_string(index) + " layer " +
                                             std::to_string(l) + ": count " + std::to_string(rec.counts[l]) +
                                             " exceeds hidden size " + std::to_string(h.hidden));
    }
  }
}

class AlogReader final : public LogReader {
 public:
  AlogReader(std::unique_ptr<std::istream> owned, std::istream& is) : owned_(std::move(owned)), is_(is) {
    char magic[4];
    is_.read(magic, 4);
    if (is_.gcount() != 4 || !std::equal(magic, magic + 4, kMagic)) {
      throw Error(ErrorCode::Format, "not an ALOG file");
    }
    std::uint64_t v;
    get_le(is_, v, 1);
    if (v != kVersion) throw Error(ErrorCode::Format, "unsupported ALOG version " + std::to_string(v));
    get_le(is_, v, 4);
    header_.layers = static_cast<std::uint32_t>(v);
    get_le(is_, v, 4);
    header_.hidden = static_cast<std::uint32_t>(v);
    get_le(is_, v, 1);
    header_.has_activity = (v & 1u) != 0;
    if (header_.layers == 0 || header_.layers > kMaxLayers) throw Error(ErrorCode::Format, "bad ALOG layer count");
    if (header_.hidden > kMaxHidden) throw Error(ErrorCode::Format, "bad ALOG hidden size");
    if (header_.has_activity && header_.hidden == 0) {
      throw Error(ErrorCode::Format, "ALOG activity bitmaps need a hidden size");
    }
  }

  const LogHeader& header() const override { return header_; }

  bool next(ActivationRecord& rec) override {
    std::uint64_t v;
    if (!get_le(is_, v, 8, true)) return false;
    rec.seq = v;
    get_le(is_, v, 4);
    rec.pos = static_cast<std::uint32_t>(v);
    get_le(is_, v, 4);
    rec.token = static_cast<std::int32_t>(static_cast<std::uint32_t>(v));
    rec.counts.resize(header_.layers);
    for (auto& c : rec.counts) {
      get_le(is_, v, 4);
      c = static_cast<std::uint32_t>(v);
    }
    rec.activity.clear();
    if (header_.has_activity) {
      rec.activity.resize(header_.layers);
      for (auto& bits : rec.activity) {
        bits.resize(bitmap_bytes(header_.hidden));
        is_.read(reinterpret_cast<char*>(bits.data()), static_cast<std::streamsize>(bits.size()));
        if (static_cast<std::size_t>(is_.gcount()) != bits.size()) {
          throw Error(ErrorCode::Format, "truncated activation log");
        }
      }
    }
    check_record(header_, rec, index_++);
    return true;
  }

 private:
  std::unique_ptr<std::istream> owned_;
  std::istream& is_;
  LogHeader header_;
  std::uint64_t index_ = 0;
};

std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

template <class I>
I parse_int(std::string_view s, const char* what, std::uint64_t line) {
  I v{};
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw Error(ErrorCode::Format, "activation log line " + std::to_string(line) + ": bad " + what + " '" +
                                       std::string(s) + "'");
  }
  return v;
}

class CsvLogReader final : public LogReader {
 public:
  CsvLogReader(std::unique_ptr<std::istream> owned, std::istream& is) : owned_(std::move(owned)), is_(is) {
    std::string line;
    if (!std::getline(is_, line)) throw Error(ErrorCode::Format, "empty activation log");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto cols = split(line);
    if (cols.size() < 4 || cols[0] != "seq" || cols[1] != "pos" || cols[2] != "token") {
      throw Error(ErrorCode::Format, "activation log header must start with seq,pos,token");
    }
    for (std::size_t i = 3; i < cols.size(); ++i) {
      if (cols[i] != "nnz_layer_" + std::to_string(i - 3)) {
        throw Error(ErrorCode::Format, "unexpected activation log column '" + std::string(cols[i]) + "'");
      }
    }
    header_.layers = static_cast<std::uint32_t>(cols.size() - 3);
  }

  const LogHeader& header() const override { return header_; }

  bool next(ActivationRecord& rec) override {
    std::string line;
    while (std::getline(is_, line)) {
      ++line_no_;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      const auto cols = split(line);
      if (cols.size() != header_.layers + 3) {
        throw Error(ErrorCode::Format, "activation log line " + std::to_string(line_no_) + ": expected " +
                                           std::to_string(header_.layers + 3) + " fields");
      }
      rec.seq = parse_int<std::uint64_t>(cols[0], "seq", line_no_);
      if (cols[1].empty()) {
        throw Error(ErrorCode::Validation, "activation log line " + std::to_string(line_no_) + ": missing position");
      }
      rec.pos = parse_int<std::uint32_t>(cols[1], "pos", line_no_);
      rec.token = cols[2].empty() ? -1 : parse_int<std::int32_t>(cols[2], "token", line_no_);
      rec.counts.resize(header_.layers);
      for (std::uint32_t l = 0; l < header_.layers; ++l) {
        rec.counts[l] = parse_int<std::uint32_t>(cols[3 + l], "count", line_no_);
      }
      rec.activity.clear();
      check_record(header_, rec, line_no_);
      return true;
    }
    return false;
  }

 private:
  std::unique_ptr<std::istream> owned_;
  std::istream& is_;
  LogHeader header_;
  std::uint64_t line_no_ = 1;
};

std::unique_ptr<LogReader> open_stream(std::unique_ptr<std::istream> owned, std::istream& is) {
  char first = 0;
  is.get(first);
  if (!is) throw Error(ErrorCode::Format, "empty activation log");
  is.unget();
  if (first == 'A') return std::make_unique<AlogReader>(std::move(owned), is);
  return std::make_unique<CsvLogReader>(std::move(owned), is);
}

void row_value(const ActivationRecord& rec, std::optional<std::uint32_t> layer, std::uint64_t& sum,
               std::uint32_t& layers) {
  if (layer) {
    if (*layer >= rec.counts.size()) throw Error(ErrorCode::InvalidArgument, "layer out of range");
    sum = rec.counts[*layer];
    layers = 1;
  } else {
    sum = 0;
    for (auto c : rec.counts) sum += c;
    layers = static_cast<std::uint32_t>(rec.counts.size());
  }
}

void write_double(std::ostream& os, double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  os << s.str();
}

}  // namespace

AlogWriter::AlogWriter(std::ostream& os, std::uint32_t layers, std::uint32_t hidden, bool with_activity)
    : os_(os) {
  if (layers == 0) throw Error(ErrorCode::InvalidArgument, "activation log needs at least one layer");
  if (with_activity && hidden == 0) throw Error(ErrorCode::InvalidArgument, "activity bitmaps need a hidden size");
  header_ = LogHeader{layers, hidden, with_activity};
  os_.write(kMagic, 4);
  put_le(os_, kVersion, 1);
  put_le(os_, layers, 4);
  put_le(os_, hidden, 4);
  put_le(os_, with_activity ? 1 : 0, 1);
}

void AlogWriter::write(const ActivationRecord& rec) {
  check_record(header_, rec, 0);
  if (header_.has_activity) {
    if (rec.activity.size() != header_.layers) throw Error(ErrorCode::InvalidArgument, "missing activity bitmaps");
    for (const auto& bits : rec.activity) {
      if (bits.size() != bitmap_bytes(header_.hidden)) throw Error(ErrorCode::InvalidArgument, "bad bitmap size");
    }
  }
  put_le(os_, rec.seq, 8);
  put_le(os_, rec.pos, 4);
  put_le(os_, static_cast<std::uint32_t>(rec.token), 4);
  for (auto c : rec.counts) put_le(os_, c, 4);
  if (header_.has_activity) {
    for (const auto& bits : rec.activity) {
      os_.write(reinterpret_cast<const char*>(bits.data()), static_cast<std::streamsize>(bits.size()));
    }
  }
  if (!os_) throw Error(ErrorCode::Io, "activation log write failed");
}

void write_csv_log_header(std::ostream& os, std::uint32_t layers) {
  os << "seq,pos,token";
  for (std::uint32_t l = 0; l < layers; ++l) os << ",nnz_layer_" << l;
  os << '\n';
}

void write_csv_log_row(std::ostream& os, const ActivationRecord& rec) {
  os << rec.seq << ',' << rec.pos << ',';
  if (rec.token >= 0) os << rec.token;
  for (auto c : rec.counts) os << ',' << c;
  os << '\n';
}

std::unique_ptr<LogReader> open_log(const std::string& path) {
  auto f = std::make_unique<std::ifstream>(path, std::ios::binary);
  if (!*f) throw Error(ErrorCode::Io, "cannot open " + path);
  auto& ref = *f;
  return open_stream(std::move(f), ref);
}

std::unique_ptr<LogReader> open_log(std::istream& is) { return open_stream(nullptr, is); }

void LayerAccumulator::add(const LogHeader& h, const ActivationRecord& rec) {
  if (sum_.empty()) {
    sum_.assign(h.layers, 0);
    max_.assign(h.layers, 0);
    hidden_ = h.hidden;
    has_activity_ = h.has_activity;
    if (has_activity_) ever_.assign(h.layers, std::vector<std::uint8_t>(bitmap_bytes(hidden_), 0));
  }
  if (rec.counts.size() != sum_.size()) throw Error(ErrorCode::DimensionMismatch, "layer count changed mid-log");
  for (std::size_t l = 0; l < sum_.size(); ++l) {
    sum_[l] += rec.counts[l];
    max_[l] = std::max(max_[l], rec.counts[l]);
  }
  if (has_activity_) {
    for (std::size_t l = 0; l < ever_.size(); ++l) {
      for (std::size_t b = 0; b < ever_[l].size(); ++b) ever_[l][b] |= rec.activity[l][b];
    }
  }
  ++rows_;
}

void LayerAccumulator::merge(const LayerAccumulator& o) {
  if (o.rows_ == 0) return;
  if (rows_ == 0) {
    *this = o;
    return;
  }
  if (o.sum_.size() != sum_.size()) throw Error(ErrorCode::DimensionMismatch, "cannot merge logs with different depth");
  for (std::size_t l = 0; l < sum_.size(); ++l) {
    sum_[l] += o.sum_[l];
    max_[l] = std::max(max_[l], o.max_[l]);
  }
  if (has_activity_ && o.has_activity_ && hidden_ == o.hidden_) {
    for (std::size_t l = 0; l < ever_.size(); ++l) {
      for (std::size_t b = 0; b < ever_[l].size(); ++b) ever_[l][b] |= o.ever_[l][b];
    }
  } else {
    has_activity_ = false;
    ever_.clear();
  }
  rows_ += o.rows_;
}

std::vector<LayerStat> LayerAccumulator::result() const {
  if (rows_ == 0) throw Error(ErrorCode::InvalidArgument, "empty activation log");
  std::vector<LayerStat> out(sum_.size());
  for (std::size_t l = 0; l < sum_.size(); ++l) {
    out[l].layer = static_cast<std::uint32_t>(l);
    out[l].mean_nnz = static_cast<double>(sum_[l]) / static_cast<double>(rows_);
    out[l].max_nnz = max_[l];
    if (has_activity_) {
      std::size_t live = 0;
      for (std::uint32_t n = 0; n < hidden_; ++n) live += (ever_[l][n / 8] >> (n % 8)) & 1u;
      out[l].dead_frac = static_cast<double>(hidden_ - live) / hidden_;
    }
  }
  return out;
}

void PositionAccumulator::add(const ActivationRecord& rec) {
  std::uint64_t sum;
  std::uint32_t layers;
  row_value(rec, layer_, sum, layers);
  if (layers_ == 0) layers_ = layers;
  if (layers != layers_) throw Error(ErrorCode::DimensionMismatch, "layer count changed mid-log");
  auto& b = buckets_[rec.pos];
  b.first += sum;
  b.second += 1;
}

void PositionAccumulator::merge(const PositionAccumulator& o) {
  if (layers_ == 0) layers_ = o.layers_;
  if (o.layers_ != 0 && o.layers_ != layers_) throw Error(ErrorCode::DimensionMismatch, "cannot merge logs");
  for (const auto& [pos, b] : o.buckets_) {
    buckets_[pos].first += b.first;
    buckets_[pos].second += b.second;
  }
}

std::vector<PositionStat> PositionAccumulator::result() const {
  std::vector<PositionStat> out;
  out.reserve(buckets_.size());
  for (const auto& [pos, b] : buckets_) {
    out.push_back({pos, static_cast<double>(b.first) / (static_cast<double>(b.second) * layers_), b.second});
  }
  return out;
}

void TokenAccumulator::add(const ActivationRecord& rec) {
  if (rec.token < 0) return;
  std::uint64_t sum;
  std::uint32_t layers;
  row_value(rec, layer_, sum, layers);
  if (layers_ == 0) layers_ = layers;
  if (layers != layers_) throw Error(ErrorCode::DimensionMismatch, "layer count changed mid-log");
  auto& b = buckets_[rec.token];
  b.first += sum;
  b.second += 1;
  ++tagged_rows_;
}

void TokenAccumulator::merge(const TokenAccumulator& o) {
  if (layers_ == 0) layers_ = o.layers_;
  if (o.layers_ != 0 && o.layers_ != layers_) throw Error(ErrorCode::DimensionMismatch, "cannot merge logs");
  for (const auto& [tok, b] : o.buckets_) {
    buckets_[tok].first += b.first;
    buckets_[tok].second += b.second;
  }
  tagged_rows_ += o.tagged_rows_;
}

TokenExtremes TokenAccumulator::result(double min_freq, std::size_t k) const {
  std::vector<TokenStat> kept;
  for (const auto& [tok, b] : buckets_) {
    const double freq = static_cast<double>(b.second) / static_cast<double>(tagged_rows_);
    if (freq < min_freq) continue;
    kept.push_back({tok, freq, static_cast<double>(b.first) / (static_cast<double>(b.second) * layers_)});
  }
  auto asc = [](const TokenStat& a, const TokenStat& b) {
    return a.mean_nnz != b.mean_nnz ? a.mean_nnz < b.mean_nnz : a.token < b.token;
  };
  auto desc = [](const TokenStat& a, const TokenStat& b) {
    return a.mean_nnz != b.mean_nnz ? a.mean_nnz > b.mean_nnz : a.token < b.token;
  };
  TokenExtremes out;
  const std::size_t take = std::min(k, kept.size());
  out.lowest = kept;
  std::partial_sort(out.lowest.begin(), out.lowest.begin() + static_cast<std::ptrdiff_t>(take), out.lowest.end(), asc);
  out.lowest.resize(take);
  out.highest = std::move(kept);
  std::partial_sort(out.highest.begin(), out.highest.begin() + static_cast<std::ptrdiff_t>(take), out.highest.end(),
                    desc);
  out.highest.resize(take);
  return out;
}

std::vector<LayerStat> layer_stats(LogReader& log) {
  LayerAccumulator acc;
  ActivationRecord rec;
  while (log.next(rec)) acc.add(log.header(), rec);
  return acc.result();
}

std::vector<PositionStat> position_stats(LogReader& log, std::optional<std::uint32_t> layer) {
  PositionAccumulator acc(layer);
  ActivationRecord rec;
  while (log.next(rec)) acc.add(rec);
  return acc.result();
}

TokenExtremes token_extremes(LogReader& log, double min_freq, std::size_t k, std::optional<std::uint32_t> layer) {
  TokenAccumulator acc(layer);
  ActivationRecord rec;
  while (log.next(rec)) acc.add(rec);
  return acc.result(min_freq, k);
}

double correlate(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw Error(ErrorCode::DimensionMismatch, "correlate: length mismatch");
  if (x.size() < 2) throw Error(ErrorCode::InvalidArgument, "correlate: need at least two points");
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw Error(ErrorCode::InvalidArgument, "correlate: zero variance");
  const double r = sxy / std::sqrt(sxx * syy);
  return std::clamp(r, -1.0, 1.0);
}

void write_layer_stats_csv(std::ostream& os, const std::vector<LayerStat>& stats) {
  os << "layer,mean_nnz,max_nnz,dead_frac\n";
  for (const auto& s : stats) {
    os << s.layer << ',';
    write_double(os, s.mean_nnz);
    os << ',' << s.max_nnz << ',';
    if (s.dead_frac) write_double(os, *s.dead_frac);
    os << '\n';
  }
}

void write_position_stats_csv(std::ostream& os, const std::vector<PositionStat>& stats) {
  os << "position,mean_nnz\n";
  for (const auto& s : stats) {
    os << s.position << ',';
    write_double(os, s.mean_nnz);
    os << '\n';
  }
}

void write_token_extremes_csv(std::ostream& os, const TokenExtremes& ex) {
  os << "kind,rank,token,frequency,mean_nnz\n";
  auto emit = [&](const char* kind, const std::vector<TokenStat>& v) {
    for (std::size_t i = 0; i < v.size(); ++i) {
      os << kind << ',' << i << ',' << v[i].token << ',';
      write_double(os, v[i].frequency);
      os << ',';
      write_double(os, v[i].mean_nnz);
      os << '\n';
    }
  };
  emit("lowest", ex.lowest);
  emit("highest", ex.highest);
}

}  // namespace sparseffn
