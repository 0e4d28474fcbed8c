#include "sparseffn/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>

namespace sparseffn {

namespace {

constexpr std::array<char, 4> kDenseMagic{'D', 'N', 'S', 'E'};
constexpr std::array<char, 4> kTwellMagic{'T', 'W', 'L', 'L'};
constexpr std::array<char, 4> kHybridMagic{'H', 'Y', 'B', 'R'};

// Guards allocations driven by untrusted headers.
constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 34;

class Writer {
 public:
  explicit Writer(std::ostream& os) : os_(os) {}

  void bytes(const void* p, std::size_t n) { os_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  void u8(std::uint8_t v) { bytes(&v, 1); }
  void u16(std::uint16_t v) {
    const unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
    bytes(b, 2);
  }
  void u32(std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    bytes(b, 4);
  }
  void u64(std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    bytes(b, 8);
  }

  template <class T>
  void scalar(T v, Precision dtype) {
    switch (dtype) {
      case Precision::f32: u32(std::bit_cast<std::uint32_t>(static_cast<float>(v))); break;
      case Precision::f64: u64(std::bit_cast<std::uint64_t>(static_cast<double>(v))); break;
      case Precision::bf16: u16(encode_bf16(static_cast<float>(v))); break;
    }
  }

  void finish() {
    if (!os_) throw Error(ErrorCode::Io, "write failed");
  }

 private:
  std::ostream& os_;
};

class Reader {
 public:
  explicit Reader(std::istream& is) : is_(is) {}

  void bytes(void* p, std::size_t n) {
    is_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n) throw Error(ErrorCode::Format, "truncated file");
  }
  std::uint8_t u8() {
    std::uint8_t v;
    bytes(&v, 1);
    return v;
  }
  std::uint16_t u16() {
    unsigned char b[2];
    bytes(b, 2);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
  }
  std::uint32_t u32() {
    unsigned char b[4];
    bytes(b, 4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
    return v;
  }
  std::uint64_t u64() {
    unsigned char b[8];
    bytes(b, 8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
    return v;
  }

  template <class T>
  T scalar(Precision dtype) {
    switch (dtype) {
      case Precision::f32: return static_cast<T>(std::bit_cast<float>(u32()));
      case Precision::f64: return static_cast<T>(std::bit_cast<double>(u64()));
      case Precision::bf16: return static_cast<T>(decode_bf16(u16()));
    }
    return T{};
  }

 private:
  std::istream& is_;
};

Precision dtype_from_byte(std::uint8_t b) {
  switch (b) {
    case 0x01: return Precision::f32;
    case 0x02: return Precision::f64;
    case 0x03: return Precision::bf16;
    default: throw Error(ErrorCode::Format, "unknown dtype code " + std::to_string(b));
  }
}

Precision read_preamble(Reader& rd, const std::array<char, 4>& magic) {
  std::array<char, 4> got{};
  rd.bytes(got.data(), 4);
  if (got != magic) {
    throw Error(ErrorCode::Format, std::string("bad magic, expected ") + std::string(magic.data(), 4));
  }
  const std::uint8_t version = rd.u8();
  if (version != kFormatVersion) throw Error(ErrorCode::Format, "unsupported version " + std::to_string(version));
  return dtype_from_byte(rd.u8());
}

void write_preamble(Writer& wr, const std::array<char, 4>& magic, Precision dtype) {
  wr.bytes(magic.data(), 4);
  wr.u8(kFormatVersion);
  wr.u8(static_cast<std::uint8_t>(dtype));
}

std::uint64_t checked_product(std::uint64_t a, std::uint64_t b) {
  if (a != 0 && b > kMaxElements / a) throw Error(ErrorCode::Format, "declared shape is too large");
  return a * b;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path);
  return in;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot create " + path);
  return out;
}

}  // namespace

FileHeader peek_header(const std::string& path) {
  auto in = open_in(path);
  Reader rd(in);
  std::array<char, 4> magic{};
  rd.bytes(magic.data(), 4);
  FileHeader h{};
  if (magic == kDenseMagic) {
    h.kind = FileKind::dense;
  } else if (magic == kTwellMagic) {
    h.kind = FileKind::twell;
  } else if (magic == kHybridMagic) {
    h.kind = FileKind::hybrid;
  } else {
    throw Error(ErrorCode::Format, path + ": unrecognized magic");
  }
  const std::uint8_t version = rd.u8();
  if (version != kFormatVersion) throw Error(ErrorCode::Format, "unsupported version " + std::to_string(version));
  h.dtype = dtype_from_byte(rd.u8());
  return h;
}

template <class T>
void write_dense(std::ostream& os, const Matrix<T>& m, Precision dtype) {
  Writer wr(os);
  write_preamble(wr, kDenseMagic, dtype);
  wr.u64(m.rows());
  wr.u64(m.cols());
  for (T v : m.values()) wr.scalar(v, dtype);
  wr.finish();
}

template <class T>
Matrix<T> read_dense(std::istream& is, Precision* dtype_out) {
  Reader rd(is);
  const Precision dtype = read_preamble(rd, kDenseMagic);
  const std::uint64_t rows = rd.u64();
  const std::uint64_t cols = rd.u64();
  checked_product(rows, cols);
  Matrix<T> m(rows, cols);
  for (auto& v : m.values()) v = rd.scalar<T>(dtype);
  if (dtype_out) *dtype_out = dtype;
  return m;
}

template <class T>
void write_twell(std::ostream& os, const TwellMatrix<T>& tw, Precision dtype) {
  Writer wr(os);
  write_preamble(wr, kTwellMagic, dtype);
  wr.u64(tw.rows);
  wr.u64(tw.cols);
  wr.u64(tw.config.tile);
  wr.u64(tw.config.compress);
  for (std::uint32_t z : tw.nnz) wr.u32(z);
  for (std::uint32_t i : tw.indices) wr.u32(i);
  for (T v : tw.values) wr.scalar(v, dtype);
  wr.finish();
}

template <class T>
TwellMatrix<T> read_twell(std::istream& is, Precision* dtype_out) {
  Reader rd(is);
  const Precision dtype = read_preamble(rd, kTwellMagic);
  const std::uint64_t rows = rd.u64();
  const std::uint64_t cols = rd.u64();
  TwellConfig cfg;
  cfg.tile = rd.u64();
  cfg.compress = rd.u64();
  checked_product(rows, cols);
  try {
    cfg.check(cols);
  } catch (const Error& e) {
    throw Error(ErrorCode::Format, e.what());
  }
  TwellMatrix<T> tw(rows, cols, cfg);
  for (auto& z : tw.nnz) z = rd.u32();
  for (auto& i : tw.indices) i = rd.u32();
  for (auto& v : tw.values) v = rd.scalar<T>(dtype);
  if (dtype_out) *dtype_out = dtype;
  return tw;
}

template <class T>
void write_hybrid(std::ostream& os, const HybridMatrix<T>& h, Precision dtype) {
  if (!h.pattern) throw Error(ErrorCode::InvalidArgument, "write_hybrid: matrix has no pattern");
  const auto& p = *h.pattern;
  Writer wr(os);
  write_preamble(wr, kHybridMagic, dtype);
  wr.u64(p.rows);
  wr.u64(p.cols);
  wr.u64(p.ell_width);
  wr.u64(p.dense_cap);
  std::vector<std::uint8_t> bitmap((p.rows + 7) / 8, 0);
  for (std::size_t r = 0; r < p.rows; ++r) {
    if (p.routing[r]) bitmap[r / 8] |= static_cast<std::uint8_t>(1u << (r % 8));
  }
  wr.bytes(bitmap.data(), bitmap.size());
  for (std::uint32_t n : p.row_nnz) wr.u32(n);
  for (std::uint32_t c : p.ell_cols) wr.u32(c);
  for (T v : h.ell_vals) wr.scalar(v, dtype);
  wr.u64(p.tail_count());
  for (std::uint32_t r : p.tail_rows) wr.u32(r);
  for (T v : h.tail_vals) wr.scalar(v, dtype);
  wr.finish();
}

template <class T>
HybridMatrix<T> read_hybrid(std::istream& is, Precision* dtype_out) {
  Reader rd(is);
  const Precision dtype = read_preamble(rd, kHybridMagic);
  auto p = std::make_shared<HybridPattern>();
  p->rows = rd.u64();
  p->cols = rd.u64();
  p->ell_width = rd.u64();
  p->dense_cap = rd.u64();
  checked_product(p->rows, p->cols);
  checked_product(p->rows, p->ell_width);
  std::vector<std::uint8_t> bitmap((p->rows + 7) / 8);
  rd.bytes(bitmap.data(), bitmap.size());
  p->routing.resize(p->rows);
  for (std::size_t r = 0; r < p->rows; ++r) p->routing[r] = (bitmap[r / 8] >> (r % 8)) & 1u;
  p->row_nnz.resize(p->rows);
  for (auto& n : p->row_nnz) n = rd.u32();
  p->ell_cols.resize(p->rows * p->ell_width);
  for (auto& c : p->ell_cols) c = rd.u32();
  HybridMatrix<T> h;
  h.ell_vals.resize(p->rows * p->ell_width);
  for (auto& v : h.ell_vals) v = rd.scalar<T>(dtype);
  const std::uint64_t tail = rd.u64();
  if (tail > p->rows) throw Error(ErrorCode::Format, "HYBR: more tail rows than matrix rows");
  p->tail_rows.resize(tail);
  for (auto& r : p->tail_rows) r = rd.u32();
  h.tail_vals.resize(tail * p->cols);
  for (auto& v : h.tail_vals) v = rd.scalar<T>(dtype);

  p->tail_map.assign(p->rows, -1);
  p->tail_support.assign(tail * p->cols, 0);
  for (std::size_t s = 0; s < tail; ++s) {
    const std::uint32_t r = p->tail_rows[s];
    if (r >= p->rows) throw Error(ErrorCode::Format, "HYBR: tail map points outside the matrix");
    p->tail_map[r] = static_cast<std::int32_t>(s);
    for (std::size_t c = 0; c < p->cols; ++c) {
      p->tail_support[s * p->cols + c] = h.tail_vals[s * p->cols + c] != T{0} ? 1 : 0;
    }
  }
  for (std::size_t r = 0; r < p->rows; ++r) {
    if (p->routing[r] && p->tail_map[r] < 0) p->overflow = true;
  }
  h.pattern = std::move(p);
  if (dtype_out) *dtype_out = dtype;
  return h;
}

template <class T>
void save_dense(const std::string& path, const Matrix<T>& m, Precision dtype) {
  auto out = open_out(path);
  write_dense(out, m, dtype);
}

template <class T>
Matrix<T> load_dense(const std::string& path, Precision* dtype) {
  auto in = open_in(path);
  return read_dense<T>(in, dtype);
}

template <class T>
void save_twell(const std::string& path, const TwellMatrix<T>& tw, Precision dtype) {
  auto out = open_out(path);
  write_twell(out, tw, dtype);
}

template <class T>
TwellMatrix<T> load_twell(const std::string& path, Precision* dtype) {
  auto in = open_in(path);
  return read_twell<T>(in, dtype);
}

template <class T>
void save_hybrid(const std::string& path, const HybridMatrix<T>& h, Precision dtype) {
  auto out = open_out(path);
  write_hybrid(out, h, dtype);
}

template <class T>
HybridMatrix<T> load_hybrid(const std::string& path, Precision* dtype) {
  auto in = open_in(path);
  return read_hybrid<T>(in, dtype);
}

#define SPARSEFFN_INSTANTIATE(T)                                                          \
  template void write_dense<T>(std::ostream&, const Matrix<T>&, Precision);               \
  template Matrix<T> read_dense<T>(std::istream&, Precision*);                            \
  template void write_twell<T>(std::ostream&, const TwellMatrix<T>&, Precision);          \
  template TwellMatrix<T> read_twell<T>(std::istream&, Precision*);                       \
  template void write_hybrid<T>(std::ostream&, const HybridMatrix<T>&, Precision);        \
  template HybridMatrix<T> read_hybrid<T>(std::istream&, Precision*);                     \
  template void save_dense<T>(const std::string&, const Matrix<T>&, Precision);           \
  template Matrix<T> load_dense<T>(const std::string&, Precision*);                       \
  template void save_twell<T>(const std::string&, const TwellMatrix<T>&, Precision);      \
  template TwellMatrix<T> load_twell<T>(const std::string&, Precision*);                  \
  template void save_hybrid<T>(const std::string&, const HybridMatrix<T>&, Precision);    \
  template HybridMatrix<T> load_hybrid<T>(const std::string&, Precision*);

SPARSEFFN_INSTANTIATE(float)
SPARSEFFN_INSTANTIATE(double)

#undef SPARSEFFN_INSTANTIATE

}  // namespace sparseffn
