#pragma once

#include <array>
#include <iosfwd>
#include <string>

#include "sparseffn/formats.hpp"
#include "sparseffn/tensor.hpp"

namespace sparseffn {

// On-disk layouts, all little-endian:
//
//   DNSE  magic "DNSE", u8 version=1, u8 dtype, u64 rows, u64 cols,
//         rows*cols payload elements.
//   TWLL  magic "TWLL", u8 version=1, u8 dtype, u64 M, N, T, C,
//         u32 h_nz[M*N/T], u32 h_I[M*N/C], h_v[M*N/C] in dtype.
//   HYBR  magic "HYBR", u8 version=1, u8 dtype, u64 M, N, ELL_W, D_cap,
//         routing bitmap (ceil(M/8) bytes, row r at bit r%8 of byte r/8),
//         u32 row_nnz[M], u32 col_idx[M*ELL_W], vals[M*ELL_W] in dtype,
//         u64 tail rows, u32 tail_map_reverse[tail], tail payload
//         [tail*N] in dtype.
//
// dtype: 0x01 binary32, 0x02 binary64, 0x03 brain-float (2 bytes). bf16
// payloads are written by rounding binary32 values and read back widened.
// A HYBR dense row's support is its set of nonzero entries, and a dense row
// without a tail slot marks an overflowed matrix.

enum class FileKind { dense, twell, hybrid };

struct FileHeader {
  FileKind kind;
  Precision dtype;
};

constexpr std::uint8_t kFormatVersion = 1;

// Reads only the magic and dtype bytes.
FileHeader peek_header(const std::string& path);

template <class T> void write_dense(std::ostream& os, const Matrix<T>& m, Precision dtype);
template <class T> Matrix<T> read_dense(std::istream& is, Precision* dtype = nullptr);
template <class T> void write_twell(std::ostream& os, const TwellMatrix<T>& tw, Precision dtype);
template <class T> TwellMatrix<T> read_twell(std::istream& is, Precision* dtype = nullptr);
template <class T> void write_hybrid(std::ostream& os, const HybridMatrix<T>& h, Precision dtype);
template <class T> HybridMatrix<T> read_hybrid(std::istream& is, Precision* dtype = nullptr);

// File wrappers; Io errors name the path.
template <class T> void save_dense(const std::string& path, const Matrix<T>& m, Precision dtype);
template <class T> Matrix<T> load_dense(const std::string& path, Precision* dtype = nullptr);
template <class T> void save_twell(const std::string& path, const TwellMatrix<T>& tw, Precision dtype);
template <class T> TwellMatrix<T> load_twell(const std::string& path, Precision* dtype = nullptr);
template <class T> void save_hybrid(const std::string& path, const HybridMatrix<T>& h, Precision dtype);
template <class T> HybridMatrix<T> load_hybrid(const std::string& path, Precision* dtype = nullptr);

}  // namespace sparseffn
