#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "oracles.hpp"
#include "sparseffn/io.hpp"

using namespace sparseffn;

namespace {

std::string bytes_of(auto&& write) {
  std::ostringstream os(std::ios::binary);
  write(os);
  return os.str();
}

std::uint64_t le64(const std::string& s, std::size_t at) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(s[at + i]);
  return v;
}

}  // namespace

TEST_SUITE("io") {
  TEST_CASE("dense header layout") {
    const DenseMatrix m{{1, 2, 3}, {4, 5, 6}};
    const auto s = bytes_of([&](std::ostream& os) { write_dense(os, m, Precision::f32); });
    REQUIRE(s.size() == 4 + 1 + 1 + 8 + 8 + 6 * 4);
    CHECK(s.substr(0, 4) == "DNSE");
    CHECK(s[4] == 0x01);
    CHECK(s[5] == 0x01);
    CHECK(le64(s, 6) == 2);
    CHECK(le64(s, 14) == 3);
    // 1.0f = 0x3F800000, little-endian.
    CHECK(static_cast<unsigned char>(s[22]) == 0x00);
    CHECK(static_cast<unsigned char>(s[25]) == 0x3F);
  }

  TEST_CASE("dense round trips in every dtype") {
    oracle::Gen g(31);
    const auto m = oracle::gaussian<float>(5, 7, g);
    {
      std::istringstream in(bytes_of([&](std::ostream& os) { write_dense(os, m, Precision::f32); }));
      Precision dt{};
      CHECK(oracle::bitwise_equal(read_dense<float>(in, &dt), m));
      CHECK(dt == Precision::f32);
    }
    {
      const auto md = cast<double>(m);
      std::istringstream in(bytes_of([&](std::ostream& os) { write_dense(os, md, Precision::f64); }));
      CHECK(oracle::bitwise_equal(read_dense<double>(in), md));
    }
    {
      const auto s = bytes_of([&](std::ostream& os) { write_dense(os, m, Precision::bf16); });
      CHECK(s.size() == 22 + m.size() * 2);
      std::istringstream in(s);
      const auto back = read_dense<float>(in);
      for (std::size_t i = 0; i < m.size(); ++i) CHECK(back.values()[i] == round_bf16(m.values()[i]));
    }
  }

  TEST_CASE("twell and hybrid round trips") {
    oracle::Gen g(32);
    const auto d = oracle::sparse_nonneg<float>(12, 128, 0.1, g);
    TwellConfig c;
    c.tile = 64;
    c.compress = 2;
    const auto tw = dense_to_twell(d, c);
    std::istringstream in1(bytes_of([&](std::ostream& os) { write_twell(os, tw, Precision::f32); }));
    const auto tw2 = read_twell<float>(in1);
    CHECK(tw2.values == tw.values);
    CHECK(tw2.indices == tw.indices);
    CHECK(tw2.nnz == tw.nnz);
    CHECK(tw2.config.tile == 64);
    CHECK(tw2.config.compress == 2);

    const auto h = twell_to_hybrid(tw, 8, 12).hybrid;
    std::istringstream in2(bytes_of([&](std::ostream& os) { write_hybrid(os, h, Precision::f32); }));
    const auto h2 = read_hybrid<float>(in2);
    CHECK(same_pattern(h.pattern, h2.pattern));
    CHECK(oracle::bitwise_equal(hybrid_to_dense_matrix(h2), d));
  }

  TEST_CASE("overflowed hybrid keeps its flag") {
    const DenseMatrix d{{1, 1, 1, 0}, {1, 1, 1, 1}};
    const auto h = dense_to_hybrid(d, 2, 1);
    std::istringstream in(bytes_of([&](std::ostream& os) { write_hybrid(os, h, Precision::f32); }));
    const auto h2 = read_hybrid<float>(in);
    CHECK(h2.overflow());
    CHECK(!validate(h2));
  }

  TEST_CASE("malformed input") {
    std::istringstream bad_magic("XXXX\x01\x01");
    CHECK_THROWS_AS(read_dense<float>(bad_magic), Error);

    auto s = bytes_of([&](std::ostream& os) { write_dense(os, DenseMatrix(2, 2), Precision::f32); });
    std::istringstream truncated(s.substr(0, s.size() - 3));
    try {
      read_dense<float>(truncated);
      FAIL("expected a format error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::Format);
    }

    s[5] = 0x07;
    std::istringstream bad_dtype(s);
    CHECK_THROWS_AS(read_dense<float>(bad_dtype), Error);

    s[5] = 0x01;
    s[4] = 0x02;
    std::istringstream bad_version(s);
    CHECK_THROWS_AS(read_dense<float>(bad_version), Error);
  }

  TEST_CASE("files and header peeking") {
    const auto dir = std::filesystem::temp_directory_path() / "sparseffn_io_test";
    std::filesystem::create_directories(dir);
    const auto path = (dir / "m.dnse").string();
    save_dense(path, DenseMatrix{{1, 2}}, Precision::f64);
    const auto h = peek_header(path);
    CHECK(h.kind == FileKind::dense);
    CHECK(h.dtype == Precision::f64);
    CHECK(load_dense<double>(path) == DenseMatrix64{{1, 2}});
    try {
      load_dense<float>((dir / "missing").string());
      FAIL("expected an io error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::Io);
    }
    std::filesystem::remove_all(dir);
  }
}
