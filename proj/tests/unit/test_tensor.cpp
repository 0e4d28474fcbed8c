#include <atomic>
#include <set>

#include "doctest.h"
#include "oracles.hpp"
#include "sparseffn/parallel.hpp"
#include "sparseffn/tensor.hpp"

using namespace sparseffn;

TEST_SUITE("tensor") {
  TEST_CASE("matmul small example") {
    const DenseMatrix a{{1, 2}, {3, 4}};
    const DenseMatrix b{{5, 6}, {7, 8}};
    const DenseMatrix c = matmul_dense(a, b);
    CHECK(c == DenseMatrix{{19, 22}, {43, 50}});
  }

  TEST_CASE("matmul identity and zero") {
    oracle::Gen g(1);
    const auto a = oracle::gaussian<float>(5, 7, g);
    CHECK(matmul_dense(a, DenseMatrix::identity(7)) == a);
    const auto z = matmul_dense(a, DenseMatrix(7, 3));
    for (float v : z.values()) CHECK(v == 0.0f);
  }

  TEST_CASE("matmul is bitwise equal to the naive ascending loop") {
    oracle::Gen g(2);
    const std::size_t shapes[][3] = {{1, 1, 1},   {3, 5, 7},    {4, 16, 8},   {17, 33, 65},
                                     {64, 300, 70}, {130, 513, 9}, {5, 1, 600}, {0, 4, 4}};
    for (const auto& s : shapes) {
      const auto a = oracle::gaussian<float>(s[0], s[1], g);
      const auto b = oracle::gaussian<float>(s[1], s[2], g);
      CHECK(oracle::bitwise_equal(matmul_dense(a, b), oracle::matmul(a, b)));
      const auto ad = cast<double>(a);
      const auto bd = cast<double>(b);
      CHECK(oracle::bitwise_equal(matmul_dense(ad, bd), oracle::matmul(ad, bd)));
    }
  }

  TEST_CASE("matmul result does not depend on worker count") {
    oracle::Gen g(3);
    const auto a = oracle::gaussian<float>(97, 130, g);
    const auto b = oracle::gaussian<float>(130, 75, g);
    const auto saved = num_threads();
    set_num_threads(1);
    const auto one = matmul_dense(a, b);
    set_num_threads(4);
    const auto four = matmul_dense(a, b);
    set_num_threads(saved);
    CHECK(oracle::bitwise_equal(one, four));
  }

  TEST_CASE("matmul counts MACs and rejects bad shapes") {
    KernelStats st;
    matmul_dense(DenseMatrix(3, 4), DenseMatrix(4, 5), Precision::f32, &st);
    CHECK(st.macs == 60);
    try {
      matmul_dense(DenseMatrix(3, 4), DenseMatrix(5, 5));
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::DimensionMismatch);
    }
  }

  TEST_CASE("bf16 mode rounds every output") {
    oracle::Gen g(4);
    const auto a = oracle::gaussian<float>(6, 9, g);
    const auto b = oracle::gaussian<float>(9, 4, g);
    const auto full = oracle::matmul(a, b);
    const auto rounded = matmul_dense(a, b, Precision::bf16);
    for (std::size_t i = 0; i < full.size(); ++i) {
      CHECK(rounded.values()[i] == round_bf16(full.values()[i]));
      const auto bits = std::bit_cast<std::uint32_t>(rounded.values()[i]);
      CHECK((bits & 0xFFFFu) == 0u);
    }
  }

  TEST_CASE("bf16 encoding") {
    CHECK(encode_bf16(1.0f) == 0x3F80);
    CHECK(encode_bf16(-2.0f) == 0xC000);
    CHECK(decode_bf16(0x3F80) == 1.0f);
    // Ties go to even: 1 + 2^-8 sits halfway between 1 and 1 + 2^-7.
    CHECK(round_bf16(1.0f + 0.00390625f) == 1.0f);
    CHECK(round_bf16(1.0f + 3 * 0.00390625f) == 1.0f + 4 * 0.00390625f);
    CHECK(std::isnan(decode_bf16(encode_bf16(std::numeric_limits<float>::quiet_NaN()))));
    CHECK(std::isinf(round_bf16(std::numeric_limits<float>::infinity())));
  }

  TEST_CASE("elementwise helpers") {
    const DenseMatrix a{{-1, 0, 2}};
    CHECK(relu(a) == DenseMatrix{{0, 0, 2}});
    CHECK(hadamard(a, a) == DenseMatrix{{1, 0, 4}});
    const auto s = silu(a);
    CHECK(s(0, 1) == 0.0f);
    CHECK(s(0, 2) == doctest::Approx(2.0 / (1.0 + std::exp(-2.0))));
  }

  TEST_CASE("transpose against the naive loop") {
    oracle::Gen g(5);
    for (auto [r, c] : std::vector<std::pair<int, int>>{{1, 1}, {3, 70}, {65, 33}, {128, 256}}) {
      const auto a = oracle::gaussian<float>(r, c, g);
      CHECK(transpose_dense(a) == oracle::transpose(a));
    }
  }

  TEST_CASE("randn") {
    SeededRng r1(9), r2(9);
    CHECK(randn<float>(4, 4, 0.5, r1) == randn<float>(4, 4, 0.5, r2));
    SeededRng r3(1);
    const auto zeros = randn<float>(3, 3, 0.0, r3);
    for (float v : zeros.values()) CHECK(v == 0.0f);
    CHECK_THROWS_AS(randn<float>(2, 2, -1.0, r3), Error);

    SeededRng r4(11);
    const auto big = randn<double>(200, 200, 2.0, r4);
    double mean = 0, sq = 0;
    for (double v : big.values()) {
      mean += v;
      sq += v * v;
    }
    mean /= big.size();
    sq /= big.size();
    CHECK(std::abs(mean) < 0.05);
    CHECK(std::sqrt(sq - mean * mean) == doctest::Approx(2.0).epsilon(0.03));
  }

  TEST_CASE("finite check and relative error") {
    DenseMatrix a{{1, 2}};
    CHECK(all_finite(a));
    a(0, 1) = std::numeric_limits<float>::infinity();
    CHECK_FALSE(all_finite(a));
    CHECK(max_relative_error(DenseMatrix{{1, 2}}, DenseMatrix{{1, 4}}) == doctest::Approx(0.5));
    CHECK(max_relative_error(DenseMatrix{{0.5f}}, DenseMatrix{{0}}) == doctest::Approx(0.5));
  }
}

TEST_SUITE("rng") {
  TEST_CASE("streams are reproducible and distinct") {
    SeededRng a(42), b(42), c(43);
    bool differs = false;
    for (int i = 0; i < 16; ++i) {
      const auto va = a.next_u64();
      CHECK(va == b.next_u64());
      differs = differs || va != c.next_u64();
    }
    CHECK(differs);
    auto d1 = SeededRng::derive(42, 1);
    auto d2 = SeededRng::derive(42, 2);
    CHECK(d1.next_u64() != d2.next_u64());
  }

  TEST_CASE("uniform and below stay in range") {
    SeededRng r(7);
    std::set<std::uint64_t> seen;
    for (int i = 0; i < 2000; ++i) {
      const double u = r.uniform();
      CHECK(u >= 0.0);
      CHECK(u < 1.0);
      const auto k = r.below(5);
      CHECK(k < 5);
      seen.insert(k);
    }
    CHECK(seen.size() == 5);
  }
}

TEST_SUITE("parallel") {
  TEST_CASE("every index visited once") {
    const auto saved = num_threads();
    for (std::size_t threads : {1, 2, 3, 8}) {
      set_num_threads(threads);
      std::vector<std::atomic<int>> hits(1001);
      parallel_for(hits.size(), [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) hits[i]++;
      });
      for (auto& h : hits) CHECK(h.load() == 1);
    }
    set_num_threads(saved);
  }

  TEST_CASE("exceptions propagate") {
    const auto saved = num_threads();
    set_num_threads(4);
    CHECK_THROWS_AS(parallel_for(100,
                                 [](std::size_t b, std::size_t) {
                                   if (b > 0) throw Error(ErrorCode::InvalidArgument, "boom");
                                 }),
                    Error);
    set_num_threads(saved);
  }

  TEST_CASE("nested regions run inline") {
    const auto saved = num_threads();
    set_num_threads(3);
    std::atomic<int> total{0};
    parallel_for(6, [&](std::size_t b, std::size_t e) {
      for (std::size_t i = b; i < e; ++i) {
        parallel_for(10, [&](std::size_t b2, std::size_t e2) { total += static_cast<int>(e2 - b2); });
      }
    });
    CHECK(total.load() == 60);
    set_num_threads(saved);
  }
}
