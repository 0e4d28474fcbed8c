#include <map>
#include <sstream>

#include "doctest.h"
#include "oracles.hpp"
#include "sparseffn/statkit.hpp"

using namespace sparseffn;

namespace {

struct Row {
  std::uint64_t seq;
  std::uint32_t pos;
  std::int32_t token;
  std::vector<std::uint32_t> counts;
};

std::string csv_log(const std::vector<Row>& rows, std::uint32_t layers) {
  std::ostringstream os;
  write_csv_log_header(os, layers);
  for (const auto& r : rows) {
    ActivationRecord rec;
    rec.seq = r.seq;
    rec.pos = r.pos;
    rec.token = r.token;
    rec.counts = r.counts;
    write_csv_log_row(os, rec);
  }
  return os.str();
}

std::string alog(const std::vector<Row>& rows, std::uint32_t layers, std::uint32_t hidden) {
  std::ostringstream os;
  AlogWriter w(os, layers, hidden, false);
  for (const auto& r : rows) {
    ActivationRecord rec;
    rec.seq = r.seq;
    rec.pos = r.pos;
    rec.token = r.token;
    rec.counts = r.counts;
    w.write(rec);
  }
  return os.str();
}

std::vector<Row> random_rows(oracle::Gen& g, std::size_t n, std::uint32_t layers, std::uint32_t hidden) {
  std::vector<Row> rows;
  for (std::size_t i = 0; i < n; ++i) {
    Row r{i / 16, static_cast<std::uint32_t>(i % 16), static_cast<std::int32_t>(g() % 20), {}};
    if (g() % 7 == 0) r.token = -1;
    for (std::uint32_t l = 0; l < layers; ++l) r.counts.push_back(static_cast<std::uint32_t>(g() % (hidden + 1)));
    rows.push_back(r);
  }
  return rows;
}

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::InvalidArgument;
}

}  // namespace

TEST_SUITE("statkit") {
  TEST_CASE("layer stats examples") {
    std::istringstream a(csv_log({{0, 0, 1, {2}}, {0, 1, 2, {4}}}, 1));
    auto log = open_log(a);
    const auto s = layer_stats(*log);
    REQUIRE(s.size() == 1);
    CHECK(s[0].mean_nnz == 3.0);
    CHECK(s[0].max_nnz == 4);
    CHECK_FALSE(s[0].dead_frac.has_value());

    std::istringstream b(alog({{0, 0, 1, {5, 7}}, {0, 1, 1, {5, 7}}, {1, 0, 3, {5, 7}}}, 2, 8));
    log = open_log(b);
    const auto c = layer_stats(*log);
    CHECK(c[0].mean_nnz == 5.0);
    CHECK(c[0].max_nnz == 5);
    CHECK(c[1].mean_nnz == 7.0);
    CHECK(c[1].max_nnz == 7);

    std::istringstream empty(csv_log({}, 2));
    log = open_log(empty);
    CHECK_THROWS_AS(layer_stats(*log), Error);
  }

  TEST_CASE("random log: brute-force recount, both formats") {
    oracle::Gen g(91);
    const std::uint32_t layers = 3, hidden = 50;
    const auto rows = random_rows(g, 500, layers, hidden);
    for (int fmt = 0; fmt < 2; ++fmt) {
      std::istringstream is(fmt == 0 ? csv_log(rows, layers) : alog(rows, layers, hidden));
      auto log = open_log(is);
      const auto s = layer_stats(*log);
      for (std::uint32_t l = 0; l < layers; ++l) {
        std::uint64_t sum = 0;
        std::uint32_t mx = 0;
        for (const auto& r : rows) {
          sum += r.counts[l];
          mx = std::max(mx, r.counts[l]);
        }
        CHECK(std::abs(s[l].mean_nnz - static_cast<double>(sum) / rows.size()) <= 1e-12);
        CHECK(s[l].max_nnz == mx);
      }
    }
  }

  TEST_CASE("position stats") {
    std::istringstream a(csv_log({{0, 0, 1, {2}}, {1, 0, 1, {6}}, {2, 0, 1, {7}}}, 1));
    auto log = open_log(a);
    auto p = position_stats(*log);
    REQUIRE(p.size() == 1);
    CHECK(p[0].position == 0);
    CHECK(p[0].mean_nnz == 5.0);

    std::istringstream b(csv_log({{0, 0, 1, {3}}, {0, 1, 1, {9}}, {1, 0, 1, {3}}, {1, 1, 1, {9}}}, 1));
    log = open_log(b);
    p = position_stats(*log);
    REQUIRE(p.size() == 2);
    CHECK(p[0].mean_nnz == 3.0);
    CHECK(p[1].mean_nnz == 9.0);

    oracle::Gen g(92);
    const auto rows = random_rows(g, 400, 2, 30);
    std::istringstream c(alog(rows, 2, 30));
    log = open_log(c);
    p = position_stats(*log);
    std::map<std::uint32_t, std::pair<double, double>> brute;
    for (const auto& r : rows) {
      brute[r.pos].first += r.counts[0] + r.counts[1];
      brute[r.pos].second += 2;
    }
    REQUIRE(p.size() == brute.size());
    for (const auto& s : p) {
      CHECK(std::abs(s.mean_nnz - brute[s.position].first / brute[s.position].second) <= 1e-12);
    }

    std::istringstream d(alog(rows, 2, 30));
    log = open_log(d);
    const auto one = position_stats(*log, 1);
    std::map<std::uint32_t, std::pair<double, double>> brute1;
    for (const auto& r : rows) {
      brute1[r.pos].first += r.counts[1];
      brute1[r.pos].second += 1;
    }
    for (const auto& s : one) CHECK(std::abs(s.mean_nnz - brute1[s.position].first / brute1[s.position].second) <= 1e-12);
  }

  TEST_CASE("token extremes") {
    std::istringstream a(csv_log({{0, 0, 4, {3}}, {0, 1, 4, {5}}}, 1));
    auto log = open_log(a);
    auto ex = token_extremes(*log, 0.0, 3);
    REQUIRE(ex.lowest.size() == 1);
    REQUIRE(ex.highest.size() == 1);
    CHECK(ex.lowest[0].token == 4);
    CHECK(ex.highest[0].token == 4);
    CHECK(ex.lowest[0].mean_nnz == 4.0);

    // Token 9 appears once in 10 rows; the 0.2 threshold drops it.
    std::vector<Row> rows;
    for (int i = 0; i < 9; ++i) rows.push_back({0, static_cast<std::uint32_t>(i), 1, {3}});
    rows.push_back({0, 9, 9, {100}});
    std::istringstream b(csv_log(rows, 1));
    log = open_log(b);
    ex = token_extremes(*log, 0.2, 2);
    REQUIRE(ex.highest.size() == 1);
    CHECK(ex.highest[0].token == 1);

    // Exactly at the threshold is kept.
    std::istringstream c(csv_log(rows, 1));
    log = open_log(c);
    ex = token_extremes(*log, 0.1, 2);
    CHECK(ex.highest[0].token == 9);
    CHECK(ex.highest[0].frequency == doctest::Approx(0.1));
  }

  TEST_CASE("planted extremes are recovered") {
    oracle::Gen g(93);
    std::vector<Row> rows;
    for (std::size_t i = 0; i < 3000; ++i) {
      const auto tok = static_cast<std::int32_t>(g() % 30);
      std::uint32_t count = 40 + static_cast<std::uint32_t>(g() % 20);
      if (tok == 7) count = 2 + static_cast<std::uint32_t>(g() % 3);
      if (tok == 11) count = 5 + static_cast<std::uint32_t>(g() % 3);
      if (tok == 21) count = 200 + static_cast<std::uint32_t>(g() % 3);
      if (tok == 3) count = 150 + static_cast<std::uint32_t>(g() % 3);
      rows.push_back({i / 64, static_cast<std::uint32_t>(i % 64), tok, {count}});
    }
    // A rare token with an extreme count that the filter must drop.
    rows.push_back({999, 0, 29999, {1000}});
    std::istringstream is(alog(rows, 1, 1000));
    auto log = open_log(is);
    const auto ex = token_extremes(*log, 1.0 / 1024, 2);
    REQUIRE(ex.lowest.size() == 2);
    CHECK(ex.lowest[0].token == 7);
    CHECK(ex.lowest[1].token == 11);
    CHECK(ex.highest[0].token == 21);
    CHECK(ex.highest[1].token == 3);
  }

  TEST_CASE("correlate") {
    const std::vector<double> x{1, 2, 3, 4, 5};
    std::vector<double> neg, same;
    for (double v : x) {
      neg.push_back(-v);
      same.push_back(v);
    }
    CHECK(correlate(x, neg) == doctest::Approx(-1.0));
    CHECK(correlate(x, same) == doctest::Approx(1.0));

    oracle::Gen g(94);
    std::normal_distribution<double> nd;
    std::vector<double> a, b;
    for (int i = 0; i < 50; ++i) {
      a.push_back(nd(g));
      b.push_back(0.3 * a.back() + nd(g));
    }
    double ma = 0, mb = 0;
    for (int i = 0; i < 50; ++i) {
      ma += a[i] / 50;
      mb += b[i] / 50;
    }
    double num = 0, da = 0, db = 0;
    for (int i = 0; i < 50; ++i) {
      num += (a[i] - ma) * (b[i] - mb);
      da += (a[i] - ma) * (a[i] - ma);
      db += (b[i] - mb) * (b[i] - mb);
    }
    CHECK(correlate(a, b) == doctest::Approx(num / std::sqrt(da * db)).epsilon(1e-12));

    CHECK(code_of([] { correlate({1, 1, 1}, {1, 2, 3}); }) == ErrorCode::InvalidArgument);
    CHECK(code_of([] { correlate({1}, {2}); }) == ErrorCode::InvalidArgument);
    CHECK(code_of([] { correlate({1, 2}, {2, 3, 4}); }) == ErrorCode::DimensionMismatch);
  }

  TEST_CASE("activity bitmaps give dead fractions") {
    std::ostringstream os;
    AlogWriter w(os, 1, 10, true);
    ActivationRecord rec;
    rec.counts = {2};
    rec.activity = {{0b00000011, 0}};
    w.write(rec);
    rec.pos = 1;
    rec.activity = {{0b00000100, 0b10}};
    w.write(rec);
    std::istringstream is(os.str());
    auto log = open_log(is);
    const auto s = layer_stats(*log);
    REQUIRE(s[0].dead_frac.has_value());
    CHECK(*s[0].dead_frac == doctest::Approx(0.6));
  }

  TEST_CASE("merged shards equal the whole log") {
    oracle::Gen g(95);
    const auto rows = random_rows(g, 300, 2, 40);
    const std::vector<Row> first(rows.begin(), rows.begin() + 120);
    const std::vector<Row> second(rows.begin() + 120, rows.end());
    LayerAccumulator la, lb;
    PositionAccumulator pa, pb;
    TokenAccumulator ta, tb;
    for (auto [part, lacc, pacc, tacc] : {std::tuple{&first, &la, &pa, &ta}, std::tuple{&second, &lb, &pb, &tb}}) {
      std::istringstream is(alog(*part, 2, 40));
      auto log = open_log(is);
      ActivationRecord rec;
      while (log->next(rec)) {
        lacc->add(log->header(), rec);
        pacc->add(rec);
        tacc->add(rec);
      }
    }
    la.merge(lb);
    pa.merge(pb);
    ta.merge(tb);

    std::istringstream whole(alog(rows, 2, 40));
    auto log = open_log(whole);
    const auto all = layer_stats(*log);
    const auto merged = la.result();
    for (std::size_t l = 0; l < 2; ++l) {
      CHECK(merged[l].mean_nnz == all[l].mean_nnz);
      CHECK(merged[l].max_nnz == all[l].max_nnz);
    }
    std::istringstream whole2(alog(rows, 2, 40));
    log = open_log(whole2);
    const auto pos_all = position_stats(*log);
    const auto pos_merged = pa.result();
    REQUIRE(pos_all.size() == pos_merged.size());
    for (std::size_t i = 0; i < pos_all.size(); ++i) CHECK(pos_all[i].mean_nnz == pos_merged[i].mean_nnz);
    std::istringstream whole3(alog(rows, 2, 40));
    log = open_log(whole3);
    const auto tok_all = token_extremes(*log, 0.0, 5);
    const auto tok_merged = ta.result(0.0, 5);
    for (std::size_t i = 0; i < 5; ++i) CHECK(tok_all.lowest[i].token == tok_merged.lowest[i].token);
  }

  TEST_CASE("malformed logs") {
    std::istringstream bad_header("seq,pos,nnz_layer_0\n1,2,3\n");
    CHECK(code_of([&] { open_log(bad_header); }) == ErrorCode::Format);

    std::istringstream no_pos("seq,pos,token,nnz_layer_0\n1,,3,4\n");
    auto log = open_log(no_pos);
    ActivationRecord rec;
    CHECK(code_of([&] { log->next(rec); }) == ErrorCode::Validation);

    std::istringstream junk("seq,pos,token,nnz_layer_0\n1,2,x,4\n");
    log = open_log(junk);
    CHECK(code_of([&] { log->next(rec); }) == ErrorCode::Format);

    auto bytes = alog({{0, 0, 1, {3}}}, 1, 8);
    std::istringstream truncated(bytes.substr(0, bytes.size() - 2));
    log = open_log(truncated);
    CHECK(code_of([&] { log->next(rec); }) == ErrorCode::Format);

    std::istringstream over(alog({{0, 0, 1, {3}}}, 1, 8).replace(14 + 16, 4, std::string("\x09\0\0\0", 4)));
    log = open_log(over);
    CHECK(code_of([&] { log->next(rec); }) == ErrorCode::Validation);

    std::istringstream version(std::string("ALOG\x07", 5));
    CHECK(code_of([&] { open_log(version); }) == ErrorCode::Format);
    CHECK(code_of([] { open_log(std::string("/nonexistent/log.alog")); }) == ErrorCode::Io);
  }
}
