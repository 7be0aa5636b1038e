#include <catch2/catch_amalgamated.hpp>

#include "mtsc/core.hpp"
#include "mtsc/csv.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

using namespace mtsc;

TEST_CASE("shape helpers") {
  CHECK(numel({2, 3, 4}) == 24);
  CHECK(numel({}) == 1);
  CHECK(shape_str({2, 3}) == "[2x3]");
}

TEST_CASE("rng streams are deterministic and independent") {
  RngStream a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  RngStream c = RngStream::derive(7, 1, 2);
  RngStream d = RngStream::derive(7, 1, 2);
  RngStream e = RngStream::derive(7, 1, 3);
  CHECK(c.next_u64() == d.next_u64());
  CHECK(c.next_u64() != e.next_u64());
}

TEST_CASE("uniform_int covers its inclusive range") {
  RngStream rng(1);
  bool saw_lo = false, saw_hi = false;
  for (int i = 0; i < 20000; ++i) {
    int64_t v = rng.uniform_int(3, 7);
    REQUIRE(v >= 3);
    REQUIRE(v <= 7);
    saw_lo |= v == 3;
    saw_hi |= v == 7;
  }
  CHECK(saw_lo);
  CHECK(saw_hi);
}

TEST_CASE("uniform stays in [0,1) and bernoulli tracks p") {
  RngStream rng(9);
  int hits = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    double u = rng.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    if (rng.bernoulli(0.3)) ++hits;
  }
  CHECK(std::abs(hits / double(n) - 0.3) < 0.01);
}

TEST_CASE("normal draws have roughly unit variance") {
  RngStream rng(5);
  double sum = 0.0, sq = 0.0;
  const int n = 50000;
  for (int i = 0; i < n; ++i) {
    double v = rng.normal();
    sum += v;
    sq += v * v;
  }
  double mean = sum / n;
  double var = sq / n - mean * mean;
  CHECK(std::abs(mean) < 0.02);
  CHECK(std::abs(var - 1.0) < 0.03);
}

TEST_CASE("csv split handles trailing carriage returns and empty fields") {
  auto fields = csv::split_line("a,b,,d\r");
  REQUIRE(fields.size() == 4);
  CHECK(fields[2].empty());
  CHECK(fields[3] == "d");
}

TEST_CASE("csv number parsing rejects junk") {
  double v;
  CHECK(csv::parse_number("3.5", v));
  CHECK(v == 3.5);
  CHECK(csv::parse_number(" -2e-3 ", v));
  CHECK(csv::parse_number("+7", v));
  CHECK_FALSE(csv::parse_number("abc", v));
  CHECK_FALSE(csv::parse_number("1.2.3", v));
  CHECK_FALSE(csv::parse_number("", v));
  int64_t i;
  CHECK(csv::parse_integer("-4", i));
  CHECK(i == -4);
  CHECK_FALSE(csv::parse_integer("4.5", i));
}

TEST_CASE("csv writer round trip") {
  auto path = std::filesystem::temp_directory_path() / "mtsc_test_core.csv";
  {
    csv::Writer w(path.string());
    w.row("id", "value");
    w.row("f1", 1.25);
  }
  auto rows = csv::read_rows(path.string());
  REQUIRE(rows.size() == 2);
  CHECK(rows[0][0] == "id");
  CHECK(rows[1][1] == "1.25");
  std::filesystem::remove(path);
}
