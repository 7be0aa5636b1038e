#include <catch2/catch_amalgamated.hpp>

#include "mtsc/dataset.hpp"
#include "support/test_util.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <unistd.h>

using namespace mtsc;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("mtsc_ds_" + std::to_string(RngStream(uint64_t(::getpid())).next_u64() % 1000000));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

Matrix ramp_matrix(size_t rows, size_t cols) {
  Matrix m(rows, cols);
  for (size_t t = 0; t < rows; ++t)
    for (size_t c = 0; c < cols; ++c) m.at(t, c) = float(t) + float(c) * 0.001f;
  return m;
}

/// Writes a small valid dataset and returns its manifest entries.
std::vector<ManifestEntry> write_fixture(const fs::path& dir, size_t flights, size_t rows = 40) {
  std::vector<ManifestEntry> entries;
  RngStream rng(7);
  for (size_t i = 0; i < flights; ++i) {
    Matrix m(rows, kChannelCount);
    for (auto& v : m.data) v = float(rng.uniform(-1, 1));
    std::string file = "f" + std::to_string(i) + ".csv";
    write_flight_csv((dir / file).string(), m, default_channel_names());
    ManifestEntry e;
    e.flight_id = "f" + std::to_string(i);
    e.tail_id = "N" + std::to_string(100 + i / 2);
    e.cluster = i % 2 ? Cluster::c37 : Cluster::c28;
    e.label = int(i % 2);
    e.day_offset = i % 2 ? -1 : 1;
    e.duration_seconds = int64_t(rows);
    e.path = file;
    entries.push_back(e);
  }
  write_manifest_csv(dir.string(), entries);
  return entries;
}

}  // namespace

TEST_CASE("eligibility filter boundaries") {
  CHECK_FALSE(check_eligibility(1799, -1));  // under 30 minutes
  CHECK(check_eligibility(1800, -1));
  CHECK_FALSE(check_eligibility(3600, 0));  // same-day flights excluded
  CHECK(check_eligibility(3600, -2));
  CHECK(check_eligibility(3600, 2));
  CHECK_FALSE(check_eligibility(3600, 3));  // outside the 2-day window
  CHECK_FALSE(check_eligibility(3600, -3));
}

TEST_CASE("window keeps the last L rows") {
  Matrix m = ramp_matrix(5000, 3);
  Windowed w = window(m, 4096);
  CHECK(w.pad_count == 0);
  REQUIRE(w.values.rows == 4096);
  CHECK(w.values.at(0, 0) == 904.0f);  // rows 904..4999 retained
  CHECK(w.values.at(4095, 0) == 4999.0f);
}

TEST_CASE("window is the identity at exact length") {
  Matrix m = ramp_matrix(4096, 2);
  Windowed w = window(m, 4096);
  CHECK(w.pad_count == 0);
  CHECK(w.values == m);
}

TEST_CASE("window left-pads short series with zeros") {
  Matrix m = ramp_matrix(100, 2);
  for (auto& v : m.data) v += 1.0f;  // make all data rows nonzero
  Windowed w = window(m, 4096);
  CHECK(w.pad_count == 3996);
  for (size_t t = 0; t < 3996; ++t)
    for (size_t c = 0; c < 2; ++c) REQUIRE(w.values.at(t, c) == 0.0f);
  for (size_t t = 0; t < 100; ++t)
    for (size_t c = 0; c < 2; ++c) REQUIRE(w.values.at(3996 + t, c) == m.at(t, c));
}

TEST_CASE("window is idempotent") {
  RngStream rng(3);
  Matrix m(300, 4);
  for (auto& v : m.data) v = float(rng.uniform(-2, 2));
  Windowed once = window(m, 256);
  Windowed twice = window(once.values, 256);
  CHECK(once.values == twice.values);
  CHECK(twice.pad_count == 0);

  Windowed padded = window(m, 512);
  Windowed padded2 = window(padded.values, 512);
  CHECK(padded.values == padded2.values);
}

TEST_CASE("fit_normalization matches a brute-force pass") {
  // Single channel {1,2,3}: mean 2, population std sqrt(2/3).
  Matrix m(3, 1);
  m.at(0, 0) = 1;
  m.at(1, 0) = 2;
  m.at(2, 0) = 3;
  auto stats = fit_normalization({{m, 0}});
  CHECK(stats.mean[0] == Catch::Approx(2.0));
  CHECK(stats.std_dev[0] == Catch::Approx(std::sqrt(2.0 / 3.0)).epsilon(1e-12));

  // Brute-force oracle over several windowed flights with padding excluded.
  RngStream rng(11);
  std::vector<Windowed> flights;
  std::vector<std::vector<double>> per_channel(3);
  for (int f = 0; f < 4; ++f) {
    size_t rows = 20 + size_t(rng.uniform_int(0, 10));
    size_t pad = size_t(rng.uniform_int(0, 5));
    Matrix mm(rows, 3);
    for (size_t t = 0; t < rows; ++t)
      for (size_t c = 0; c < 3; ++c) {
        float v = t < pad ? 0.0f : float(rng.uniform(-5, 5));
        mm.at(t, c) = v;
        if (t >= pad) per_channel[c].push_back(v);
      }
    flights.push_back({mm, pad});
  }
  auto fitted = fit_normalization(flights);
  for (size_t c = 0; c < 3; ++c) {
    double sum = 0;
    for (double v : per_channel[c]) sum += v;
    double mean = sum / double(per_channel[c].size());
    double var = 0;
    for (double v : per_channel[c]) var += (v - mean) * (v - mean);
    var /= double(per_channel[c].size());
    CHECK(fitted.mean[c] == Catch::Approx(mean).margin(1e-9));
    CHECK(fitted.std_dev[c] == Catch::Approx(std::sqrt(var)).margin(1e-9));
  }
}

TEST_CASE("constant channel clamps std and normalizes to zero") {
  Matrix m(10, 1, 3.5f);
  auto stats = fit_normalization({{m, 0}});
  CHECK(stats.std_dev[0] == NormalizationStats::kEpsilon);
  Matrix out = apply_normalization(m, stats);
  for (float v : out.data) CHECK(v == 0.0f);
}

TEST_CASE("already standardized channel is left unchanged") {
  Matrix m(2, 1);
  m.at(0, 0) = -1.0f;
  m.at(1, 0) = 1.0f;  // mean 0, population std 1
  auto stats = fit_normalization({{m, 0}});
  Matrix out = apply_normalization(m, stats);
  CHECK(std::abs(out.at(0, 0) - -1.0f) < 1e-9);
  CHECK(std::abs(out.at(1, 0) - 1.0f) < 1e-9);
}

TEST_CASE("normalization round trip recovers the input") {
  RngStream rng(13);
  Mat<double> m(50, 4);
  for (auto& v : m.data) v = rng.uniform(-100, 100);
  NormalizationStats stats;
  for (size_t c = 0; c < 4; ++c) {
    stats.mean.push_back(rng.uniform(-10, 10));
    stats.std_dev.push_back(rng.uniform(0.5, 20));
  }
  Mat<double> round = invert_normalization(apply_normalization(m, stats), stats);
  for (size_t i = 0; i < m.data.size(); ++i)
    REQUIRE(std::abs(round.data[i] - m.data[i]) < 1e-9);
}

TEST_CASE("identity normalization") {
  Matrix m = ramp_matrix(5, 2);
  NormalizationStats stats;
  stats.mean = {0, 0};
  stats.std_dev = {1, 1};
  CHECK(apply_normalization(m, stats) == m);

  NormalizationStats s2;
  s2.mean = {3};
  s2.std_dev = {2};
  Matrix one(1, 1, 5.0f);
  CHECK(apply_normalization(one, s2).at(0, 0) == 1.0f);
}

TEST_CASE("pad mask keeps padded rows at zero") {
  Matrix m(4, 1);
  m.at(0, 0) = 0;
  m.at(1, 0) = 0;
  m.at(2, 0) = 4;
  m.at(3, 0) = 6;
  NormalizationStats stats;
  stats.mean = {5};
  stats.std_dev = {1};
  Matrix unmasked = apply_normalization(m, stats);
  CHECK(unmasked.at(0, 0) == -5.0f);  // padded rows normalized like data by default
  Matrix masked = apply_normalization(m, stats, std::optional<size_t>(2));
  CHECK(masked.at(0, 0) == 0.0f);
  CHECK(masked.at(1, 0) == 0.0f);
  CHECK(masked.at(2, 0) == -1.0f);
}

TEST_CASE("fit_normalization rejects empty input") {
  CHECK_THROWS_AS(fit_normalization({}), Error);
}

TEST_CASE("make_folds balances tails across folds") {
  DatasetManifest manifest;
  for (int i = 0; i < 10; ++i) {
    ManifestEntry e;
    e.flight_id = "f" + std::to_string(i);
    e.tail_id = "t" + std::to_string(i);
    e.duration_seconds = 2000;
    e.day_offset = 1;
    e.path = "x.csv";
    manifest.entries.push_back(e);
  }
  FoldPlan plan = make_folds(manifest, 5, 42);
  std::vector<std::set<std::string>> tails_per_fold(5);
  for (const auto& e : manifest.entries)
    tails_per_fold[plan.fold_of(e.flight_id)].insert(e.tail_id);
  for (const auto& fold_tails : tails_per_fold) CHECK(fold_tails.size() == 2);
}

TEST_CASE("fold tail sets are disjoint for any plan") {
  RngStream rng(17);
  DatasetManifest manifest;
  for (int i = 0; i < 60; ++i) {
    ManifestEntry e;
    e.flight_id = "f" + std::to_string(i);
    e.tail_id = "t" + std::to_string(rng.uniform_int(0, 11));
    e.path = "x.csv";
    manifest.entries.push_back(e);
  }
  for (uint64_t seed : {1, 2, 3}) {
    FoldPlan plan = make_folds(manifest, 5, seed);
    for (size_t f = 0; f < 5; ++f) {
      std::set<std::string> val_tails, train_tails;
      for (const auto& e : manifest.entries) {
        if (plan.fold_of(e.flight_id) == f)
          val_tails.insert(e.tail_id);
        else
          train_tails.insert(e.tail_id);
      }
      for (const auto& t : val_tails) REQUIRE(train_tails.count(t) == 0);
    }
  }
}

TEST_CASE("make_folds rejects fewer tails than folds") {
  DatasetManifest manifest;
  for (int i = 0; i < 9; ++i) {
    ManifestEntry e;
    e.flight_id = "f" + std::to_string(i);
    e.tail_id = "t" + std::to_string(i % 3);
    e.path = "x.csv";
    manifest.entries.push_back(e);
  }
  CHECK_THROWS_AS(make_folds(manifest, 5, 1), Error);
}

TEST_CASE("make_folds is deterministic given seed") {
  DatasetManifest manifest;
  for (int i = 0; i < 30; ++i) {
    ManifestEntry e;
    e.flight_id = "f" + std::to_string(i);
    e.tail_id = "t" + std::to_string(i % 8);
    e.path = "x.csv";
    manifest.entries.push_back(e);
  }
  FoldPlan a = make_folds(manifest, 5, 99);
  FoldPlan b = make_folds(manifest, 5, 99);
  FoldPlan c = make_folds(manifest, 5, 100);
  CHECK(a.assignment == b.assignment);
  CHECK(a.assignment != c.assignment);
}

TEST_CASE("fold plan csv round trip") {
  TempDir tmp;
  FoldPlan plan;
  plan.fold_count = 3;
  plan.assignment = {{"a", 0}, {"b", 2}, {"c", 1}};
  auto path = (tmp.path / "folds.csv").string();
  plan.save(path);
  FoldPlan loaded = FoldPlan::load(path, 3);
  CHECK(loaded.assignment == plan.assignment);
}

TEST_CASE("ingest validates and counts a small dataset") {
  TempDir tmp;
  write_fixture(tmp.path, 4);
  DatasetManifest manifest = ingest(tmp.path.string());
  REQUIRE(manifest.entries.size() == 4);
  CHECK(manifest.count(Cluster::c28, 0) == 2);
  CHECK(manifest.count(Cluster::c37, 1) == 2);
  CHECK(manifest.count(Cluster::c28, 1) == 0);

  FlightSeries fsr = load_flight(manifest, manifest.entries[0]);
  CHECK(fsr.values.rows == 40);
  CHECK(fsr.channel_names == default_channel_names());
}

TEST_CASE("ingest is order-independent") {
  TempDir tmp;
  auto entries = write_fixture(tmp.path, 6);
  DatasetManifest first = ingest(tmp.path.string());
  std::reverse(entries.begin(), entries.end());
  write_manifest_csv(tmp.path.string(), entries);
  DatasetManifest second = ingest(tmp.path.string());
  REQUIRE(first.entries.size() == second.entries.size());
  for (size_t i = 0; i < first.entries.size(); ++i)
    CHECK(first.entries[i].flight_id == second.entries[i].flight_id);
}

TEST_CASE("ingest rejects wrong channel count naming the file") {
  TempDir tmp;
  auto entries = write_fixture(tmp.path, 2);
  // Overwrite one file with 22 channels.
  Matrix bad(10, 22);
  std::vector<std::string> names(default_channel_names().begin(),
                                 default_channel_names().end() - 1);
  write_flight_csv((tmp.path / entries[0].path).string(), bad, names);
  entries[0].duration_seconds = 10;
  write_manifest_csv(tmp.path.string(), entries);
  try {
    ingest(tmp.path.string());
    FAIL("expected ingestion error");
  } catch (const Error& e) {
    std::string msg = e.what();
    CHECK(msg.find(entries[0].path) != std::string::npos);
    CHECK(msg.find("23") != std::string::npos);
  }
}

TEST_CASE("ingest rejects duplicate flight ids") {
  TempDir tmp;
  auto entries = write_fixture(tmp.path, 2);
  entries[1].flight_id = entries[0].flight_id;
  write_manifest_csv(tmp.path.string(), entries);
  CHECK_THROWS_WITH(ingest(tmp.path.string()),
                    Catch::Matchers::ContainsSubstring("duplicate flight_id"));
}

TEST_CASE("ingest rejects non-numeric cells unless imputation is on") {
  TempDir tmp;
  auto entries = write_fixture(tmp.path, 1, 5);
  // Corrupt one cell in the payload (not the first data row, so forward fill
  // has something to fill from).
  auto path = tmp.path / entries[0].path;
  auto rows = csv::read_rows(path.string());
  rows[3][2] = "NA";
  {
    std::ofstream out(path);
    for (const auto& r : rows) {
      for (size_t i = 0; i < r.size(); ++i) out << (i ? "," : "") << r[i];
      out << "\n";
    }
  }
  CHECK_THROWS_WITH(ingest(tmp.path.string()),
                    Catch::Matchers::ContainsSubstring("non-numeric"));

  IngestOptions opts;
  opts.impute_missing = true;
  DatasetManifest manifest = ingest(tmp.path.string(), opts);
  FlightSeries fsr = load_flight(manifest, manifest.entries[0], true);
  CHECK(fsr.values.at(2, 2) == fsr.values.at(1, 2));  // forward filled
}

TEST_CASE("ingest rejects empty flight files") {
  TempDir tmp;
  auto entries = write_fixture(tmp.path, 1, 5);
  std::ofstream((tmp.path / entries[0].path).string(), std::ios::trunc);
  CHECK_THROWS_WITH(ingest(tmp.path.string()), Catch::Matchers::ContainsSubstring("empty"));
}

TEST_CASE("ingest rejects duration mismatch") {
  TempDir tmp;
  auto entries = write_fixture(tmp.path, 1, 5);
  entries[0].duration_seconds = 99;
  write_manifest_csv(tmp.path.string(), entries);
  CHECK_THROWS_WITH(ingest(tmp.path.string()), Catch::Matchers::ContainsSubstring("rows"));
}

TEST_CASE("synth_longrange is balanced and respects the gap") {
  SynthConfig cfg;
  cfg.count = 100;
  cfg.length = 1024;
  cfg.gap = 512;
  cfg.seed = 5;
  auto flights = synth_longrange(cfg);
  REQUIRE(flights.size() == 100);
  size_t positives = 0;
  for (const auto& f : flights) positives += size_t(f.label == 1);
  CHECK(positives == 50);

  // Cells whose magnitude exceeds half the pulse amplitude are marker cells
  // with overwhelming probability; their span bounds the separation below.
  for (const auto& f : flights) {
    std::vector<size_t> marked;
    for (size_t t = 0; t < f.values.rows; ++t)
      if (std::abs(f.values.at(t, 0)) > cfg.pulse_amplitude / 2) marked.push_back(t);
    REQUIRE(marked.size() >= 2 * cfg.pulse_width - 2);
    size_t span = marked.back() - marked.front();
    REQUIRE(span + 1 >= cfg.gap);
  }
}

TEST_CASE("synth_longrange markers cannot fit in a 128-step slice") {
  // With gap = T/2 = 512, enumerate every 128-step slice position and count
  // those containing both markers; the separation makes it impossible.
  SynthConfig cfg;
  cfg.count = 20;
  cfg.length = 1024;
  cfg.gap = 512;
  cfg.seed = 6;
  auto flights = synth_longrange(cfg);
  size_t containing = 0, total = 0;
  for (const auto& f : flights) {
    std::vector<size_t> marked;
    for (size_t t = 0; t < f.values.rows; ++t)
      if (std::abs(f.values.at(t, 0)) > cfg.pulse_amplitude / 2) marked.push_back(t);
    size_t first = marked.front(), last = marked.back();
    for (size_t s = 0; s + 128 <= cfg.length; ++s) {
      ++total;
      if (first >= s && last < s + 128) ++containing;
    }
  }
  CHECK(double(containing) / double(total) < 0.01);
}

TEST_CASE("synth_longrange is deterministic and validates geometry") {
  SynthConfig cfg;
  cfg.count = 4;
  cfg.length = 600;
  cfg.gap = 512;
  cfg.seed = 7;
  auto a = synth_longrange(cfg);
  auto b = synth_longrange(cfg);
  for (size_t i = 0; i < a.size(); ++i) REQUIRE(a[i].values == b[i].values);

  SynthConfig bad = cfg;
  bad.length = 500;  // < gap + 64
  CHECK_THROWS_AS(synth_longrange(bad), Error);
  SynthConfig odd = cfg;
  odd.count = 5;
  CHECK_THROWS_AS(synth_longrange(odd), Error);
}

TEST_CASE("synth dataset writes a loadable directory") {
  TempDir tmp;
  SynthConfig cfg;
  cfg.count = 4;
  cfg.length = 600;
  cfg.gap = 512;
  write_synth_dataset(tmp.path.string(), synth_longrange(cfg));
  DatasetManifest manifest = ingest(tmp.path.string());
  CHECK(manifest.entries.size() == 4);
  FlightSeries fsr = load_flight(manifest, manifest.entries[0]);
  CHECK(fsr.values.rows == 600);
}

TEST_CASE("filter_eligible applies both criteria") {
  DatasetManifest manifest;
  auto add = [&](const std::string& id, int64_t dur, int off) {
    ManifestEntry e;
    e.flight_id = id;
    e.tail_id = "t";
    e.duration_seconds = dur;
    e.day_offset = off;
    e.path = "x.csv";
    manifest.entries.push_back(e);
  };
  add("keep", 2000, -1);
  add("short", 1700, -1);
  add("sameday", 2000, 0);
  add("far", 2000, 5);
  DatasetManifest eligible = filter_eligible(manifest);
  REQUIRE(eligible.entries.size() == 1);
  CHECK(eligible.entries[0].flight_id == "keep");
}
