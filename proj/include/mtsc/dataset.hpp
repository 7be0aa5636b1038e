#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mtsc/core.hpp"
#include "mtsc/csv.hpp"

namespace mtsc {

constexpr size_t kChannelCount = 23;
constexpr size_t kDefaultWindow = 4096;
constexpr int64_t kMinDurationSeconds = 1800;  // flights under 30 minutes excluded
constexpr int kMaxDayOffset = 2;

inline const std::vector<std::string>& default_channel_names() {
  static const std::vector<std::string> names = {
      "volt1",   "volt2",   "amp1",    "amp2",    "FQtyL",   "FQtyR",
      "E1 FFlow", "E1 OilT", "E1 OilP", "E1 RPM",  "E1 CHT1", "E1 CHT2",
      "E1 CHT3", "E1 CHT4", "E1 EGT1", "E1 EGT2", "E1 EGT3", "E1 EGT4",
      "OAT",     "IAS",     "VSpd",    "NormAc",  "AltMSL"};
  return names;
}

enum class Cluster { c28, c37 };

inline std::string cluster_name(Cluster c) { return c == Cluster::c28 ? "C28" : "C37"; }

inline Cluster parse_cluster(const std::string& s) {
  if (s == "C28" || s == "c28") return Cluster::c28;
  if (s == "C37" || s == "c37") return Cluster::c37;
  throw Error(format_msg("unknown cluster '", s, "' (expected C28 or C37)"));
}

/// One flight: a T×23 per-second sensor matrix plus labeling metadata.
struct FlightSeries {
  std::string flight_id;
  std::string tail_id;
  Cluster cluster = Cluster::c28;
  int label = 0;       // 1 = pre-maintenance, 0 = post-maintenance
  int day_offset = 0;  // days relative to the maintenance date, never 0 when eligible
  Matrix values;       // T rows × 23 channels
  std::vector<std::string> channel_names;

  void validate() const {
    check(values.cols == kChannelCount, "flight ", flight_id, ": expected ", kChannelCount,
          " channels, got ", values.cols);
    check(channel_names.size() == kChannelCount, "flight ", flight_id, ": expected ",
          kChannelCount, " channel names");
    check(values.rows >= 1, "flight ", flight_id, ": empty series");
    check(label == 0 || label == 1, "flight ", flight_id, ": label must be 0 or 1");
    std::vector<std::string> sorted = channel_names;
    std::sort(sorted.begin(), sorted.end());
    check(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end(), "flight ", flight_id,
          ": duplicate channel names");
    for (float v : values.data)
      check(std::isfinite(v), "flight ", flight_id, ": non-finite value after ingestion");
  }
};

struct ManifestEntry {
  std::string flight_id;
  std::string tail_id;
  Cluster cluster = Cluster::c28;
  int label = 0;
  int day_offset = 0;
  int64_t duration_seconds = 0;
  std::string path;  // relative to the manifest directory
};

struct DatasetManifest {
  std::string root;
  std::vector<ManifestEntry> entries;  // canonically sorted by flight_id

  size_t count(Cluster c, int label) const {
    size_t n = 0;
    for (const auto& e : entries)
      if (e.cluster == c && e.label == label) ++n;
    return n;
  }

  const ManifestEntry& find(const std::string& flight_id) const {
    for (const auto& e : entries)
      if (e.flight_id == flight_id) return e;
    throw Error(format_msg("flight not in manifest: ", flight_id));
  }
};

/// True iff a flight participates in the modeling dataset: at least 30
/// minutes long, not on the maintenance day itself, within 2 days of it.
inline bool check_eligibility(int64_t duration_seconds, int day_offset) {
  if (duration_seconds < kMinDurationSeconds) return false;
  if (day_offset == 0) return false;
  return std::abs(day_offset) <= kMaxDayOffset;
}

inline DatasetManifest filter_eligible(const DatasetManifest& manifest) {
  DatasetManifest out;
  out.root = manifest.root;
  for (const auto& e : manifest.entries)
    if (check_eligibility(e.duration_seconds, e.day_offset)) out.entries.push_back(e);
  return out;
}

// ---------------------------------------------------------------------------
// Per-flight file I/O
// ---------------------------------------------------------------------------

struct IngestOptions {
  bool validate_payloads = true;  // read and fully validate every flight file
  bool impute_missing = false;    // forward-fill non-numeric cells instead of rejecting
};

/// Loads one flight CSV (header of 23 channel names, one row per second).
inline FlightSeries load_flight(const DatasetManifest& manifest, const ManifestEntry& entry,
                                bool impute_missing = false) {
  std::string path = (std::filesystem::path(manifest.root) / entry.path).string();
  auto rows = csv::read_rows(path);
  check(!rows.empty(), "flight file is empty: ", path);
  check(rows[0].size() == kChannelCount, "flight file ", path, ": expected ", kChannelCount,
        " channels, got ", rows[0].size());
  check(rows.size() >= 2, "flight file ", path, ": no data rows");

  FlightSeries fs;
  fs.flight_id = entry.flight_id;
  fs.tail_id = entry.tail_id;
  fs.cluster = entry.cluster;
  fs.label = entry.label;
  fs.day_offset = entry.day_offset;
  fs.channel_names.assign(rows[0].begin(), rows[0].end());
  size_t T = rows.size() - 1;
  fs.values = Matrix(T, kChannelCount);
  for (size_t t = 0; t < T; ++t) {
    const auto& row = rows[t + 1];
    check(row.size() == kChannelCount, "flight file ", path, ": row ", t + 1, " has ", row.size(),
          " fields, expected ", kChannelCount);
    for (size_t c = 0; c < kChannelCount; ++c) {
      double v;
      if (csv::parse_number(row[c], v) && std::isfinite(v)) {
        fs.values.at(t, c) = float(v);
      } else if (impute_missing && t > 0) {
        fs.values.at(t, c) = fs.values.at(t - 1, c);  // forward fill
      } else {
        throw Error(format_msg("flight file ", path, ": non-numeric cell at row ", t + 1,
                               ", column ", c + 1, " ('", row[c], "')"));
      }
    }
  }
  fs.validate();
  return fs;
}

/// Reads and validates <root>/manifest.csv. Entries are canonically sorted by
/// flight_id, so manifests built from any traversal order compare equal.
inline DatasetManifest ingest(const std::string& root, const IngestOptions& options = {}) {
  std::string index_path = (std::filesystem::path(root) / "manifest.csv").string();
  auto rows = csv::read_rows(index_path);
  check(!rows.empty(), "manifest is empty: ", index_path);
  const std::vector<std::string> header = {"flight_id", "tail_id",        "cluster", "label",
                                           "day_offset", "duration_seconds", "path"};
  check(rows[0] == header, "manifest ", index_path, ": unexpected header");

  DatasetManifest manifest;
  manifest.root = root;
  for (size_t i = 1; i < rows.size(); ++i) {
    const auto& row = rows[i];
    check(row.size() == header.size(), "manifest row ", i, ": expected ", header.size(),
          " fields, got ", row.size());
    ManifestEntry e;
    e.flight_id = row[0];
    e.tail_id = row[1];
    e.cluster = parse_cluster(row[2]);
    int64_t v;
    check(csv::parse_integer(row[3], v) && (v == 0 || v == 1), "manifest row ", i,
          ": label must be 0 or 1");
    e.label = int(v);
    check(csv::parse_integer(row[4], v), "manifest row ", i, ": bad day_offset");
    e.day_offset = int(v);
    check(csv::parse_integer(row[5], v) && v >= 0, "manifest row ", i, ": bad duration_seconds");
    e.duration_seconds = v;
    e.path = row[6];
    check(!e.flight_id.empty() && !e.tail_id.empty() && !e.path.empty(), "manifest row ", i,
          ": empty field");
    manifest.entries.push_back(std::move(e));
  }

  std::sort(manifest.entries.begin(), manifest.entries.end(),
            [](const ManifestEntry& a, const ManifestEntry& b) { return a.flight_id < b.flight_id; });
  for (size_t i = 1; i < manifest.entries.size(); ++i)
    check(manifest.entries[i].flight_id != manifest.entries[i - 1].flight_id,
          "duplicate flight_id in manifest: ", manifest.entries[i].flight_id);

  if (options.validate_payloads) {
    for (const auto& e : manifest.entries) {
      FlightSeries fs = load_flight(manifest, e, options.impute_missing);
      check(int64_t(fs.values.rows) == e.duration_seconds, "flight ", e.flight_id, ": manifest says ",
            e.duration_seconds, " seconds but file has ", fs.values.rows, " rows");
    }
  }
  return manifest;
}

inline void write_flight_csv(const std::string& path, const Matrix& values,
                             const std::vector<std::string>& channel_names) {
  check(channel_names.size() == values.cols, "write_flight_csv: name/column mismatch");
  csv::Writer w(path);
  std::ostringstream header;
  for (size_t c = 0; c < channel_names.size(); ++c) header << (c ? "," : "") << channel_names[c];
  w.row(header.str());
  for (size_t t = 0; t < values.rows; ++t) {
    std::ostringstream line;
    line.precision(7);
    for (size_t c = 0; c < values.cols; ++c) line << (c ? "," : "") << values.at(t, c);
    w.row(line.str());
  }
}

inline void write_manifest_csv(const std::string& dir, const std::vector<ManifestEntry>& entries) {
  csv::Writer w((std::filesystem::path(dir) / "manifest.csv").string());
  w.row("flight_id", "tail_id", "cluster", "label", "day_offset", "duration_seconds", "path");
  for (const auto& e : entries)
    w.row(e.flight_id, e.tail_id, cluster_name(e.cluster), e.label, e.day_offset,
          e.duration_seconds, e.path);
}

// ---------------------------------------------------------------------------
// Windowing and normalization
// ---------------------------------------------------------------------------

struct Windowed {
  Matrix values;
  size_t pad_count = 0;
};

/// Keeps the last `target_len` rows; shorter series are left-padded with zero
/// rows so the end of every flight lines up at the end of the window.
inline Windowed window(const Matrix& values, size_t target_len = kDefaultWindow) {
  check(target_len >= 1, "window: target length must be >= 1");
  Windowed out;
  out.values = Matrix(target_len, values.cols);
  if (values.rows >= target_len) {
    size_t start = values.rows - target_len;
    std::copy(values.data.begin() + start * values.cols, values.data.end(),
              out.values.data.begin());
    out.pad_count = 0;
  } else {
    out.pad_count = target_len - values.rows;
    std::copy(values.data.begin(), values.data.end(),
              out.values.data.begin() + out.pad_count * values.cols);
  }
  return out;
}

struct NormalizationStats {
  std::vector<double> mean;
  std::vector<double> std_dev;  // clamped at epsilon
  static constexpr double kEpsilon = 1e-6;
};

/// Streaming accumulator so training folds can be fitted without holding all
/// flights in memory. Padded rows are excluded from the statistics.
class NormalizationAccumulator {
public:
  explicit NormalizationAccumulator(size_t channels) : sum_(channels, 0.0), sumsq_(channels, 0.0) {}

  void add(const Matrix& windowed, size_t pad_count) {
    check(windowed.cols == sum_.size(), "normalization: channel mismatch");
    check(pad_count <= windowed.rows, "normalization: pad_count exceeds rows");
    for (size_t t = pad_count; t < windowed.rows; ++t)
      for (size_t c = 0; c < windowed.cols; ++c) {
        double v = windowed.at(t, c);
        sum_[c] += v;
        sumsq_[c] += v * v;
      }
    count_ += windowed.rows - pad_count;
  }

  NormalizationStats finalize() const {
    check(count_ > 0, "normalization: no rows accumulated");
    NormalizationStats stats;
    stats.mean.resize(sum_.size());
    stats.std_dev.resize(sum_.size());
    for (size_t c = 0; c < sum_.size(); ++c) {
      double mean = sum_[c] / double(count_);
      double var = std::max(0.0, sumsq_[c] / double(count_) - mean * mean);  // population
      stats.mean[c] = mean;
      stats.std_dev[c] = std::max(std::sqrt(var), NormalizationStats::kEpsilon);
    }
    return stats;
  }

private:
  std::vector<double> sum_, sumsq_;
  size_t count_ = 0;
};

inline NormalizationStats fit_normalization(const std::vector<Windowed>& training) {
  check(!training.empty(), "fit_normalization: empty input");
  NormalizationAccumulator acc(training[0].values.cols);
  for (const auto& w : training) acc.add(w.values, w.pad_count);
  return acc.finalize();
}

/// z-scores every row; rows [0, pad_rows) are left untouched when a pad mask
/// is requested (they stay zero by construction of window()).
template <typename T>
Mat<T> apply_normalization(const Mat<T>& values, const NormalizationStats& stats,
                           std::optional<size_t> pad_rows = std::nullopt) {
  check(values.cols == stats.mean.size(), "apply_normalization: channel mismatch (", values.cols,
        " vs ", stats.mean.size(), ")");
  Mat<T> out = values;
  size_t first = pad_rows.value_or(0);
  for (size_t t = first; t < out.rows; ++t)
    for (size_t c = 0; c < out.cols; ++c)
      out.at(t, c) = T((double(out.at(t, c)) - stats.mean[c]) / stats.std_dev[c]);
  return out;
}

template <typename T>
Mat<T> invert_normalization(const Mat<T>& values, const NormalizationStats& stats) {
  check(values.cols == stats.mean.size(), "invert_normalization: channel mismatch");
  Mat<T> out = values;
  for (size_t t = 0; t < out.rows; ++t)
    for (size_t c = 0; c < out.cols; ++c)
      out.at(t, c) = T(double(out.at(t, c)) * stats.std_dev[c] + stats.mean[c]);
  return out;
}

// ---------------------------------------------------------------------------
// Grouped cross-validation folds
// ---------------------------------------------------------------------------

struct FoldPlan {
  size_t fold_count = 5;
  uint64_t seed = 0;
  std::map<std::string, size_t> assignment;  // flight_id -> fold

  size_t fold_of(const std::string& flight_id) const {
    auto it = assignment.find(flight_id);
    check(it != assignment.end(), "flight not in fold plan: ", flight_id);
    return it->second;
  }

  void save(const std::string& path) const {
    csv::Writer w(path);
    w.row("flight_id", "fold");
    for (const auto& [id, fold] : assignment) w.row(id, fold);
  }

  static FoldPlan load(const std::string& path, size_t fold_count) {
    auto rows = csv::read_rows(path);
    check(!rows.empty() && rows[0] == std::vector<std::string>{"flight_id", "fold"},
          "fold plan ", path, ": unexpected header");
    FoldPlan plan;
    plan.fold_count = fold_count;
    for (size_t i = 1; i < rows.size(); ++i) {
      check(rows[i].size() == 2, "fold plan row ", i, ": expected 2 fields");
      int64_t fold;
      check(csv::parse_integer(rows[i][1], fold) && fold >= 0 && size_t(fold) < fold_count,
            "fold plan row ", i, ": fold out of range");
      check(plan.assignment.emplace(rows[i][0], size_t(fold)).second,
            "fold plan: duplicate flight ", rows[i][0]);
    }
    return plan;
  }
};

/// Groups flights by tail, shuffles tails with the seeded stream, then
/// assigns each tail to the currently smallest fold by flight count. All
/// flights of a tail land in one fold, so train/validation tails never mix.
inline FoldPlan make_folds(const DatasetManifest& manifest, size_t k, uint64_t seed) {
  check(k >= 1, "make_folds: k must be >= 1");
  std::map<std::string, std::vector<const ManifestEntry*>> by_tail;
  for (const auto& e : manifest.entries) by_tail[e.tail_id].push_back(&e);
  check(by_tail.size() >= k, "make_folds: ", by_tail.size(), " distinct tails < ", k, " folds");

  std::vector<std::string> tails;
  tails.reserve(by_tail.size());
  for (const auto& [tail, _] : by_tail) tails.push_back(tail);
  RngStream rng = RngStream::derive(seed, 0xf01d5);
  for (size_t i = tails.size(); i > 1; --i)
    std::swap(tails[i - 1], tails[size_t(rng.uniform_int(0, int64_t(i) - 1))]);

  FoldPlan plan;
  plan.fold_count = k;
  plan.seed = seed;
  std::vector<size_t> fold_sizes(k, 0);
  for (const auto& tail : tails) {
    size_t target = size_t(std::min_element(fold_sizes.begin(), fold_sizes.end()) -
                           fold_sizes.begin());
    for (const ManifestEntry* e : by_tail[tail]) plan.assignment[e->flight_id] = target;
    fold_sizes[target] += by_tail[tail].size();
  }
  return plan;
}

// ---------------------------------------------------------------------------
// Synthetic long-range benchmark
// ---------------------------------------------------------------------------

struct SynthConfig {
  size_t count = 512;
  size_t length = 1024;
  size_t gap = 512;       // minimum separation between the two markers
  uint64_t seed = 0;
  size_t tail_count = 8;  // synthetic tails for grouped folds
  size_t pulse_width = 8;
  float pulse_amplitude = 6.0f;
};

/// Class-balanced 23-channel noise with two short pulses on channel 0 placed
/// at least `gap` steps apart; label 1 iff the pulse signs match. Determining
/// the label requires relating two temporally distant positions.
inline std::vector<FlightSeries> synth_longrange(const SynthConfig& cfg) {
  check(cfg.count % 2 == 0, "synth_longrange: count must be even");
  check(cfg.length >= cfg.gap + 64, "synth_longrange: need length >= gap + 64 (length ",
        cfg.length, ", gap ", cfg.gap, ")");
  check(cfg.gap >= cfg.pulse_width, "synth_longrange: gap smaller than pulse width");
  check(cfg.length >= cfg.gap + 2 * cfg.pulse_width, "synth_longrange: markers do not fit");

  std::vector<FlightSeries> out;
  out.reserve(cfg.count);
  for (size_t i = 0; i < cfg.count; ++i) {
    RngStream rng = RngStream::derive(cfg.seed, 0x5f3759df, i);
    FlightSeries fs;
    char id[32];
    std::snprintf(id, sizeof(id), "synth-%05zu", i);
    fs.flight_id = id;
    std::snprintf(id, sizeof(id), "T%03zu", i % cfg.tail_count);
    fs.tail_id = id;
    fs.cluster = Cluster::c28;
    fs.label = i < cfg.count / 2 ? 1 : 0;
    fs.day_offset = fs.label == 1 ? -1 : 1;
    fs.channel_names = default_channel_names();
    fs.values = Matrix(cfg.length, kChannelCount);
    for (auto& v : fs.values.data) v = float(rng.normal());

    size_t w = cfg.pulse_width;
    size_t t1 = size_t(rng.uniform_int(0, int64_t(cfg.length - cfg.gap - w)));
    size_t t2 = size_t(rng.uniform_int(int64_t(t1 + cfg.gap), int64_t(cfg.length - w)));
    float s1 = rng.bernoulli(0.5) ? 1.0f : -1.0f;
    float s2 = fs.label == 1 ? s1 : -s1;
    for (size_t t = t1; t < t1 + w; ++t) fs.values.at(t, 0) += s1 * cfg.pulse_amplitude;
    for (size_t t = t2; t < t2 + w; ++t) fs.values.at(t, 0) += s2 * cfg.pulse_amplitude;
    out.push_back(std::move(fs));
  }
  return out;
}

/// Writes a synthetic dataset as a directory of flight CSVs plus manifest.
inline void write_synth_dataset(const std::string& dir, const std::vector<FlightSeries>& flights) {
  std::filesystem::create_directories(dir);
  std::vector<ManifestEntry> entries;
  for (const auto& fs : flights) {
    std::string file = fs.flight_id + ".csv";
    write_flight_csv((std::filesystem::path(dir) / file).string(), fs.values, fs.channel_names);
    ManifestEntry e;
    e.flight_id = fs.flight_id;
    e.tail_id = fs.tail_id;
    e.cluster = fs.cluster;
    e.label = fs.label;
    e.day_offset = fs.day_offset;
    e.duration_seconds = int64_t(fs.values.rows);
    e.path = file;
    entries.push_back(std::move(e));
  }
  write_manifest_csv(dir, entries);
}

}  // namespace mtsc
