#pragma once

#include <cstdint>
#include <cstddef>
#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mtsc {

class Error : public std::runtime_error {
public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {
inline void format_parts(std::ostringstream&) {}
template <typename T, typename... Rest>
void format_parts(std::ostringstream& os, const T& t, Rest&&... rest) {
  os << t;
  format_parts(os, std::forward<Rest>(rest)...);
}
}  // namespace detail

template <typename... Parts>
std::string format_msg(Parts&&... parts) {
  std::ostringstream os;
  detail::format_parts(os, std::forward<Parts>(parts)...);
  return os.str();
}

template <typename... Parts>
void check(bool cond, Parts&&... parts) {
  if (!cond) throw Error(format_msg(std::forward<Parts>(parts)...));
}

using Shape = std::vector<size_t>;

inline size_t numel(const Shape& s) {
  size_t n = 1;
  for (size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

/// Row-major 2D array of time-series values (rows = timesteps, cols = channels).
template <typename T>
struct Mat {
  size_t rows = 0;
  size_t cols = 0;
  std::vector<T> data;

  Mat() = default;
  Mat(size_t r, size_t c, T fill = T(0)) : rows(r), cols(c), data(r * c, fill) {}

  T& at(size_t r, size_t c) { return data[r * cols + c]; }
  const T& at(size_t r, size_t c) const { return data[r * cols + c]; }
  size_t size() const { return data.size(); }

  bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }
  bool operator==(const Mat& o) const {
    return rows == o.rows && cols == o.cols && data == o.data;
  }
};

using Matrix = Mat<float>;

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Deterministic random stream. All draw methods are fully specified on top of
/// the mt19937_64 output sequence, so results are identical across platforms
/// and standard library implementations.
class RngStream {
public:
  explicit RngStream(uint64_t seed) : gen_(seed) {}

  /// Independent substream keyed by (seed, a, b); used to give every
  /// (sample, epoch) pair its own stream under any parallel schedule.
  static RngStream derive(uint64_t seed, uint64_t a, uint64_t b = 0) {
    return RngStream(splitmix64(splitmix64(seed ^ 0x243f6a8885a308d3ULL) + a) ^ splitmix64(b + 0x13198a2e03707344ULL));
  }

  uint64_t next_u64() { return gen_(); }

  /// Uniform on [0, 1) with 53-bit resolution.
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer on [lo, hi] inclusive (multiply-shift; bias < 2^-64).
  int64_t uniform_int(int64_t lo, int64_t hi) {
    uint64_t range = uint64_t(hi - lo) + 1;
    uint64_t v = uint64_t((__uint128_t(next_u64()) * __uint128_t(range)) >> 64);
    return lo + int64_t(v);
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// Standard normal via Box-Muller (two draws per call, no cached state).
  double normal() {
    double u1 = double((next_u64() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

private:
  std::mt19937_64 gen_;
};

}  // namespace mtsc
