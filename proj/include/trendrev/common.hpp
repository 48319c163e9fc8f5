#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace trendrev {

/// Number of trend horizons T_k = 2^k, k = 1..10.
inline constexpr int kNumScales = 10;
inline constexpr double kDefaultCap = 2.5;
inline constexpr int kDefaultBurnIn = 522;
inline constexpr double kBusinessDaysPerYear = 260.0;

/// Column suffixes for k = 1..10 in the signal database header.
inline constexpr std::array<std::string_view, kNumScales> kScaleLabels = {
    "2d", "4d", "8d", "3w", "6w", "3m", "6m", "1y", "2y", "4y"};

/// Rejected input: bad parameters, malformed files, degenerate data.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// File-format violation; carries the 1-based line number when known.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t line)
      : Error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Half-open range of day indices [begin, end).
struct DayRange {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const noexcept { return end > begin ? end - begin : 0; }
  bool contains(std::size_t d) const noexcept { return d >= begin && d < end; }
  bool operator==(const DayRange&) const = default;
};

inline bool in_ranges(std::span<const DayRange> ranges, std::size_t d) {
  return std::any_of(ranges.begin(), ranges.end(), [d](const DayRange& r) { return r.contains(d); });
}

// splitmix64 finalizer; used to derive independent RNG streams from one seed.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Sub-seed for (component, index) derived from a master seed.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view component, std::uint64_t index = 0) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char ch : component) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return mix64(mix64(master ^ h) + index);
}

namespace stats {

inline double mean(std::span<const double> x) {
  if (x.empty()) return std::numeric_limits<double>::quiet_NaN();
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

/// Population variance (denominator n).
inline double variance(std::span<const double> x) {
  const double m = mean(x);
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return s / static_cast<double>(x.size());
}

/// Linearly interpolated quantile (Hyndman-Fan type 7) of unsorted data.
inline double quantile(std::vector<double> x, double p) {
  if (x.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(x.begin(), x.end());
  const double h = (static_cast<double>(x.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, x.size() - 1);
  return x[lo] + (h - static_cast<double>(lo)) * (x[hi] - x[lo]);
}

inline double correlation(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw Error("correlation: need two equal-length series of size >= 2");
  const double mx = mean(x), my = mean(y);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx <= 0.0 || syy <= 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace stats
}  // namespace trendrev
