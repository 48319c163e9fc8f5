#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "trendrev/common.hpp"
#include "trendrev/io.hpp"
#include "trendrev/model_fit.hpp"
#include "trendrev/signal_database.hpp"

namespace trendrev {

/// Bin edges for `n_bins` (odd, >= 3): two open outer bins and n_bins - 2
/// interior bins of width 1/3 centred on zero.
struct BinEdges {
  int n_bins = 15;

  double width() const { return 1.0 / 3.0; }
  double outer() const { return (n_bins - 2) / 6.0; }

  void validate() const {
    if (n_bins < 3 || n_bins % 2 == 0) throw Error("bins: bin count must be odd and at least 3");
  }

  int index(double phi) const {
    const double E = outer();
    if (phi < -E) return 0;
    if (phi >= E) return n_bins - 1;
    const int j = 1 + static_cast<int>(std::floor((phi + E) * 3.0));
    return std::clamp(j, 1, n_bins - 2);
  }

  double lower(int j) const { return j == 0 ? -INFINITY : -outer() + (j - 1) * width(); }
  double upper(int j) const { return j == n_bins - 1 ? INFINITY : -outer() + j * width(); }
};

struct BinStat {
  double lower = 0.0;
  double upper = 0.0;
  std::size_t count = 0;
  double mean_phi = kNaN;  ///< NaN when empty
  double mean_ret = kNaN;
};

/// Mean next-day return per trend-strength bin over all (row, scale) pairs in
/// scope. `premia` (per market) is subtracted from R when given.
inline std::vector<BinStat> bin_curve(const SignalDatabase& db, int n_bins = 15, std::span<const int> scales = {},
                                      std::span<const double> premia = {}) {
  const BinEdges edges{n_bins};
  edges.validate();
  std::vector<int> all;
  if (scales.empty()) {
    for (int k = 1; k <= kNumScales; ++k) all.push_back(k);
    scales = all;
  }
  for (int k : scales)
    if (k < 1 || k > kNumScales) throw Error("bins: scale index outside 1..10");
  std::vector<double> sp(static_cast<std::size_t>(n_bins), 0.0), sr(sp.size(), 0.0);
  std::vector<std::size_t> n(sp.size(), 0);
  for (const auto& r : db.rows) {
    const double y = premia.empty() ? r.ret : r.ret - premia[r.market];
    for (int k : scales) {
      const double phi = r.phi[static_cast<std::size_t>(k - 1)];
      const auto j = static_cast<std::size_t>(edges.index(phi));
      sp[j] += phi;
      sr[j] += y;
      ++n[j];
    }
  }
  std::vector<BinStat> out;
  for (int j = 0; j < n_bins; ++j) {
    const auto u = static_cast<std::size_t>(j);
    BinStat b{edges.lower(j), edges.upper(j), n[u], kNaN, kNaN};
    if (n[u] > 0) {
      b.mean_phi = sp[u] / static_cast<double>(n[u]);
      b.mean_ret = sr[u] / static_cast<double>(n[u]);
    }
    out.push_back(b);
  }
  return out;
}

/// Pools bin curves computed on separate data sets (same edges).
inline std::vector<BinStat> merge_bins(std::span<const std::vector<BinStat>> curves) {
  if (curves.empty()) throw Error("bins: nothing to merge");
  std::vector<BinStat> out = curves.front();
  for (auto& b : out) {
    b.count = 0;
    b.mean_phi = b.mean_ret = 0.0;
  }
  for (const auto& c : curves) {
    if (c.size() != out.size()) throw Error("bins: curves have different bin counts");
    for (std::size_t j = 0; j < c.size(); ++j) {
      if (c[j].count == 0) continue;
      const auto n = static_cast<double>(c[j].count);
      out[j].mean_phi += n * c[j].mean_phi;
      out[j].mean_ret += n * c[j].mean_ret;
      out[j].count += c[j].count;
    }
  }
  for (auto& b : out) {
    if (b.count == 0) {
      b.mean_phi = b.mean_ret = kNaN;
      continue;
    }
    b.mean_phi /= static_cast<double>(b.count);
    b.mean_ret /= static_cast<double>(b.count);
  }
  return out;
}

/// First positive-to-negative crossing of the antisymmetrized curve on the
/// positive-phi side, by linear interpolation between bin means.
inline std::optional<double> zero_crossing(std::span<const BinStat> curve) {
  const std::size_t n = curve.size();
  std::vector<std::pair<double, double>> pts;  // (phi, antisymmetric return)
  for (std::size_t j = n / 2; j < n; ++j) {
    const auto& p = curve[j];
    const auto& m = curve[n - 1 - j];
    if (p.count == 0 || m.count == 0) continue;
    pts.push_back({0.5 * (p.mean_phi - m.mean_phi), 0.5 * (p.mean_ret - m.mean_ret)});
  }
  for (std::size_t j = 1; j < pts.size(); ++j) {
    const auto [x0, y0] = pts[j - 1];
    const auto [x1, y1] = pts[j];
    if (y0 > 0.0 && y1 <= 0.0) return x0 + (x1 - x0) * y0 / (y0 - y1);
  }
  return std::nullopt;
}

struct Heatmap {
  int n_bins = 15;
  std::vector<double> raw;       ///< n_bins x 10, row = bin, NaN where empty
  std::vector<double> smoothed;  ///< count-weighted 3x3 neighbourhood mean
  std::vector<std::size_t> counts;

  std::size_t index(int bin, int k) const { return static_cast<std::size_t>(bin * kNumScales + (k - 1)); }
};

/// Count-weighted 3x3 smoothing of a rows x cols grid of cell means. Cells
/// whose neighbourhood holds no data are NaN.
inline std::vector<double> smooth_3x3(std::span<const double> mean, std::span<const std::size_t> count, int rows, int cols) {
  std::vector<double> out(mean.size(), kNaN);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) {
      double s = 0.0, w = 0.0;
      for (int a = std::max(0, i - 1); a <= std::min(rows - 1, i + 1); ++a)
        for (int b = std::max(0, j - 1); b <= std::min(cols - 1, j + 1); ++b) {
          const auto u = static_cast<std::size_t>(a * cols + b);
          if (count[u] == 0) continue;
          s += static_cast<double>(count[u]) * mean[u];
          w += static_cast<double>(count[u]);
        }
      if (w > 0.0) out[static_cast<std::size_t>(i * cols + j)] = s / w;
    }
  return out;
}

/// Mean next-day return per (phi bin, scale) cell, then 3x3 smoothing.
inline Heatmap heatmap(const SignalDatabase& db, int n_bins = 15, std::span<const double> premia = {}) {
  const BinEdges edges{n_bins};
  edges.validate();
  Heatmap h;
  h.n_bins = n_bins;
  const auto cells = static_cast<std::size_t>(n_bins * kNumScales);
  std::vector<double> sum(cells, 0.0);
  h.counts.assign(cells, 0);
  for (const auto& r : db.rows) {
    const double y = premia.empty() ? r.ret : r.ret - premia[r.market];
    for (int k = 1; k <= kNumScales; ++k) {
      const auto u = h.index(edges.index(r.phi[static_cast<std::size_t>(k - 1)]), k);
      sum[u] += y;
      ++h.counts[u];
    }
  }
  h.raw.assign(cells, kNaN);
  for (std::size_t u = 0; u < cells; ++u)
    if (h.counts[u] > 0) h.raw[u] = sum[u] / static_cast<double>(h.counts[u]);
  h.smoothed = smooth_3x3(h.raw, h.counts, n_bins, kNumScales);
  return h;
}

inline std::string format_bins_csv(std::span<const BinStat> bins) {
  std::string s = "bin,lower,upper,count,mean_phi,mean_return\n";
  for (std::size_t j = 0; j < bins.size(); ++j) {
    const auto& b = bins[j];
    s += std::to_string(j) + ',' + io::format_double(b.lower) + ',' + io::format_double(b.upper) + ',' +
         std::to_string(b.count) + ',' + io::format_double(b.mean_phi) + ',' + io::format_double(b.mean_ret) + '\n';
  }
  return s;
}

inline std::string format_heatmap_csv(const Heatmap& h) {
  const BinEdges edges{h.n_bins};
  std::string s = "bin,lower,upper,k,count,mean_return,smoothed\n";
  for (int j = 0; j < h.n_bins; ++j)
    for (int k = 1; k <= kNumScales; ++k) {
      const auto u = h.index(j, k);
      s += std::to_string(j) + ',' + io::format_double(edges.lower(j)) + ',' + io::format_double(edges.upper(j)) + ',' +
           std::to_string(k) + ',' + std::to_string(h.counts[u]) + ',' + io::format_double(h.raw[u]) + ',' +
           io::format_double(h.smoothed[u]) + '\n';
    }
  return s;
}

}  // namespace trendrev
