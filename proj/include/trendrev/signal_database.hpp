#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "trendrev/common.hpp"
#include "trendrev/io.hpp"
#include "trendrev/market_data.hpp"
#include "trendrev/trend.hpp"

namespace trendrev {

/// One (day, market) line: normalized return R(t) and the capped trend
/// strengths of the previous day for k = 1..10.
struct SignalRow {
  std::int64_t day = 0;
  std::uint32_t market = 0;  // index into SignalDatabase::markets
  double ret = 0.0;
  std::array<double, kNumScales> phi{};

  bool operator==(const SignalRow&) const = default;
};

/// Long-format regression dataset, rows ordered by (day, market).
struct SignalDatabase {
  std::vector<std::string> markets;
  std::vector<SignalRow> rows;

  bool operator==(const SignalDatabase&) const = default;

  std::size_t n_markets() const noexcept { return markets.size(); }

  /// Distinct days in row order.
  std::vector<std::int64_t> days() const {
    std::vector<std::int64_t> d;
    for (const auto& r : rows)
      if (d.empty() || d.back() != r.day) d.push_back(r.day);
    return d;
  }

  /// Checks ordering, uniqueness, and |phi| <= cap.
  void validate(double cap = std::numeric_limits<double>::infinity()) const {
    for (std::size_t j = 0; j < rows.size(); ++j) {
      const auto& r = rows[j];
      if (r.market >= markets.size()) throw Error("signal database: market index out of range");
      if (j > 0) {
        const auto& p = rows[j - 1];
        if (r.day < p.day || (r.day == p.day && r.market <= p.market))
          throw Error("signal database: rows not strictly ordered by (day, market) at day " + std::to_string(r.day) +
                      ", market " + markets[r.market]);
      }
      for (double v : r.phi)
        if (!(std::abs(v) <= cap)) throw Error("signal database: trend strength exceeds cap on day " + std::to_string(r.day));
      if (!std::isfinite(r.ret)) throw Error("signal database: non-finite return on day " + std::to_string(r.day));
    }
  }
};

/// Per-market trend input: R - (1 - f) mu/sigma. f = 0 removes the premium.
inline std::vector<double> trend_input(const ReturnPanel& panel, std::size_t market, double premium_fraction = 0.0) {
  std::vector<double> x(panel.n_days());
  const double p = (1.0 - premium_fraction) * panel.premium(market);
  for (std::size_t d = 0; d < x.size(); ++d) x[d] = panel.normalized[panel.index(d, market)] - p;
  return x;
}

/// Builds the database from a normalized panel.
///
/// Recursions start at zero on the first panel day. Rows are emitted for panel
/// days t >= burn_in, numbered 1.., and pair R(t) with capped phi_k(t-1).
inline SignalDatabase build_signal_database(const ReturnPanel& panel, std::span<const TrendSpec> specs,
                                            std::size_t burn_in = kDefaultBurnIn, double premium_fraction = 0.0) {
  if (specs.size() != kNumScales) throw Error("build_signal_database: need exactly 10 trend specs");
  if (burn_in < 1) throw Error("build_signal_database: burn-in must be at least 1 day");
  if (burn_in >= panel.n_days()) throw Error("build_signal_database: burn-in must be shorter than the panel");
  for (const auto& s : specs) s.validate();

  const std::size_t M = panel.n_markets(), D = panel.n_days();
  SignalDatabase db;
  db.markets = panel.market_ids;
  db.rows.resize((D - burn_in) * M);
  for (std::size_t i = 0; i < M; ++i) {
    const auto x = trend_input(panel, i, premium_fraction);
    for (std::size_t s = 0; s < kNumScales; ++s) {
      const auto phi = trend_series(x, specs[s]);
      for (std::size_t t = burn_in; t < D; ++t) db.rows[(t - burn_in) * M + i].phi[s] = cap_floor(phi[t - 1], specs[s].cap);
    }
    for (std::size_t t = burn_in; t < D; ++t) {
      auto& row = db.rows[(t - burn_in) * M + i];
      row.day = static_cast<std::int64_t>(t - burn_in + 1);
      row.market = static_cast<std::uint32_t>(i);
      row.ret = panel.normalized[panel.index(t, i)];
    }
  }
  return db;
}

inline SignalDatabase build_signal_database(const ReturnPanel& panel, std::size_t burn_in = kDefaultBurnIn,
                                            double cap = kDefaultCap, double premium_fraction = 0.0) {
  const auto specs = default_specs(cap);
  return build_signal_database(panel, specs, burn_in, premium_fraction);
}

// --- CSV ---------------------------------------------------------------------

inline std::string database_header() {
  std::string h = "day,market,R";
  for (auto label : kScaleLabels) h += ",phi_" + std::string(label);
  return h;
}

inline std::string format_database_csv(const SignalDatabase& db) {
  std::string out = database_header() + '\n';
  out.reserve(db.rows.size() * 240);
  for (const auto& r : db.rows) {
    out += std::to_string(r.day);
    out += ',';
    out += db.markets[r.market];
    out += ',';
    out += io::format_double(r.ret);
    for (double v : r.phi) {
      out += ',';
      out += io::format_double(v);
    }
    out += '\n';
  }
  return out;
}

inline SignalDatabase parse_database_csv(std::string_view text) {
  SignalDatabase db;
  std::unordered_map<std::string, std::uint32_t> index;
  std::vector<std::size_t> lines;
  bool header = true;
  io::for_each_line(text, [&](std::size_t line, std::string_view s) {
    auto f = io::split(s);
    if (header) {
      header = false;
      const std::string names = database_header();
      const auto expected = io::split(names);
      for (const auto& col : expected)
        if (std::find(f.begin(), f.end(), col) == f.end()) throw FormatError("missing column '" + std::string(col) + "'", line);
      if (f != expected) throw FormatError("columns must be exactly: " + database_header(), line);
      return;
    }
    if (f.size() != 3 + kNumScales) throw FormatError("expected " + std::to_string(3 + kNumScales) + " fields", line);
    SignalRow r;
    r.day = io::parse_int(f[0], line);
    if (f[1].empty()) throw FormatError("empty market id", line);
    auto [it, inserted] = index.try_emplace(std::string(f[1]), static_cast<std::uint32_t>(db.markets.size()));
    if (inserted) db.markets.emplace_back(f[1]);
    r.market = it->second;
    r.ret = io::parse_double(f[2], line);
    for (std::size_t k = 0; k < kNumScales; ++k) r.phi[k] = io::parse_double(f[3 + k], line);
    db.rows.push_back(r);
    lines.push_back(line);
  });
  if (header) throw FormatError("empty database file", 0);

  std::vector<std::size_t> order(db.rows.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& x = db.rows[a];
    const auto& y = db.rows[b];
    return x.day != y.day ? x.day < y.day : x.market < y.market;
  });
  std::vector<SignalRow> sorted;
  sorted.reserve(order.size());
  for (std::size_t j = 0; j < order.size(); ++j) {
    if (j > 0) {
      const auto& p = db.rows[order[j - 1]];
      const auto& c = db.rows[order[j]];
      if (p.day == c.day && p.market == c.market)
        throw FormatError("duplicate (day, market) pair (" + std::to_string(c.day) + ", " + db.markets[c.market] + ")",
                          lines[order[j]]);
    }
    sorted.push_back(db.rows[order[j]]);
  }
  db.rows = std::move(sorted);
  return db;
}

inline void write_database(const SignalDatabase& db, const std::filesystem::path& path) {
  db.validate();
  io::write_file_atomic(path, format_database_csv(db));
}

inline SignalDatabase read_database(const std::filesystem::path& path) { return parse_database_csv(io::read_file(path)); }

}  // namespace trendrev
