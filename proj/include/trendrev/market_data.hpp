#pragma once

#include <algorithm>
#include <chrono>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "trendrev/common.hpp"
#include "trendrev/io.hpp"

namespace trendrev {

using Date = std::chrono::sys_days;

/// Daily (already rolled) futures prices for one market.
struct PriceSeries {
  std::string market_id;
  std::vector<Date> dates;
  std::vector<double> prices;

  void validate() const {
    if (dates.size() != prices.size()) throw Error(market_id + ": dates/prices length mismatch");
    for (std::size_t i = 0; i < dates.size(); ++i) {
      if (!(prices[i] > 0.0) || !std::isfinite(prices[i]))
        throw Error(market_id + ": non-positive price on " + io::format_date(dates[i]));
      if (i > 0 && dates[i] <= dates[i - 1])
        throw Error(market_id + ": dates not strictly increasing at " + io::format_date(dates[i]));
    }
  }
};

/// Per-date values (log returns, financing rates) for one market.
struct ReturnSeries {
  std::string market_id;
  std::vector<Date> dates;
  std::vector<double> values;
};

/// r(t) = ln(P(t)/P(t-1)), stamped with the later date.
inline ReturnSeries compute_log_returns(const PriceSeries& series) {
  if (series.prices.size() < 2) throw Error(series.market_id + ": need at least 2 prices for a return");
  series.validate();
  ReturnSeries out{series.market_id, {}, {}};
  out.dates.assign(series.dates.begin() + 1, series.dates.end());
  out.values.reserve(series.prices.size() - 1);
  for (std::size_t i = 1; i < series.prices.size(); ++i) out.values.push_back(std::log(series.prices[i] / series.prices[i - 1]));
  return out;
}

/// Backfills `primary` with `proxy` returns before `splice_date`.
///
/// Proxy returns are levered by `leverage` and charged (leverage - 1) times the
/// daily financing rate on the same date (missing dates cost nothing). From
/// `splice_date` on, the primary series is used unchanged.
inline ReturnSeries splice_returns(const ReturnSeries& primary, const ReturnSeries& proxy, Date splice_date,
                                   double leverage = 1.0, const ReturnSeries& financing = {}) {
  if (!(leverage > 0.0)) throw Error("splice: leverage must be positive");
  ReturnSeries out{primary.market_id, {}, {}};
  for (std::size_t i = 0; i < proxy.dates.size(); ++i) {
    if (proxy.dates[i] >= splice_date) break;
    double rate = 0.0;
    auto it = std::lower_bound(financing.dates.begin(), financing.dates.end(), proxy.dates[i]);
    if (it != financing.dates.end() && *it == proxy.dates[i]) rate = financing.values[static_cast<std::size_t>(it - financing.dates.begin())];
    out.dates.push_back(proxy.dates[i]);
    out.values.push_back(leverage * proxy.values[i] - (leverage - 1.0) * rate);
  }
  for (std::size_t i = 0; i < primary.dates.size(); ++i) {
    if (primary.dates[i] < splice_date) continue;
    out.dates.push_back(primary.dates[i]);
    out.values.push_back(primary.values[i]);
  }
  return out;
}

/// Rectangular panel of raw log returns on a shared business-day index.
struct RawPanel {
  std::vector<std::string> market_ids;
  std::vector<Date> days;
  std::vector<double> returns;  // day-major: returns[d * n_markets() + i]

  std::size_t n_days() const noexcept { return days.size(); }
  std::size_t n_markets() const noexcept { return market_ids.size(); }
  double at(std::size_t d, std::size_t i) const { return returns[d * n_markets() + i]; }
  double& at(std::size_t d, std::size_t i) { return returns[d * n_markets() + i]; }
};

/// Aligns markets on the union of their dates; a missing date carries return 0.
inline RawPanel align_returns(std::span<const ReturnSeries> series) {
  RawPanel panel;
  for (const auto& s : series) {
    panel.market_ids.push_back(s.market_id);
    panel.days.insert(panel.days.end(), s.dates.begin(), s.dates.end());
  }
  std::sort(panel.days.begin(), panel.days.end());
  panel.days.erase(std::unique(panel.days.begin(), panel.days.end()), panel.days.end());
  panel.returns.assign(panel.n_days() * panel.n_markets(), 0.0);
  for (std::size_t i = 0; i < series.size(); ++i) {
    std::size_t d = 0;
    for (std::size_t j = 0; j < series[i].dates.size(); ++j) {
      while (panel.days[d] < series[i].dates[j]) ++d;
      panel.at(d, i) = series[i].values[j];
    }
  }
  return panel;
}

/// Normalized returns R = r/sigma and excess returns R_hat = R - mu/sigma.
struct ReturnPanel {
  std::vector<std::string> market_ids;
  std::vector<Date> days;
  std::vector<double> raw;         // r_i(t)
  std::vector<double> normalized;  // R_i(t)
  std::vector<double> excess;      // R_hat_i(t)
  std::vector<double> mu;          // mean daily log return per market
  std::vector<double> sigma;       // daily volatility per market

  std::size_t n_days() const noexcept { return days.size(); }
  std::size_t n_markets() const noexcept { return market_ids.size(); }
  std::size_t index(std::size_t d, std::size_t i) const { return d * n_markets() + i; }
  /// Normalized long-term risk premium mu_i / sigma_i.
  double premium(std::size_t i) const { return mu[i] / sigma[i]; }
  std::vector<double> premia() const {
    std::vector<double> p(n_markets());
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = premium(i);
    return p;
  }
};

/// Estimates mu over `mu_window` and sigma over `sigma_window` (plain
/// population moments), then normalizes the whole panel.
inline ReturnPanel normalize_panel(const RawPanel& raw, std::span<const DayRange> mu_window,
                                   std::span<const DayRange> sigma_window) {
  const std::size_t M = raw.n_markets(), D = raw.n_days();
  if (raw.returns.size() != M * D) throw Error("normalize_panel: panel shape mismatch");
  ReturnPanel p;
  p.market_ids = raw.market_ids;
  p.days = raw.days;
  p.raw = raw.returns;
  p.mu.assign(M, 0.0);
  p.sigma.assign(M, 0.0);

  auto window_days = [D](std::span<const DayRange> w) {
    std::vector<std::size_t> out;
    for (std::size_t d = 0; d < D; ++d)
      if (in_ranges(w, d)) out.push_back(d);
    return out;
  };
  const auto mu_days = window_days(mu_window);
  const auto sigma_days = window_days(sigma_window);
  if (mu_days.empty() || sigma_days.empty()) throw Error("normalize_panel: estimation window contains no data");
  if (mu_days.size() < 2 || sigma_days.size() < 2) throw Error("normalize_panel: need at least 2 returns in the estimation window");

  for (std::size_t i = 0; i < M; ++i) {
    double s = 0.0;
    for (auto d : mu_days) s += raw.at(d, i);
    p.mu[i] = s / static_cast<double>(mu_days.size());

    double m = 0.0;
    for (auto d : sigma_days) m += raw.at(d, i);
    m /= static_cast<double>(sigma_days.size());
    double v = 0.0;
    for (auto d : sigma_days) v += (raw.at(d, i) - m) * (raw.at(d, i) - m);
    v /= static_cast<double>(sigma_days.size());
    // A constant series leaves only rounding noise in v.
    if (!(v > 1e-24 * m * m) || !(v > 0.0)) throw Error("normalize_panel: zero variance for market " + raw.market_ids[i]);
    p.sigma[i] = std::sqrt(v);
  }

  p.normalized.resize(M * D);
  p.excess.resize(M * D);
  for (std::size_t d = 0; d < D; ++d)
    for (std::size_t i = 0; i < M; ++i) {
      const double R = raw.at(d, i) / p.sigma[i];
      p.normalized[d * M + i] = R;
      p.excess[d * M + i] = R - p.mu[i] / p.sigma[i];
    }
  return p;
}

inline ReturnPanel normalize_panel(const RawPanel& raw, std::span<const DayRange> window) {
  return normalize_panel(raw, window, window);
}

/// Normalizes over the full panel.
inline ReturnPanel normalize_panel(const RawPanel& raw) {
  const DayRange all{0, raw.n_days()};
  return normalize_panel(raw, std::span<const DayRange>(&all, 1));
}

// --- price CSV: date,market,price -------------------------------------------

inline std::vector<PriceSeries> parse_prices_csv(std::string_view text) {
  std::vector<PriceSeries> out;
  std::unordered_map<std::string, std::size_t> index;
  std::vector<std::vector<std::pair<Date, std::pair<double, std::size_t>>>> rows;
  bool header = true;
  io::for_each_line(text, [&](std::size_t line, std::string_view s) {
    auto f = io::split(s);
    if (header) {
      header = false;
      if (f.size() != 3 || f[0] != "date" || f[1] != "market" || f[2] != "price")
        throw FormatError("expected header 'date,market,price'", line);
      return;
    }
    if (f.size() != 3) throw FormatError("expected 3 fields", line);
    const Date d = io::parse_date(f[0], line);
    const std::string market(f[1]);
    if (market.empty()) throw FormatError("empty market id", line);
    const double price = io::parse_double(f[2], line);
    if (!(price > 0.0)) throw FormatError("non-positive price for " + market + " on " + std::string(f[0]), line);
    auto [it, inserted] = index.try_emplace(market, out.size());
    if (inserted) {
      out.push_back(PriceSeries{market, {}, {}});
      rows.emplace_back();
    }
    rows[it->second].push_back({d, {price, line}});
  });
  if (header) throw FormatError("empty price file", 0);
  for (std::size_t m = 0; m < out.size(); ++m) {
    auto& r = rows[m];
    std::stable_sort(r.begin(), r.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    for (std::size_t j = 0; j < r.size(); ++j) {
      if (j > 0 && r[j].first == r[j - 1].first)
        throw FormatError("duplicate date " + io::format_date(r[j].first) + " for " + out[m].market_id, r[j].second.second);
      out[m].dates.push_back(r[j].first);
      out[m].prices.push_back(r[j].second.first);
    }
  }
  return out;
}

inline std::string format_prices_csv(std::span<const PriceSeries> series) {
  std::string s = "date,market,price\n";
  for (const auto& ps : series)
    for (std::size_t j = 0; j < ps.dates.size(); ++j)
      s += io::format_date(ps.dates[j]) + ',' + ps.market_id + ',' + io::format_double(ps.prices[j]) + '\n';
  return s;
}

/// Ingests price series into an aligned raw-return panel.
inline RawPanel panel_from_prices(std::span<const PriceSeries> prices) {
  std::vector<ReturnSeries> returns;
  returns.reserve(prices.size());
  for (const auto& p : prices) returns.push_back(compute_log_returns(p));
  return align_returns(returns);
}

/// Reconstructs price series (start level `p0`) from a raw panel.
inline std::vector<PriceSeries> prices_from_panel(const RawPanel& panel, Date first_price_date, double p0 = 100.0) {
  std::vector<PriceSeries> out(panel.n_markets());
  for (std::size_t i = 0; i < panel.n_markets(); ++i) {
    auto& ps = out[i];
    ps.market_id = panel.market_ids[i];
    ps.dates.push_back(first_price_date);
    ps.prices.push_back(p0);
    double logp = std::log(p0);
    for (std::size_t d = 0; d < panel.n_days(); ++d) {
      logp += panel.at(d, i);
      ps.dates.push_back(panel.days[d]);
      ps.prices.push_back(std::exp(logp));
    }
  }
  return out;
}

/// Consecutive weekdays starting at `start` (inclusive if it is a weekday).
inline std::vector<Date> business_days(Date start, std::size_t count) {
  using namespace std::chrono;
  std::vector<Date> out;
  out.reserve(count);
  for (Date d = start; out.size() < count; d += days{1}) {
    const weekday wd{d};
    if (wd != Saturday && wd != Sunday) out.push_back(d);
  }
  return out;
}

}  // namespace trendrev
