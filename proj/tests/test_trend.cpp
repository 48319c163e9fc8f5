#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "trendrev/signal_database.hpp"
#include "trendrev/trend.hpp"

using namespace trendrev;

namespace {

std::vector<double> normals(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d;
  std::vector<double> x(n);
  for (auto& v : x) v = d(rng);
  return x;
}

TrendSpec spec_of(WeightScheme s, int k) {
  TrendSpec t;
  t.k = k;
  t.scheme = s;
  if (s == WeightScheme::mac) {
    t.mac_long = 1 << k;
    t.mac_short = std::max(1, (1 << k) / 4);
  }
  return t;
}

double sum_sq(const std::vector<double>& w) {
  long double s = 0.0L;
  for (double v : w) s += static_cast<long double>(v) * v;
  return static_cast<double>(s);
}

// High-precision closed forms (30-digit evaluation).
constexpr double kM4 = 0.7950600976206501073;
constexpr double kN4 = 0.4297104961357071954;

}  // namespace

TEST(Weights, StepT4) {
  const auto s = spec_of(WeightScheme::step, 2);
  for (long n = 0; n < 4; ++n) EXPECT_EQ(weight(s, n), 0.5);
  EXPECT_EQ(weight(s, 4), 0.0);
}

TEST(Weights, EwmaT4ClosedForm) {
  const auto s = spec_of(WeightScheme::ewma, 2);
  EXPECT_NEAR(TrendConstants::for_horizon(4).m, kM4, 1e-15);
  for (long n = 0; n < 10; ++n) EXPECT_NEAR(weight(s, n), kM4 * std::exp(-0.5 * n), 1e-15);
}

TEST(Weights, XexpT4ClosedForm) {
  const auto s = spec_of(WeightScheme::xexp, 2);
  EXPECT_NEAR(TrendConstants::for_horizon(4).n, kN4, 1e-15);
  EXPECT_NEAR(sum_sq(weight_vector(s, 201)), 1.0, 1e-12);
}

TEST(Weights, UnitNormForEveryScheme) {
  for (auto scheme : {WeightScheme::step, WeightScheme::ewma, WeightScheme::xexp, WeightScheme::mac})
    for (int k = 1; k <= 10; ++k) {
      if (scheme == WeightScheme::mac && k < 2) continue;
      const auto s = spec_of(scheme, k);
      EXPECT_NEAR(sum_sq(weight_vector(s, static_cast<std::size_t>(truncation_length(s)))), 1.0, 1e-12)
          << to_string(scheme) << " k=" << k;
    }
}

TEST(Weights, XexpLookbackIsCothOfInverseHorizon) {
  for (double T : {2.0, 8.0, 64.0, 512.0}) {
    const auto s = TrendSpec::with_horizon(T);
    const auto w = weight_vector(s, static_cast<std::size_t>(truncation_length(s, 1e-40)));
    long double s1 = 0.0L, sn = 0.0L;
    for (std::size_t n = 0; n < w.size(); ++n) {
      s1 += w[n];
      sn += static_cast<long double>(n + 1) * w[n];
    }
    const double lookback = static_cast<double>(sn / s1);
    EXPECT_NEAR(lookback, 1.0 / std::tanh(1.0 / T), 1e-9 * T);
    EXPECT_NEAR(lookback, T + 1.0 / (3.0 * T), 1.0 / (40.0 * T * T * T) + 1e-9 * T);
  }
}

TEST(Weights, Validation) {
  EXPECT_THROW(weight(spec_of(WeightScheme::xexp, 2), -1), Error);
  TrendSpec bad = spec_of(WeightScheme::mac, 4);
  bad.mac_short = bad.mac_long;
  EXPECT_THROW(bad.validate(), Error);
  TrendSpec cap = spec_of(WeightScheme::xexp, 3);
  cap.cap = 0.0;
  EXPECT_THROW(cap.validate(), Error);
  EXPECT_THROW(TrendSpec::with_horizon(1.5).validate(), Error);
  EXPECT_THROW(TrendSpec::with_horizon(4.5, WeightScheme::step).validate(), Error);
  EXPECT_NO_THROW(TrendSpec::with_horizon(4.5, WeightScheme::xexp).validate());
}

TEST(Recursion, ZeroIsFixedPoint) {
  const auto s = update_state(TrendState::initial(32), 0.0);
  EXPECT_EQ(s.psi, 0.0);
  EXPECT_EQ(s.phi, 0.0);
}

TEST(Recursion, OneStepEqualsNormalization) {
  for (double T : {2.0, 4.0, 128.0, 1024.0}) {
    const auto s = update_state(TrendState::initial(T), 1.0);
    EXPECT_NEAR(s.phi, TrendConstants::for_horizon(T).n, 1e-15);
    EXPECT_NEAR(s.psi, TrendConstants::for_horizon(T).m, 1e-15);
  }
}

TEST(Recursion, MatchesDirectSumT128) {
  const auto x = normals(5000, 1);
  const auto s = spec_of(WeightScheme::xexp, 7);
  const auto rec = trend_series(x, s);
  for (std::size_t t = 1000; t < x.size(); t += 97)
    EXPECT_NEAR(rec[t], direct_trend(std::span<const double>(x.data(), t + 1), s), 1e-10);
}

TEST(Recursion, EwmaAndStepMatchDirectSum) {
  const auto x = normals(3000, 2);
  for (auto scheme : {WeightScheme::ewma, WeightScheme::step, WeightScheme::mac}) {
    const auto s = spec_of(scheme, 5);
    const auto rec = trend_series(x, s);
    for (std::size_t t = 0; t < x.size(); t += 131)
      EXPECT_NEAR(rec[t], direct_trend(std::span<const double>(x.data(), t + 1), s), 1e-10) << to_string(scheme);
  }
}

TEST(Recursion, Linearity) {
  const auto x = normals(800, 3), y = normals(800, 4);
  std::vector<double> z(x.size());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = 2.0 * x[i] - 0.5 * y[i];
  const auto s = spec_of(WeightScheme::xexp, 4);
  const auto a = trend_series(x, s), b = trend_series(y, s), c = trend_series(z, s);
  for (std::size_t i = 0; i < z.size(); ++i) EXPECT_NEAR(c[i], 2.0 * a[i] - 0.5 * b[i], 1e-12);
}

TEST(DirectTrend, TrivialCases) {
  const auto s = spec_of(WeightScheme::xexp, 3);
  EXPECT_EQ(direct_trend(std::vector<double>{}, s), 0.0);
  EXPECT_EQ(direct_trend(std::vector<double>(50, 0.0), s), 0.0);
  std::vector<double> h(40, 0.0);
  h[40 - 1 - 6] = 2.0;  // 6 days ago
  EXPECT_NEAR(direct_trend(h, s), 2.0 * weight(s, 6), 1e-16);
}

TEST(DirectTrend, UnitVarianceOnIidInput) {
  constexpr int draws = 2000;
  const auto s = spec_of(WeightScheme::xexp, 3);
  const std::size_t len = 100 * 8;
  std::vector<double> phi;
  for (int d = 0; d < draws; ++d) phi.push_back(direct_trend(normals(len, 100 + d), s));
  const double se = std::sqrt(2.0 / draws);
  EXPECT_NEAR(stats::variance(phi), 1.0, 3.0 * se);
}

TEST(CapFloor, Examples) {
  EXPECT_EQ(cap_floor(3.1, 2.5), 2.5);
  EXPECT_EQ(cap_floor(-0.7, 2.5), -0.7);
  EXPECT_EQ(cap_floor(-2.51, 2.5), -2.5);
  EXPECT_THROW(cap_floor(1.0, 0.0), Error);
}

namespace {

ReturnPanel panel_from(std::vector<double> excess, std::size_t markets) {
  ReturnPanel p;
  const std::size_t days = excess.size() / markets;
  for (std::size_t i = 0; i < markets; ++i) p.market_ids.push_back("M" + std::to_string(i));
  p.days = business_days(Date{std::chrono::year{2000} / 1 / 3}, days);
  p.mu.assign(markets, 0.0);
  p.sigma.assign(markets, 1.0);
  p.raw = p.normalized = p.excess = std::move(excess);
  return p;
}

}  // namespace

TEST(SignalDatabase, ReferenceShapedDayCount) {
  const auto p = panel_from(normals(7827 * 2, 5), 2);
  const auto db = build_signal_database(p);
  EXPECT_EQ(db.days().size(), 7305u);
  EXPECT_EQ(db.rows.size(), 7305u * 2);
  EXPECT_EQ(db.rows.front().day, 1);
  EXPECT_NO_THROW(db.validate(2.5));
}

TEST(SignalDatabase, ZeroReturnsGiveZeroTrends) {
  const auto db = build_signal_database(panel_from(std::vector<double>(600 * 3, 0.0), 3), 100);
  for (const auto& r : db.rows)
    for (double v : r.phi) EXPECT_EQ(v, 0.0);
}

TEST(SignalDatabase, RejectsLongBurnIn) {
  const auto p = panel_from(normals(100, 1), 1);
  EXPECT_THROW(build_signal_database(p, 100), Error);
  EXPECT_THROW(build_signal_database(p, 0), Error);
}

TEST(SignalDatabase, PairsReturnWithPreviousDayTrend) {
  const std::size_t D = 1500, burn = 522;
  const auto x = normals(D, 9);
  const auto p = panel_from(x, 1);
  const auto db = build_signal_database(p, burn);
  for (std::size_t t = burn; t < D; t += 53) {
    const auto& r = db.rows[t - burn];
    EXPECT_EQ(r.ret, x[t]);
    for (int k = 1; k <= kNumScales; ++k) {
      const auto s = spec_of(WeightScheme::xexp, k);
      const double direct = cap_floor(direct_trend(std::span<const double>(x.data(), t), s), 2.5);
      EXPECT_NEAR(r.phi[static_cast<std::size_t>(k - 1)], direct, 1e-10);
    }
  }
}

TEST(SignalDatabase, NoLookAhead) {
  const std::size_t D = 900, burn = 300;
  auto x = normals(D, 12);
  const auto a = build_signal_database(panel_from(x, 1), burn);
  x[600] += 5.0;
  const auto b = build_signal_database(panel_from(x, 1), burn);
  EXPECT_EQ(a.rows[600 - burn].phi, b.rows[600 - burn].phi);
  EXPECT_NE(a.rows[601 - burn].phi, b.rows[601 - burn].phi);
}

TEST(SignalDatabase, PremiumFractionShiftsTrendInput) {
  auto p = panel_from(normals(400, 13), 1);
  p.mu = {0.1};
  const auto x0 = trend_input(p, 0, 0.0), x1 = trend_input(p, 0, 1.0);
  EXPECT_NEAR(x1[0] - x0[0], 0.1, 1e-15);
}
