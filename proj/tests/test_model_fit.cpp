#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "trendrev/model_fit.hpp"

using namespace trendrev;

namespace {

SignalDatabase random_db(std::size_t days, std::size_t markets, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  SignalDatabase db;
  for (std::size_t i = 0; i < markets; ++i) db.markets.push_back("M" + std::to_string(i));
  for (std::size_t d = 1; d <= days; ++d)
    for (std::uint32_t m = 0; m < markets; ++m) {
      SignalRow r{static_cast<std::int64_t>(d), m, 0.0, {}};
      for (auto& p : r.phi) p = cap_floor(1.2 * n(rng), 2.5);
      // Loadings concave in k so the scale fit has a vertex.
      r.ret = 0.05 - 0.01 * std::pow(r.phi[4], 3) + n(rng);
      for (int k = 1; k <= kNumScales; ++k) r.ret += 0.1 * (1.0 - std::pow((k - 5.5) / 5.0, 2)) * r.phi[static_cast<std::size_t>(k - 1)];
      db.rows.push_back(r);
    }
  return db;
}

struct Ols {
  Eigen::VectorXd beta;
  double ssr;
};

Ols eigen_ols(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
  Ols o;
  o.beta = X.colPivHouseholderQr().solve(y);
  o.ssr = (y - X * o.beta).squaredNorm();
  return o;
}

// Independent design of the pooled per-scale regression on raw k.
Ols scale_oracle(const SignalDatabase& db, bool intercept, std::span<const double> premia = {}) {
  const std::size_t n = db.rows.size() * kNumScales, p = intercept ? 5 : 4;
  Eigen::MatrixXd X(n, p);
  Eigen::VectorXd y(n);
  std::size_t j = 0;
  for (const auto& r : db.rows)
    for (int k = 1; k <= kNumScales; ++k, ++j) {
      const double f = r.phi[static_cast<std::size_t>(k - 1)];
      std::size_t c = 0;
      if (intercept) X(j, c++) = 1.0;
      X(j, c++) = f;
      X(j, c++) = k * f;
      X(j, c++) = k * k * f;
      X(j, c) = f * f * f;
      y(j) = r.ret - (premia.empty() ? 0.0 : premia[r.market]);
    }
  return eigen_ols(X, y);
}

double rel(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

ModelSpec raw_scale(bool intercept = false) {
  auto s = scale_spec();
  s.response = Response::raw;
  s.intercept = intercept;
  return s;
}

}  // namespace

// --- cubic --------------------------------------------------------------------

TEST(Cubic, NoiselessRecoveryForEveryMask) {
  const std::array<double, 6> truth = {0.0133, 0.0129, -0.004, -0.0062, 0.0011, -0.0003};
  for (const std::vector<int>& mask :
       std::vector<std::vector<int>>{{0, 1, 3}, {1, 3}, {0, 1, 2, 3}, {0, 1, 2, 3, 4, 5}}) {
    std::vector<CubicPair> pairs;
    for (int j = 0; j <= 60; ++j) {
      const double phi = -2.5 + j / 12.0;
      double y = 0.0;
      for (int p : mask) y += truth[static_cast<std::size_t>(p)] * std::pow(phi, p);
      pairs.push_back({y, phi});
    }
    const auto f = fit_cubic(pairs, mask);
    for (int p : mask) EXPECT_LT(rel(f.coef[static_cast<std::size_t>(p)], truth[static_cast<std::size_t>(p)]), 1e-8);
    EXPECT_NEAR(f.r_squared, 1.0, 1e-12);
  }
}

TEST(Cubic, MatchesIndependentOls) {
  const auto db = random_db(300, 4, 1);
  const auto f = std::get<CubicFit>(fit_model(db, cubic_spec()));
  Eigen::MatrixXd X(db.rows.size() * kNumScales, 3);
  Eigen::VectorXd y(X.rows());
  std::size_t j = 0;
  for (const auto& r : db.rows)
    for (double phi : r.phi) {
      X.row(static_cast<Eigen::Index>(j)) << 1.0, phi, phi * phi * phi;
      y(static_cast<Eigen::Index>(j++)) = r.ret;
    }
  const auto o = eigen_ols(X, y);
  EXPECT_LT(rel(f.a(), o.beta(0)), 1e-9);
  EXPECT_LT(rel(f.b(), o.beta(1)), 1e-9);
  EXPECT_LT(rel(f.c(), o.beta(2)), 1e-9);
  EXPECT_LT(rel(f.ssr, o.ssr), 1e-9);
}

TEST(Cubic, RejectsCollinearDesignNamingRegressors) {
  std::vector<CubicPair> pairs(20, CubicPair{0.1, 1.0});
  try {
    fit_cubic(pairs);
    FAIL();
  } catch (const CollinearityError& e) {
    EXPECT_NE(std::string(e.what()).find("phi"), std::string::npos);
  }
}

TEST(Cubic, NeedsEnoughPairs) {
  std::vector<CubicPair> pairs(5, CubicPair{0.1, 1.0});
  EXPECT_THROW(fit_cubic(pairs), Error);
}

// --- scale model ----------------------------------------------------------------

TEST(Scale, MatchesIndependentOlsAndClosedForms) {
  const auto db = random_db(400, 3, 2);
  for (bool intercept : {false, true}) {
    const auto f = std::get<ScaleFit>(fit_model(db, raw_scale(intercept)));
    const auto o = scale_oracle(db, intercept);
    const int s = intercept ? 1 : 0;
    const double b0 = o.beta(s), b1 = o.beta(s + 1), b2 = o.beta(s + 2);
    EXPECT_LT(rel(f.beta[0], b0), 1e-8);
    EXPECT_LT(rel(f.beta[1], b1), 1e-8);
    EXPECT_LT(rel(f.beta[2], b2), 1e-8);
    EXPECT_LT(rel(f.c, o.beta(s + 3)), 1e-8);
    if (intercept) EXPECT_LT(rel(f.a, o.beta(0)), 1e-8);
    ASSERT_FALSE(f.degenerate());
    EXPECT_LT(rel(f.k0, -b1 / (2.0 * b2)), 1e-8);
    EXPECT_LT(rel(f.b, b0 - b1 * b1 / (4.0 * b2)), 1e-8);
    EXPECT_LT(rel(f.delta_k, std::sqrt(-f.b / b2)), 1e-8);
    EXPECT_LT(rel(f.ssr, o.ssr), 1e-8);
  }
}

TEST(Scale, ExcessResponseSubtractsPremia) {
  const auto db = random_db(200, 3, 3);
  const std::vector<double> premia = {0.01, -0.02, 0.03};
  auto s = scale_spec();
  const auto f = std::get<ScaleFit>(fit_model(db, s, premia));
  const auto o = scale_oracle(db, false, premia);
  EXPECT_LT(rel(f.c, o.beta(3)), 1e-8);
}

TEST(Scale, FromParametersTable4) {
  const auto f = ScaleFit::from_parameters(0.02, -0.0063, 5.78, 4.87);
  EXPECT_NEAR(f.b_of_k(5.78), 0.02, 1e-15);
  EXPECT_NEAR(f.b_of_k(5.78 + 4.87), 0.0, 1e-15);
  EXPECT_NEAR(f.b_of_k(5.78 - 4.87), 0.0, 1e-15);
  EXPECT_NEAR(predict(f, 1.0, 5.78), 0.02 - 0.0063, 1e-15);
  EXPECT_THROW(ScaleFit::from_parameters(0.02, -0.0063, 5.78, 0.0), Error);
}

TEST(Scale, NoiselessRecovery) {
  const auto truth = ScaleFit::from_parameters(0.02, -0.0063, 5.78, 4.87, 0.001);
  std::vector<ScaleTriple> t;
  for (int k = 1; k <= 10; ++k)
    for (int j = 0; j <= 30; ++j) {
      const double phi = -2.5 + j / 6.0;
      t.push_back({predict(truth, phi, k), phi, static_cast<double>(k)});
    }
  const auto f = fit_scale_model(t, true);
  EXPECT_LT(rel(f.a, 0.001), 1e-9);
  EXPECT_LT(rel(f.b, 0.02), 1e-9);
  EXPECT_LT(rel(f.c, -0.0063), 1e-9);
  EXPECT_LT(rel(f.k0, 5.78), 1e-9);
  EXPECT_LT(rel(f.delta_k, 4.87), 1e-9);
}

TEST(Scale, ConvexParabolaIsFlaggedWithRawBetas) {
  std::vector<ScaleTriple> t;
  for (int k = 1; k <= 10; ++k)
    for (int j = 0; j <= 20; ++j) {
      const double phi = -2.0 + j / 5.0, bk = 0.001 * (k - 5) * (k - 5);
      t.push_back({bk * phi - 0.001 * phi * phi * phi, phi, static_cast<double>(k)});
    }
  const auto f = fit_scale_model(t);
  EXPECT_TRUE(f.has_flag(flag::no_concavity));
  EXPECT_TRUE(f.degenerate());
  EXPECT_TRUE(std::isnan(f.k0));
  EXPECT_NEAR(f.beta[2], 0.001, 1e-12);
  EXPECT_NEAR(f.beta[1], -0.01, 1e-12);
  EXPECT_NEAR(f.beta[0], 0.025, 1e-12);
  EXPECT_FALSE(ellipse_of(f).has_value());
}

TEST(Scale, NegativePeakIsFlagged) {
  std::vector<ScaleTriple> t;
  for (int k = 1; k <= 10; ++k)
    for (int j = 0; j <= 20; ++j) {
      const double phi = -2.0 + j / 5.0, bk = -0.01 - 0.001 * (k - 5) * (k - 5);
      t.push_back({bk * phi - 0.001 * phi * phi * phi, phi, static_cast<double>(k)});
    }
  EXPECT_TRUE(fit_scale_model(t).has_flag(flag::nonpositive_peak));
}

TEST(Scale, NeedsThreeScales) {
  std::vector<ScaleTriple> t;
  for (int j = 0; j < 30; ++j) t.push_back({0.0, j * 0.1, 1.0 + (j % 2)});
  EXPECT_THROW(fit_scale_model(t), Error);
}

// --- geometry -----------------------------------------------------------------

TEST(Geometry, CriticalStrength) {
  EXPECT_NEAR(*critical_strength(0.02, -0.0063), std::sqrt(0.02 / 0.0063), 1e-15);
  EXPECT_NEAR(*critical_strength(0.02, -0.0063), 1.78, 0.005);
  EXPECT_FALSE(critical_strength(0.02, 0.001));
  EXPECT_FALSE(critical_strength(0.0, -0.001));
}

TEST(Geometry, EllipseBoundary) {
  const auto f = ScaleFit::from_parameters(0.02, -0.0063, 5.78, 4.87);
  const auto e = ellipse_of(f);
  ASSERT_TRUE(e);
  EXPECT_EQ(e->delta_k, 4.87);
  EXPECT_NEAR(e->phi_c_at_k0, std::sqrt(0.02 / 0.0063), 1e-15);
  const std::vector<double> ks = {5.78, 3.0, 0.5, 11.0};
  const auto b = ellipse_boundary(f, ks);
  EXPECT_NEAR(*b[0], e->phi_c_at_k0, 1e-12);
  EXPECT_NEAR(*b[1], std::sqrt(-f.b_of_k(3.0) / -0.0063), 1e-12);
  // Points on the boundary satisfy the ellipse equation.
  EXPECT_NEAR(std::pow((3.0 - 5.78) / 4.87, 2) + std::pow(*b[1] / e->phi_c_at_k0, 2), 1.0, 1e-12);
  EXPECT_FALSE(b[2]);
  EXPECT_FALSE(b[3]);
}

TEST(Geometry, NoCriticalStrengthFlag) {
  std::vector<ScaleTriple> t;
  const auto truth = ScaleFit::from_parameters(0.02, 0.001, 5.0, 4.0);
  for (int k = 1; k <= 10; ++k)
    for (int j = 0; j <= 20; ++j) {
      const double phi = -2.0 + j / 5.0;
      t.push_back({predict(truth, phi, k), phi, static_cast<double>(k)});
    }
  EXPECT_TRUE(fit_scale_model(t).has_flag(flag::no_critical_strength));
}

// --- decay model ------------------------------------------------------------------

namespace {

std::vector<DecayQuad> decay_data(const DecayFit& truth, double noise, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  std::vector<DecayQuad> q;
  for (int y = -14; y <= 14; ++y)
    for (int k = 1; k <= 10; ++k)
      for (int j = 0; j <= 12; ++j) {
        const double phi = -2.4 + 0.4 * j;
        q.push_back({predict(truth, phi, k, y) + noise * n(rng), phi, static_cast<double>(k), static_cast<double>(y)});
      }
  return q;
}

DecayFit decay_truth(DecayScenario s, double qb, double qc) {
  DecayFit f;
  f.scenario = s;
  f.beta = ScaleFit::from_parameters(0.0191, -0.0062, 5.83, 4.97).beta;
  f.c_bar = -0.0062;
  f.Q_b = qb;
  f.Q_c = qc;
  return f;
}

// SSR of the decay model with Q_b held fixed, by direct least squares.
double decay_ssr_at(std::span<const DecayQuad> q, DecayScenario s, double Qb) {
  Eigen::MatrixXd X(static_cast<Eigen::Index>(q.size()), 5);
  Eigen::VectorXd y(X.rows());
  for (std::size_t j = 0; j < q.size(); ++j) {
    const double g = s == DecayScenario::linear ? 1.0 - Qb * q[j].t : std::exp(-Qb * q[j].t);
    const double f = q[j].phi, k = q[j].k;
    X.row(static_cast<Eigen::Index>(j)) << g * f, g * k * f, g * k * k * f, f * f * f, q[j].t * f * f * f;
    y(static_cast<Eigen::Index>(j)) = q[j].y;
  }
  return eigen_ols(X, y).ssr;
}

}  // namespace

TEST(Decay, NoiselessRecoveryBothScenarios) {
  for (auto s : {DecayScenario::linear, DecayScenario::exponential}) {
    const auto truth = decay_truth(s, 0.088, 0.047);
    const auto f = fit_decay_model(decay_data(truth, 0.0, 0), s);
    EXPECT_LT(rel(f.b_bar, 0.0191), 1e-6);
    EXPECT_LT(rel(f.c_bar, -0.0062), 1e-6);
    EXPECT_LT(rel(f.k0, 5.83), 1e-6);
    EXPECT_LT(rel(f.delta_k, 4.97), 1e-6);
    EXPECT_LT(rel(f.Q_b, 0.088), 1e-6);
    EXPECT_LT(rel(f.Q_c, 0.047), 1e-6);
  }
}

TEST(Decay, ProfileMinimumMatchesBruteForce) {
  for (auto s : {DecayScenario::linear, DecayScenario::exponential}) {
    const auto q = decay_data(decay_truth(s, 0.05, 0.02), 0.05, 7);
    const auto f = fit_decay_model(q, s);
    double best = INFINITY, best_q = 0.0;
    for (int j = 0; j <= 600; ++j) {
      const double Q = -0.3 + 0.001 * j;
      const double v = decay_ssr_at(q, s, Q);
      if (v < best) best = v, best_q = Q;
    }
    EXPECT_LE(f.ssr, best * (1.0 + 1e-10));
    EXPECT_NEAR(f.Q_b, best_q, 0.001);
    EXPECT_NEAR(f.ssr, decay_ssr_at(q, s, f.Q_b), 1e-9 * f.ssr);
  }
}

TEST(Decay, ForceZeroReducesToScaleModel) {
  const auto db = random_db(300, 3, 4);
  auto d = decay_spec();
  d.response = Response::raw;
  d.decay.force_zero = true;
  const auto f = std::get<DecayFit>(fit_model(db, d));
  const auto s = std::get<ScaleFit>(fit_model(db, raw_scale()));
  EXPECT_EQ(f.Q_b, 0.0);
  EXPECT_EQ(f.Q_c, 0.0);
  EXPECT_LT(rel(f.b_bar, s.b), 1e-10);
  EXPECT_LT(rel(f.c_bar, s.c), 1e-10);
  EXPECT_LT(rel(f.k0, s.k0), 1e-10);
}

TEST(Decay, VanishingPersistenceIsFlagged) {
  DecayFit truth = decay_truth(DecayScenario::linear, 0.0, 0.0);
  truth.beta = {0.0, 0.0, 0.0};
  const auto f = fit_decay_model(decay_data(truth, 0.0, 0), DecayScenario::linear);
  EXPECT_TRUE(f.degenerate());
}

TEST(Decay, NeedsTwoTimes) {
  std::vector<DecayQuad> q;
  for (int k = 1; k <= 10; ++k) q.push_back({0.0, 0.5, static_cast<double>(k), 0.0});
  EXPECT_THROW(fit_decay_model(q), Error);
}

// --- aggregation --------------------------------------------------------------------

TEST(Aggregation, FactorAndWeights) {
  const std::vector<double> phi = {1.0, 2.0, 3.0};
  EXPECT_NEAR(aggregate_factor(phi, equal_weights(3)), 2.0, 1e-15);
  const auto f = ScaleFit::from_parameters(0.02, -0.0063, 5.78, 4.87);
  const std::vector<int> ks = {1, 6, 11};
  const auto w = parabolic_weights(f, ks);
  EXPECT_EQ(w[2], 0.0);  // outside the ellipse: clipped
  EXPECT_NEAR(w[0] / w[1], f.b_of_k(1) / f.b_of_k(6), 1e-12);
  EXPECT_NEAR(w[0] + w[1] + w[2], 1.0, 1e-15);
  const auto neg = ScaleFit::from_parameters(0.02, -0.0063, 30.0, 1.0);
  EXPECT_THROW(parabolic_weights(neg, ks), Error);
}

TEST(Aggregation, EqualFactorFitMatchesManualFactor) {
  const auto db = random_db(200, 3, 5);
  auto s = cubic_spec();
  s.aggregation = Aggregation::equal;
  const auto f = std::get<CubicFit>(fit_model(db, s));
  std::vector<CubicPair> pairs;
  for (const auto& r : db.rows) {
    double m = 0.0;
    for (double v : r.phi) m += v / kNumScales;
    pairs.push_back({r.ret, m});
  }
  const auto g = fit_cubic(pairs);
  EXPECT_LT(rel(f.b(), g.b()), 1e-9);
  EXPECT_LT(rel(f.c(), g.c()), 1e-9);
}

TEST(Aggregation, ParabolicUsesScaleFitOnSameRows) {
  const auto db = random_db(200, 3, 6);
  auto s = cubic_spec();
  s.aggregation = Aggregation::parabolic;
  const auto resolved = resolve_aggregation(db, s, {});
  auto sc = raw_scale(true);
  const auto w = parabolic_weights(std::get<ScaleFit>(fit_model(db, sc)));
  ASSERT_EQ(resolved.factor_weights.size(), w.size());
  for (std::size_t j = 0; j < w.size(); ++j) EXPECT_NEAR(resolved.factor_weights[j], w[j], 1e-12);
}

// --- engine -------------------------------------------------------------------------

TEST(Engine, IntegerDayWeightsEqualDuplicatedDays) {
  const auto db = random_db(60, 2, 7);
  std::vector<double> w(60);
  SignalDatabase dup;
  dup.markets = db.markets;
  std::int64_t label = 0;
  for (std::size_t d = 0; d < 60; ++d) {
    w[d] = static_cast<double>(d % 3);
    for (int c = 0; c < static_cast<int>(w[d]); ++c) {
      ++label;
      for (std::size_t m = 0; m < 2; ++m) {
        auto r = db.rows[d * 2 + m];
        r.day = label;
        dup.rows.push_back(r);
      }
    }
  }
  const auto spec = raw_scale();
  const FitEngine engine(spec, build_day_stats(db, spec));
  const auto a = std::get<ScaleFit>(engine.fit(w));
  const auto b = std::get<ScaleFit>(fit_model(dup, spec));
  EXPECT_LT(rel(a.b, b.b), 1e-10);
  EXPECT_LT(rel(a.k0, b.k0), 1e-10);
}

TEST(Engine, RowFilterRestrictsScope) {
  const auto db = random_db(100, 2, 8);
  SignalDatabase half;
  half.markets = db.markets;
  for (const auto& r : db.rows)
    if (r.day <= 50) half.rows.push_back(r);
  const auto spec = raw_scale();
  const auto a = std::get<ScaleFit>(fit_model(db, spec, {}, [](const SignalRow& r) { return r.day <= 50; }));
  const auto b = std::get<ScaleFit>(fit_model(half, spec));
  EXPECT_LT(rel(a.c, b.c), 1e-12);
}

TEST(Engine, EmptyScopeRejected) {
  const auto db = random_db(10, 1, 9);
  EXPECT_THROW(fit_model(db, raw_scale(), {}, [](const SignalRow&) { return false; }), Error);
}

TEST(Spec, Validation) {
  auto s = scale_spec();
  s.scales = {0};
  EXPECT_THROW(s.validate(), Error);
  s = cubic_spec();
  s.powers = {6};
  EXPECT_THROW(s.validate(), Error);
  s = scale_spec();
  s.aggregation = Aggregation::equal;
  EXPECT_THROW(s.validate(), Error);
  EXPECT_EQ(parse_model_kind("decay-exp"), ModelKind::decay_exp);
  EXPECT_THROW(parse_model_kind("quadratic"), Error);
}

TEST(Spec, CoefficientNames) {
  std::vector<std::string> names;
  for (const auto& [n, v] : coefficients(FitResult(DecayFit{}))) names.push_back(n);
  EXPECT_EQ(names, (std::vector<std::string>{"b_bar", "c_bar", "k0", "delta_k", "Q_b", "Q_c"}));
}
