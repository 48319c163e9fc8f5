#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <boost/math/tools/minima.hpp>

#include "trendrev/common.hpp"
#include "trendrev/least_squares.hpp"
#include "trendrev/signal_database.hpp"

namespace trendrev {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

/// Scale index around which k is centered inside the scale and decay fits.
inline constexpr double kScaleCenter = 5.5;

enum class ModelKind { cubic, scale, decay_linear, decay_exp };
enum class Response { raw, excess };
enum class Aggregation { none, equal, parabolic };

inline std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::cubic: return "cubic";
    case ModelKind::scale: return "scale";
    case ModelKind::decay_linear: return "decay";
    case ModelKind::decay_exp: return "decay-exp";
  }
  return "?";
}

inline ModelKind parse_model_kind(std::string_view s) {
  if (s == "cubic") return ModelKind::cubic;
  if (s == "scale") return ModelKind::scale;
  if (s == "decay") return ModelKind::decay_linear;
  if (s == "decay-exp") return ModelKind::decay_exp;
  throw Error("unknown model '" + std::string(s) + "' (expected cubic, scale, decay, decay-exp)");
}

/// Search range for the decay rate of b (per year).
struct DecayOptions {
  double q_min = -0.3;
  double q_max = 0.3;
  int q_grid = 121;
  bool force_zero = false;  ///< Q_b = Q_c = 0; reduces to the scale model
};

struct ModelSpec {
  ModelKind kind = ModelKind::scale;
  std::vector<int> powers = {0, 1, 3};  ///< cubic: powers of phi in the design (0 = intercept)
  bool intercept = false;               ///< scale/decay: pooled intercept a
  Response response = Response::excess;
  std::vector<int> scales = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  /// cubic only: regress on one aggregated factor per row instead of pooling
  /// the (row, scale) pairs. Weights are per selected scale.
  Aggregation aggregation = Aggregation::none;
  std::vector<double> factor_weights;
  DecayOptions decay;
  std::optional<double> time_origin;  ///< day label of t = 0; default mid-range

  bool has_intercept_power() const {
    return kind == ModelKind::cubic ? std::find(powers.begin(), powers.end(), 0) != powers.end() : intercept;
  }

  bool is_decay() const { return kind == ModelKind::decay_linear || kind == ModelKind::decay_exp; }

  void validate() const {
    if (scales.empty()) throw Error("model spec: no scales selected");
    for (int k : scales)
      if (k < 1 || k > kNumScales) throw Error("model spec: scale index " + std::to_string(k) + " outside 1..10");
    if (kind == ModelKind::cubic) {
      if (powers.empty()) throw Error("model spec: empty regressor mask");
      for (int p : powers)
        if (p < 0 || p > 5) throw Error("model spec: mask power " + std::to_string(p) + " outside 0..5");
    } else if (aggregation != Aggregation::none) {
      throw Error("model spec: aggregation applies to the cubic model only");
    }
    if (!factor_weights.empty() && factor_weights.size() != scales.size())
      throw Error("model spec: need one factor weight per selected scale");
    if (is_decay() && !(decay.q_max > decay.q_min && decay.q_grid >= 3)) throw Error("model spec: bad decay grid");
  }
};

/// Default specs of the three standard regressions.
inline ModelSpec cubic_spec() {
  ModelSpec s;
  s.kind = ModelKind::cubic;
  s.powers = {0, 1, 3};
  s.response = Response::raw;
  return s;
}

inline ModelSpec scale_spec() { return ModelSpec{}; }

inline ModelSpec decay_spec(bool exponential = false) {
  ModelSpec s;
  s.kind = exponential ? ModelKind::decay_exp : ModelKind::decay_linear;
  return s;
}

// --- fit results --------------------------------------------------------------

namespace flag {
inline constexpr const char* no_concavity = "no_concavity";                  // beta2 >= 0
inline constexpr const char* nonpositive_peak = "nonpositive_peak";          // b <= 0 at the vertex
inline constexpr const char* no_critical_strength = "no_critical_strength";  // b*c >= 0
inline constexpr const char* q_b_unidentified = "Q_b_unidentified";
inline constexpr const char* q_at_grid_edge = "Q_at_grid_edge";
inline constexpr const char* q_c_undefined = "Q_c_undefined";
}  // namespace flag

/// R = sum_p coef[p] phi^p; powers outside the mask hold 0.
struct CubicFit {
  std::vector<int> powers;
  std::array<double, 6> coef{};
  double r_squared = 0.0;
  double ssr = 0.0;
  double n = 0.0;
  std::vector<std::string> flags;

  double a() const { return coef[0]; }
  double b() const { return coef[1]; }
  double d() const { return coef[2]; }
  double c() const { return coef[3]; }
  bool has(int p) const { return std::find(powers.begin(), powers.end(), p) != powers.end(); }
  bool degenerate() const { return false; }
};

/// R = a + b(k) phi + c phi^3 with b(k) = b - e (k - k0)^2.
struct ScaleFit {
  double a = 0.0;
  double b = kNaN;
  double c = 0.0;
  double k0 = kNaN;
  double delta_k = kNaN;
  double e = kNaN;
  std::array<double, 3> beta{};  ///< b(k) = beta0 + beta1 k + beta2 k^2
  bool has_intercept = false;
  double r_squared = 0.0;
  double ssr = 0.0;
  double n = 0.0;
  std::vector<std::string> flags;

  double b_of_k(double k) const { return beta[0] + beta[1] * k + beta[2] * k * k; }
  bool has_flag(std::string_view f) const { return std::find(flags.begin(), flags.end(), f) != flags.end(); }
  bool degenerate() const { return has_flag(flag::no_concavity) || has_flag(flag::nonpositive_peak); }

  /// Builds the model from its ellipse parameters.
  static ScaleFit from_parameters(double b, double c, double k0, double delta_k, double a = 0.0) {
    if (!(delta_k > 0.0)) throw Error("scale model: delta_k must be positive");
    ScaleFit f;
    f.a = a;
    f.b = b;
    f.c = c;
    f.k0 = k0;
    f.delta_k = delta_k;
    f.e = b / (delta_k * delta_k);
    f.beta = {b - f.e * k0 * k0, 2.0 * f.e * k0, -f.e};
    return f;
  }
};

enum class DecayScenario { linear, exponential };

/// b(k, t) = g(t) [b_bar - e (k - k0)^2], g = 1 - Q_b t or exp(-Q_b t);
/// c(t) = c_bar (1 - Q_c t); t in years from time_origin.
struct DecayFit {
  DecayScenario scenario = DecayScenario::linear;
  double a = 0.0;
  double b_bar = kNaN;
  double c_bar = 0.0;
  double k0 = kNaN;
  double delta_k = kNaN;
  double e = kNaN;
  double Q_b = 0.0;
  double Q_c = 0.0;
  std::array<double, 3> beta{};
  double time_origin = 0.0;  ///< day label mapped to t = 0
  bool has_intercept = false;
  double r_squared = 0.0;
  double ssr = 0.0;
  double n = 0.0;
  std::vector<std::string> flags;

  double g(double t) const { return scenario == DecayScenario::linear ? 1.0 - Q_b * t : std::exp(-Q_b * t); }
  double b_of(double k, double t) const { return g(t) * (beta[0] + beta[1] * k + beta[2] * k * k); }
  double c_of(double t) const { return c_bar * (1.0 - Q_c * t); }
  bool has_flag(std::string_view f) const { return std::find(flags.begin(), flags.end(), f) != flags.end(); }
  bool degenerate() const {
    return has_flag(flag::no_concavity) || has_flag(flag::nonpositive_peak) || has_flag(flag::q_b_unidentified);
  }
};

using FitResult = std::variant<CubicFit, ScaleFit, DecayFit>;

inline bool is_degenerate(const FitResult& f) {
  return std::visit([](const auto& x) { return x.degenerate(); }, f);
}

inline double r_squared_of(const FitResult& f) {
  return std::visit([](const auto& x) { return x.r_squared; }, f);
}

/// Named coefficients reported for a fit, in a fixed order.
inline std::vector<std::pair<std::string, double>> coefficients(const FitResult& fit) {
  std::vector<std::pair<std::string, double>> out;
  if (const auto* f = std::get_if<CubicFit>(&fit)) {
    static constexpr const char* names[6] = {"a", "b", "d", "c", "quartic", "quintic"};
    for (int p : {0, 1, 2, 3, 4, 5})
      if (f->has(p)) out.emplace_back(names[p], f->coef[static_cast<std::size_t>(p)]);
  } else if (const auto* f = std::get_if<ScaleFit>(&fit)) {
    if (f->has_intercept) out.emplace_back("a", f->a);
    out.insert(out.end(), {{"b", f->b}, {"c", f->c}, {"k0", f->k0}, {"delta_k", f->delta_k}});
  } else if (const auto* f = std::get_if<DecayFit>(&fit)) {
    if (f->has_intercept) out.emplace_back("a", f->a);
    out.insert(out.end(), {{"b_bar", f->b_bar}, {"c_bar", f->c_bar}, {"k0", f->k0}, {"delta_k", f->delta_k},
                           {"Q_b", f->Q_b}, {"Q_c", f->Q_c}});
  }
  return out;
}

// --- geometry and prediction --------------------------------------------------

/// phi_c = sqrt(-b/c); empty when b*c >= 0.
inline std::optional<double> critical_strength(double b, double c) {
  if (!(b * c < 0.0)) return std::nullopt;
  return std::sqrt(-b / c);
}

struct Ellipse {
  double k0;
  double delta_k;      ///< semi-axis along k
  double phi_c_at_k0;  ///< semi-axis along phi
};

inline std::optional<Ellipse> ellipse_of(const ScaleFit& fit) {
  if (fit.degenerate()) return std::nullopt;
  const auto pc = critical_strength(fit.b, fit.c);
  if (!pc) return std::nullopt;
  return Ellipse{fit.k0, fit.delta_k, *pc};
}

/// phi_c(k) = sqrt(-b(k)/c) where b(k) > 0 and c < 0; empty elsewhere.
inline std::vector<std::optional<double>> ellipse_boundary(const ScaleFit& fit, std::span<const double> ks) {
  std::vector<std::optional<double>> out;
  out.reserve(ks.size());
  for (double k : ks) {
    const double bk = fit.b_of_k(k);
    out.push_back(bk > 0.0 ? critical_strength(bk, fit.c) : std::nullopt);
  }
  return out;
}

inline std::vector<double> equal_weights(std::size_t n) { return std::vector<double>(n, 1.0 / static_cast<double>(n)); }

/// Weights proportional to max(b(k), 0) over `scales`, normalized to sum 1.
inline std::vector<double> parabolic_weights(const ScaleFit& fit, std::span<const int> scales) {
  std::vector<double> w(scales.size());
  double s = 0.0;
  for (std::size_t j = 0; j < scales.size(); ++j) s += (w[j] = std::max(fit.b_of_k(scales[j]), 0.0));
  if (!(s > 0.0)) throw Error("parabolic weighting: b(k) is non-positive on every selected scale");
  for (auto& x : w) x /= s;
  return w;
}

inline std::vector<double> parabolic_weights(const ScaleFit& fit) {
  std::vector<int> all(kNumScales);
  std::iota(all.begin(), all.end(), 1);
  return parabolic_weights(fit, all);
}

/// Weighted mean of the trend strengths; `weights` need not be normalized.
inline double aggregate_factor(std::span<const double> phi, std::span<const double> weights) {
  if (phi.size() != weights.size() || phi.empty()) throw Error("aggregate_factor: need one weight per trend strength");
  double s = 0.0, sw = 0.0;
  for (std::size_t j = 0; j < phi.size(); ++j) {
    s += weights[j] * phi[j];
    sw += weights[j];
  }
  if (sw == 0.0) throw Error("aggregate_factor: all weights are zero");
  return s / sw;
}

inline double predict(const CubicFit& fit, double phi, std::optional<double> alpha = {}) {
  double y = alpha.value_or(fit.coef[0]), x = 1.0;
  for (std::size_t p = 1; p < 6; ++p) y += fit.coef[p] * (x *= phi);
  return y;
}

inline double predict(const ScaleFit& fit, double phi, double k, std::optional<double> alpha = {}) {
  return alpha.value_or(fit.a) + fit.b_of_k(k) * phi + fit.c * phi * phi * phi;
}

inline double predict(const DecayFit& fit, double phi, double k, double t_years, std::optional<double> alpha = {}) {
  return alpha.value_or(fit.a) + fit.b_of(k, t_years) * phi + fit.c_of(t_years) * phi * phi * phi;
}

// --- per-day sufficient statistics --------------------------------------------

/// Cross-products of the base regressors accumulated per day. Layout per day:
/// packed upper X'X, X'y, y'y, sum y, count.
struct DayStats {
  std::vector<std::string> names;
  std::vector<std::int64_t> days;
  std::vector<double> t;  ///< years from the time origin
  std::vector<double> data;
  double time_origin = 0.0;

  std::size_t p() const { return names.size(); }
  std::size_t n_days() const { return days.size(); }
  std::size_t stride() const { return p() * (p() + 1) / 2 + p() + 3; }
  std::size_t xty_offset() const { return p() * (p() + 1) / 2; }

  void begin_day(std::int64_t day, double t_years) {
    days.push_back(day);
    t.push_back(t_years);
    data.resize(data.size() + stride(), 0.0);
  }

  void add(std::span<const double> z, double y) {
    double* s = data.data() + data.size() - stride();
    const std::size_t P = p();
    std::size_t idx = 0;
    for (std::size_t i = 0; i < P; ++i)
      for (std::size_t j = i; j < P; ++j) s[idx++] += z[i] * z[j];
    for (std::size_t i = 0; i < P; ++i) s[idx++] += z[i] * y;
    s[idx++] += y * y;
    s[idx++] += y;
    s[idx] += 1.0;
  }

  /// sum_d w_d m(t_d) S_d; empty weights mean all ones.
  template <class F>
  std::vector<double> accumulate(std::span<const double> w, F&& m) const {
    const std::size_t S = stride();
    std::vector<double> out(S, 0.0);
    for (std::size_t d = 0; d < days.size(); ++d) {
      const double f = (w.empty() ? 1.0 : w[d]) * m(t[d]);
      if (f == 0.0) continue;
      const double* s = data.data() + d * S;
      for (std::size_t j = 0; j < S; ++j) out[j] += f * s[j];
    }
    return out;
  }
};

namespace detail {

// Packed index of (i, j), i <= j, in a p x p upper triangle stored row by row.
inline std::size_t packed(std::size_t p, std::size_t i, std::size_t j) {
  if (i > j) std::swap(i, j);
  return i * p - i * (i + 1) / 2 + j;
}

}  // namespace detail

/// Base regressor names for a spec.
inline std::vector<std::string> base_regressors(const ModelSpec& spec) {
  if (spec.kind == ModelKind::cubic) {
    static constexpr const char* names[6] = {"1", "phi", "phi^2", "phi^3", "phi^4", "phi^5"};
    auto powers = spec.powers;
    std::sort(powers.begin(), powers.end());
    powers.erase(std::unique(powers.begin(), powers.end()), powers.end());
    std::vector<std::string> out;
    for (int p : powers) out.emplace_back(names[p]);
    return out;
  }
  std::vector<std::string> out;
  if (spec.intercept) out.emplace_back("1");
  out.insert(out.end(), {"phi", "k*phi", "k^2*phi", "phi^3"});
  return out;
}

/// Regressor values for one (phi, k) pair; k is ignored by the cubic model.
struct RegressorMap {
  std::vector<int> powers;  // cubic, sorted unique
  bool cubic = false;
  bool intercept = false;

  explicit RegressorMap(const ModelSpec& spec) : cubic(spec.kind == ModelKind::cubic), intercept(spec.intercept) {
    powers = spec.powers;
    std::sort(powers.begin(), powers.end());
    powers.erase(std::unique(powers.begin(), powers.end()), powers.end());
  }

  void operator()(double phi, double k, std::vector<double>& z) const {
    z.clear();
    if (cubic) {
      for (int p : powers) z.push_back(std::pow(phi, p));
      return;
    }
    const double kc = k - kScaleCenter;
    if (intercept) z.push_back(1.0);
    z.push_back(phi);
    z.push_back(kc * phi);
    z.push_back(kc * kc * phi);
    z.push_back(phi * phi * phi);
  }
};

/// Mean of R per market over the database; stands in for mu/sigma when the
/// panel is not at hand.
inline std::vector<double> database_premia(const SignalDatabase& db) {
  std::vector<double> s(db.n_markets(), 0.0), n(db.n_markets(), 0.0);
  for (const auto& r : db.rows) {
    s[r.market] += r.ret;
    n[r.market] += 1.0;
  }
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = n[i] > 0.0 ? s[i] / n[i] : 0.0;
  return s;
}

inline double default_time_origin(const SignalDatabase& db) {
  if (db.rows.empty()) return 0.0;
  return 0.5 * static_cast<double>(db.rows.front().day + db.rows.back().day);
}

using RowFilter = std::function<bool(const SignalRow&)>;

/// Builds per-day statistics over the rows accepted by `include` (all rows if
/// empty). `premia` holds mu/sigma per market for excess responses; when empty
/// the database means are used.
inline DayStats build_day_stats(const SignalDatabase& db, const ModelSpec& spec, std::span<const double> premia = {},
                                const RowFilter& include = {}) {
  spec.validate();
  std::vector<double> fallback;
  if (spec.response == Response::excess && premia.empty()) {
    fallback = database_premia(db);
    premia = fallback;
  }
  if (spec.response == Response::excess && premia.size() != db.n_markets())
    throw Error("build_day_stats: need one premium per market");

  if (spec.aggregation != Aggregation::none && spec.factor_weights.empty())
    throw Error("build_day_stats: aggregated model without factor weights (resolve the aggregation first)");
  DayStats st;
  st.names = base_regressors(spec);
  st.time_origin = spec.time_origin.value_or(default_time_origin(db));
  const RegressorMap map(spec);
  std::vector<double> z;
  std::vector<double> phis(spec.scales.size());
  std::int64_t current = std::numeric_limits<std::int64_t>::min();
  for (const auto& r : db.rows) {
    if (include && !include(r)) continue;
    if (r.day != current) {
      current = r.day;
      st.begin_day(r.day, (static_cast<double>(r.day) - st.time_origin) / kBusinessDaysPerYear);
    }
    const double y = spec.response == Response::excess ? r.ret - premia[r.market] : r.ret;
    if (spec.aggregation != Aggregation::none) {
      for (std::size_t j = 0; j < spec.scales.size(); ++j) phis[j] = r.phi[static_cast<std::size_t>(spec.scales[j] - 1)];
      map(aggregate_factor(phis, spec.factor_weights), 0.0, z);
      st.add(z, y);
      continue;
    }
    for (int k : spec.scales) {
      map(r.phi[static_cast<std::size_t>(k - 1)], static_cast<double>(k), z);
      st.add(z, y);
    }
  }
  return st;
}

// --- fitting ------------------------------------------------------------------

namespace detail {

enum Mult : int { one = 0, tm = 1, gm = 2 };

struct Term {
  std::size_t base;
  Mult mult;
};

// Weighted moment sums: A[0] = 1, A[1] = t, A[2] = t^2, A[3] = g, A[4] = g t, A[5] = g^2.
using Moments = std::array<std::vector<double>, 6>;

inline const std::vector<double>& moment_for(const Moments& A, Mult a, Mult b) {
  if (a > b) std::swap(a, b);
  if (a == one && b == one) return A[0];
  if (a == one && b == tm) return A[1];
  if (a == tm && b == tm) return A[2];
  if (a == one && b == gm) return A[3];
  if (a == tm && b == gm) return A[4];
  return A[5];
}

inline NormalEquations derived_equations(const DayStats& st, const Moments& A, std::span<const Term> terms) {
  const std::size_t P = st.p(), q = terms.size(), yo = st.xty_offset();
  NormalEquations ne(q);
  for (std::size_t i = 0; i < q; ++i) {
    for (std::size_t j = i; j < q; ++j) {
      const auto& M = moment_for(A, terms[i].mult, terms[j].mult);
      ne.at(i, j) = ne.at(j, i) = M[packed(P, terms[i].base, terms[j].base)];
    }
    const auto& My = moment_for(A, terms[i].mult, one);
    ne.xty[i] = My[yo + terms[i].base];
  }
  ne.yty = A[0][yo + P];
  ne.sum_y = A[0][yo + P + 1];
  ne.count = A[0][yo + P + 2];
  return ne;
}

inline NormalEquations plain_equations(const DayStats& st, const std::vector<double>& A0) {
  const std::size_t P = st.p(), yo = st.xty_offset();
  NormalEquations ne(P);
  for (std::size_t i = 0; i < P; ++i) {
    for (std::size_t j = i; j < P; ++j) ne.at(i, j) = ne.at(j, i) = A0[packed(P, i, j)];
    ne.xty[i] = A0[yo + i];
  }
  ne.yty = A0[yo + P];
  ne.sum_y = A0[yo + P + 1];
  ne.count = A0[yo + P + 2];
  return ne;
}

// Parabola in centered k -> ellipse parameters, flags.
template <class Fit>
void set_parabola(Fit& f, double g0, double g1, double g2, double& peak) {
  const double kc = kScaleCenter;
  f.beta = {g0 - kc * g1 + kc * kc * g2, g1 - 2.0 * kc * g2, g2};
  const double e = -g2;
  const double scale = std::max({std::abs(g0), std::abs(g1), std::abs(g2)});
  if (!(e > 1e-12 * scale)) {
    f.flags.emplace_back(flag::no_concavity);
    peak = kNaN;
    return;
  }
  f.e = e;
  f.k0 = kc + g1 / (2.0 * e);
  peak = g0 + g1 * g1 / (4.0 * e);
  if (!(peak > 0.0)) {
    f.flags.emplace_back(flag::nonpositive_peak);
    return;
  }
  f.delta_k = std::sqrt(peak / e);
}

}  // namespace detail

/// Fits one model from shared per-day statistics; day weights (bootstrap
/// counts) may be supplied per fit.
class FitEngine {
 public:
  FitEngine(ModelSpec spec, DayStats stats) : spec_(std::move(spec)), st_(std::move(stats)) {
    spec_.validate();
    if (st_.n_days() == 0) throw Error("fit: no data in scope");
  }

  const ModelSpec& spec() const { return spec_; }
  const DayStats& stats() const { return st_; }

  FitResult fit() const { return fit({}); }

  FitResult fit(std::span<const double> day_weights) const {
    if (!day_weights.empty() && day_weights.size() != st_.n_days()) throw Error("fit: one weight per day required");
    const auto A0 = st_.accumulate(day_weights, [](double) { return 1.0; });
    switch (spec_.kind) {
      case ModelKind::cubic: return fit_cubic(A0);
      case ModelKind::scale: return fit_scale(A0);
      default: return fit_decay(A0, day_weights);
    }
  }

 private:
  std::size_t offset() const { return spec_.intercept ? 1 : 0; }

  CubicFit fit_cubic(const std::vector<double>& A0) const {
    const auto ne = detail::plain_equations(st_, A0);
    const auto sol = solve_normal_equations(ne, st_.names);
    CubicFit f;
    const RegressorMap map(spec_);
    f.powers = map.powers;
    for (std::size_t i = 0; i < f.powers.size(); ++i) f.coef[static_cast<std::size_t>(f.powers[i])] = sol.beta[i];
    f.r_squared = sol.r_squared;
    f.ssr = sol.ssr;
    f.n = ne.count;
    if (f.has(1) && f.has(3) && !critical_strength(f.b(), f.c())) f.flags.emplace_back(flag::no_critical_strength);
    return f;
  }

  ScaleFit fit_scale(const std::vector<double>& A0) const {
    const auto ne = detail::plain_equations(st_, A0);
    const auto sol = solve_normal_equations(ne, st_.names);
    const std::size_t o = offset();
    ScaleFit f;
    f.has_intercept = spec_.intercept;
    f.a = spec_.intercept ? sol.beta[0] : 0.0;
    f.c = sol.beta[o + 3];
    detail::set_parabola(f, sol.beta[o], sol.beta[o + 1], sol.beta[o + 2], f.b);
    f.r_squared = sol.r_squared;
    f.ssr = sol.ssr;
    f.n = ne.count;
    if (!critical_strength(f.b, f.c)) f.flags.emplace_back(flag::no_critical_strength);
    return f;
  }

  std::vector<detail::Term> decay_terms() const {
    using detail::Term;
    const std::size_t o = offset();
    std::vector<Term> terms;
    const bool zero = spec_.decay.force_zero;
    if (spec_.intercept) terms.push_back({0, detail::one});
    for (std::size_t j = 0; j < 3; ++j) terms.push_back({o + j, zero ? detail::one : detail::gm});
    terms.push_back({o + 3, detail::one});
    if (!zero) terms.push_back({o + 3, detail::tm});
    return terms;
  }

  DecayFit fit_decay(const std::vector<double>& A0, std::span<const double> w) const {
    const bool linear = spec_.kind == ModelKind::decay_linear;
    detail::Moments A;
    A[0] = A0;
    A[1] = st_.accumulate(w, [](double t) { return t; });
    A[2] = st_.accumulate(w, [](double t) { return t * t; });
    const auto terms = decay_terms();

    auto set_q = [&](double Q) {
      const std::size_t S = A0.size();
      if (linear) {
        for (std::size_t k = 3; k < 6; ++k) A[k].resize(S);
        for (std::size_t j = 0; j < S; ++j) {
          A[3][j] = A[0][j] - Q * A[1][j];
          A[4][j] = A[1][j] - Q * A[2][j];
          A[5][j] = A[0][j] - 2.0 * Q * A[1][j] + Q * Q * A[2][j];
        }
      } else {
        A[3] = st_.accumulate(w, [Q](double t) { return std::exp(-Q * t); });
        A[4] = st_.accumulate(w, [Q](double t) { return t * std::exp(-Q * t); });
        A[5] = st_.accumulate(w, [Q](double t) { return std::exp(-2.0 * Q * t); });
      }
    };
    std::vector<std::string> names;
    for (const auto& tm : terms)
      names.push_back((tm.mult == detail::gm ? "g(t)*" : tm.mult == detail::tm ? "t*" : "") + st_.names[tm.base]);

    auto solve_at = [&](double Q) {
      set_q(Q);
      return solve_normal_equations(detail::derived_equations(st_, A, terms), names);
    };
    auto ssr_at = [&](double Q) {
      try {
        return solve_at(Q).ssr;
      } catch (const CollinearityError&) {
        return std::numeric_limits<double>::infinity();
      }
    };

    DecayFit f;
    f.scenario = linear ? DecayScenario::linear : DecayScenario::exponential;
    f.has_intercept = spec_.intercept;
    f.time_origin = st_.time_origin;
    double Q = 0.0;
    if (!spec_.decay.force_zero) {
      const auto& o = spec_.decay;
      const double h = (o.q_max - o.q_min) / (o.q_grid - 1);
      std::vector<double> ssr(static_cast<std::size_t>(o.q_grid));
      std::size_t best = 0;
      for (std::size_t i = 0; i < ssr.size(); ++i) {
        ssr[i] = ssr_at(o.q_min + h * static_cast<double>(i));
        if (ssr[i] < ssr[best]) best = i;
      }
      if (!std::isfinite(ssr[best])) throw CollinearityError("decay fit: design singular at every grid rate");
      const auto [lo_it, hi_it] = std::minmax_element(ssr.begin(), ssr.end());
      if (*hi_it - *lo_it <= 1e-12 * std::max(*lo_it, 1e-300)) f.flags.emplace_back(flag::q_b_unidentified);
      if (best == 0 || best + 1 == ssr.size()) {
        f.flags.emplace_back(flag::q_at_grid_edge);
        Q = o.q_min + h * static_cast<double>(best);
      } else {
        const double lo = o.q_min + h * static_cast<double>(best - 1);
        const double hi = o.q_min + h * static_cast<double>(best + 1);
        std::uintmax_t iters = 200;
        Q = boost::math::tools::brent_find_minima(ssr_at, lo, hi, std::numeric_limits<double>::digits, iters).first;
      }
    }
    const auto sol = solve_at(Q);
    std::size_t i = 0;
    if (spec_.intercept) f.a = sol.beta[i++];
    const double g0 = sol.beta[i], g1 = sol.beta[i + 1], g2 = sol.beta[i + 2];
    i += 3;
    f.c_bar = sol.beta[i++];
    const double ctv = spec_.decay.force_zero ? 0.0 : sol.beta[i];
    f.Q_b = Q;
    if (f.c_bar != 0.0) {
      f.Q_c = -ctv / f.c_bar;
    } else {
      f.Q_c = kNaN;
      f.flags.emplace_back(flag::q_c_undefined);
    }
    detail::set_parabola(f, g0, g1, g2, f.b_bar);
    if (std::abs(f.b_bar) <= 1e-12 * std::max({std::abs(g0), std::abs(g1), std::abs(g2), 1e-300}) &&
        !f.has_flag(flag::q_b_unidentified) && !spec_.decay.force_zero)
      f.flags.emplace_back(flag::q_b_unidentified);
    f.r_squared = sol.r_squared;
    f.ssr = sol.ssr;
    f.n = A0[st_.stride() - 1];
    if (!critical_strength(f.b_bar, f.c_bar)) f.flags.emplace_back(flag::no_critical_strength);
    return f;
  }

  ModelSpec spec_;
  DayStats st_;
};

ModelSpec resolve_aggregation(const SignalDatabase& db, ModelSpec spec, std::span<const double> premia,
                              const RowFilter& include = {});

/// Point fit on the rows accepted by `include`.
inline FitResult fit_model(const SignalDatabase& db, const ModelSpec& spec, std::span<const double> premia = {},
                           const RowFilter& include = {}) {
  const auto s = resolve_aggregation(db, spec, premia, include);
  return FitEngine(s, build_day_stats(db, s, premia, include)).fit();
}

/// Fills missing factor weights: equal, or proportional to the positive part
/// of b(k) from a scale fit on the same rows.
inline ModelSpec resolve_aggregation(const SignalDatabase& db, ModelSpec spec, std::span<const double> premia,
                                     const RowFilter& include) {
  if (spec.aggregation == Aggregation::equal && spec.factor_weights.empty()) {
    spec.factor_weights = equal_weights(spec.scales.size());
  } else if (spec.aggregation == Aggregation::parabolic && spec.factor_weights.empty()) {
    ModelSpec s = scale_spec();
    s.response = spec.response;
    s.scales = spec.scales;
    s.intercept = spec.has_intercept_power();
    const auto fit = std::get<ScaleFit>(fit_model(db, s, premia, include));
    spec.factor_weights = parabolic_weights(fit, spec.scales);
  }
  return spec;
}

// --- list-based entry points --------------------------------------------------

struct CubicPair {
  double y;
  double phi;
};

struct ScaleTriple {
  double y;
  double phi;
  double k;
};

struct DecayQuad {
  double y;
  double phi;
  double k;
  double t;  ///< years from the time origin
};

/// OLS on the powers of phi in `mask` (0 = intercept).
inline CubicFit fit_cubic(std::span<const CubicPair> pairs, std::vector<int> mask = {0, 1, 3}) {
  if (pairs.size() < 10) throw Error("fit_cubic: need at least 10 pairs");
  ModelSpec spec = cubic_spec();
  spec.powers = std::move(mask);
  spec.validate();
  DayStats st;
  st.names = base_regressors(spec);
  st.begin_day(0, 0.0);
  const RegressorMap map(spec);
  std::vector<double> z;
  for (const auto& p : pairs) {
    map(p.phi, 0.0, z);
    st.add(z, p.y);
  }
  return std::get<CubicFit>(FitEngine(spec, std::move(st)).fit());
}

namespace detail {

template <class Range, class K>
std::size_t distinct_count(const Range& r, K key) {
  std::vector<double> v;
  for (const auto& x : r) v.push_back(key(x));
  std::sort(v.begin(), v.end());
  return static_cast<std::size_t>(std::unique(v.begin(), v.end()) - v.begin());
}

}  // namespace detail

inline ScaleFit fit_scale_model(std::span<const ScaleTriple> triples, bool intercept = false) {
  if (detail::distinct_count(triples, [](const ScaleTriple& x) { return x.k; }) < 3)
    throw Error("fit_scale_model: need at least 3 distinct scales");
  ModelSpec spec;
  spec.intercept = intercept;
  DayStats st;
  st.names = base_regressors(spec);
  st.begin_day(0, 0.0);
  const RegressorMap map(spec);
  std::vector<double> z;
  for (const auto& p : triples) {
    map(p.phi, p.k, z);
    st.add(z, p.y);
  }
  return std::get<ScaleFit>(FitEngine(spec, std::move(st)).fit());
}

inline DecayFit fit_decay_model(std::span<const DecayQuad> quads, DecayScenario scenario = DecayScenario::linear,
                                DecayOptions options = {}, bool intercept = false) {
  if (detail::distinct_count(quads, [](const DecayQuad& x) { return x.k; }) < 3)
    throw Error("fit_decay_model: need at least 3 distinct scales");
  if (detail::distinct_count(quads, [](const DecayQuad& x) { return x.t; }) < 2)
    throw Error("fit_decay_model: need at least 2 distinct times");
  ModelSpec spec = decay_spec(scenario == DecayScenario::exponential);
  spec.intercept = intercept;
  spec.decay = options;
  spec.time_origin = 0.0;
  std::vector<std::size_t> order(quads.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return quads[a].t < quads[b].t; });
  DayStats st;
  st.names = base_regressors(spec);
  const RegressorMap map(spec);
  std::vector<double> z;
  std::int64_t label = 0;
  for (std::size_t j = 0; j < order.size(); ++j) {
    const auto& q = quads[order[j]];
    if (j == 0 || q.t != quads[order[j - 1]].t) st.begin_day(label++, q.t);
    map(q.phi, q.k, z);
    st.add(z, q.y);
  }
  return std::get<DecayFit>(FitEngine(spec, std::move(st)).fit());
}

}  // namespace trendrev
