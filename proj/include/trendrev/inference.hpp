#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "trendrev/common.hpp"
#include "trendrev/market_data.hpp"
#include "trendrev/model_fit.hpp"
#include "trendrev/signal_database.hpp"
#include "trendrev/trend.hpp"

namespace trendrev {

namespace detail {

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Each index owns its
/// output slot, so results do not depend on the thread count.
template <class Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, n));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (unsigned w = 0; w < threads; ++w)
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += threads) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace detail

// --- bootstrap ----------------------------------------------------------------

struct CoefficientSummary {
  std::string name;
  double point = 0.0;
  double p16 = kNaN;
  double p50 = kNaN;
  double p84 = kNaN;
  double error = kNaN;   ///< (p84 - p16) / 2
  double t_stat = kNaN;  ///< point / error
};

struct BootstrapResult {
  std::size_t n_samples = 0;
  std::uint64_t seed = 0;
  FitResult point;
  std::vector<std::string> names;
  std::vector<std::vector<double>> draws;  ///< per replicate; empty when excluded
  std::size_t n_excluded = 0;
  std::vector<CoefficientSummary> summary;

  /// More than 1% excluded replicates invalidates the percentiles.
  bool valid() const { return static_cast<double>(n_excluded) <= 0.01 * static_cast<double>(n_samples); }

  std::vector<double> column(std::size_t j) const {
    std::vector<double> v;
    for (const auto& d : draws)
      if (!d.empty()) v.push_back(d[j]);
    return v;
  }

  const CoefficientSummary& operator[](std::string_view name) const {
    for (const auto& s : summary)
      if (s.name == name) return s;
    throw Error("bootstrap: no coefficient named '" + std::string(name) + "'");
  }
};

/// Multinomial day counts for replicate r.
inline std::vector<double> resample_counts(std::size_t n_days, std::uint64_t seed, std::size_t replicate) {
  std::mt19937_64 rng(derive_seed(seed, "bootstrap", replicate));
  std::uniform_int_distribution<std::size_t> pick(0, n_days - 1);
  std::vector<double> w(n_days, 0.0);
  for (std::size_t i = 0; i < n_days; ++i) w[pick(rng)] += 1.0;
  return w;
}

/// Day-block bootstrap: each replicate draws whole days with replacement and
/// refits from the shared per-day statistics.
inline BootstrapResult bootstrap(const FitEngine& engine, std::size_t n_samples, std::uint64_t seed,
                                 unsigned threads = 0) {
  if (n_samples < 1) throw Error("bootstrap: need at least one sample");
  BootstrapResult res;
  res.n_samples = n_samples;
  res.seed = seed;
  res.point = engine.fit();
  const auto point = coefficients(res.point);
  for (const auto& [name, v] : point) res.names.push_back(name);
  res.draws.assign(n_samples, {});

  const std::size_t D = engine.stats().n_days();
  detail::parallel_for(n_samples, threads, [&](std::size_t r) {
    const auto w = resample_counts(D, seed, r);
    try {
      const auto f = engine.fit(w);
      if (is_degenerate(f)) return;
      std::vector<double> v;
      for (const auto& [name, x] : coefficients(f)) v.push_back(x);
      if (std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); })) res.draws[r] = std::move(v);
    } catch (const CollinearityError&) {
    }
  });
  res.n_excluded = static_cast<std::size_t>(
      std::count_if(res.draws.begin(), res.draws.end(), [](const auto& d) { return d.empty(); }));

  for (std::size_t j = 0; j < res.names.size(); ++j) {
    CoefficientSummary s;
    s.name = res.names[j];
    s.point = point[j].second;
    const auto col = res.column(j);
    if (!col.empty()) {
      s.p16 = stats::quantile(col, 0.16);
      s.p50 = stats::quantile(col, 0.50);
      s.p84 = stats::quantile(col, 0.84);
      s.error = 0.5 * (s.p84 - s.p16);
      s.t_stat = s.point / s.error;
    }
    res.summary.push_back(s);
  }
  return res;
}

inline BootstrapResult bootstrap(const SignalDatabase& db, const ModelSpec& spec, std::size_t n_samples,
                                 std::uint64_t seed, std::span<const double> premia = {}, unsigned threads = 0) {
  if (db.rows.empty()) throw Error("bootstrap: empty database");
  return bootstrap(FitEngine(spec, build_day_stats(db, spec, premia)), n_samples, seed, threads);
}

// --- cross-validation ---------------------------------------------------------

/// Contiguous folds over n items; the remainder adds one item to each of the
/// final folds.
inline std::vector<DayRange> contiguous_folds(std::size_t n, std::size_t n_folds) {
  if (n_folds < 1) throw Error("folds: need at least one fold");
  const std::size_t base = n / n_folds, extra = n % n_folds;
  if (base < 2) throw Error("folds: " + std::to_string(n) + " days give folds shorter than 2 days");
  std::vector<DayRange> out;
  std::size_t start = 0;
  for (std::size_t j = 0; j < n_folds; ++j) {
    const std::size_t len = base + (j >= n_folds - extra ? 1 : 0);
    out.push_back({start, start + len});
    start += len;
  }
  return out;
}

struct CvOptions {
  std::size_t n_folds = 15;
  std::size_t burn_in = kDefaultBurnIn;
  double premium_fraction = 0.0;
  bool sigma_training_only = true;
  unsigned threads = 0;
};

struct CvResult {
  std::size_t n_folds = 0;
  std::vector<DayRange> folds;  ///< over emitted days (0 = first day after burn-in)
  std::vector<double> predicted;
  std::vector<double> actual;
  std::vector<std::size_t> fold_of;  ///< fold index per prediction
  double r_squared_adj = 0.0;
  std::vector<FitResult> fold_fits;
  /// Day labels that entered each fold's fitted statistics, and the panel-day
  /// windows used for mu/sigma; kept for leakage audits.
  std::vector<std::vector<std::int64_t>> training_days;
  std::vector<std::vector<DayRange>> estimation_windows;
};

/// Response value for a row under `spec`.
inline double response_of(const ModelSpec& spec, const SignalRow& r, std::span<const double> premia) {
  return spec.response == Response::excess ? r.ret - premia[r.market] : r.ret;
}

/// Calls out(prediction, actual) for each pair the model predicts from `row`.
template <class Out>
void predict_row(const FitResult& fit, const ModelSpec& spec, const SignalRow& row, double t_years,
                 std::span<const double> premia, Out&& out) {
  const double y = response_of(spec, row, premia);
  if (const auto* f = std::get_if<CubicFit>(&fit)) {
    if (spec.aggregation != Aggregation::none) {
      std::vector<double> phis;
      for (int k : spec.scales) phis.push_back(row.phi[static_cast<std::size_t>(k - 1)]);
      out(predict(*f, aggregate_factor(phis, spec.factor_weights)), y);
      return;
    }
    for (int k : spec.scales) out(predict(*f, row.phi[static_cast<std::size_t>(k - 1)]), y);
  } else if (const auto* f = std::get_if<ScaleFit>(&fit)) {
    for (int k : spec.scales) out(predict(*f, row.phi[static_cast<std::size_t>(k - 1)], k), y);
  } else if (const auto* f = std::get_if<DecayFit>(&fit)) {
    for (int k : spec.scales) out(predict(*f, row.phi[static_cast<std::size_t>(k - 1)], k, t_years), y);
  }
}

/// Cubic model on one aggregated factor: equal weights for a cubic base,
/// parabolic b(k) weights for scale/decay bases.
inline ModelSpec aggregated_spec(const ModelSpec& base) {
  ModelSpec s = base;
  if (base.kind == ModelKind::cubic) {
    s.aggregation = Aggregation::equal;
  } else {
    s.kind = ModelKind::cubic;
    s.powers = base.intercept ? std::vector<int>{0, 1, 3} : std::vector<int>{1, 3};
    s.aggregation = Aggregation::parabolic;
  }
  s.factor_weights.clear();
  return s;
}

/// Contiguous k-fold cross-validation. Each fold re-estimates mu (and sigma
/// unless disabled) on the training days, rebuilds the signals, refits on the
/// training rows and predicts the validation rows.
inline CvResult cross_validate(const RawPanel& raw, std::span<const TrendSpec> specs, const ModelSpec& model,
                               const CvOptions& opt = {}) {
  model.validate();
  const std::size_t D = raw.n_days();
  if (opt.burn_in >= D) throw Error("cross_validate: burn-in must be shorter than the panel");
  const std::size_t E = D - opt.burn_in;
  CvResult res;
  res.n_folds = opt.n_folds;
  res.folds = contiguous_folds(E, opt.n_folds);
  res.fold_fits.resize(opt.n_folds);
  res.training_days.resize(opt.n_folds);
  res.estimation_windows.resize(opt.n_folds);
  std::vector<std::vector<std::array<double, 2>>> pairs(opt.n_folds);

  detail::parallel_for(opt.n_folds, opt.threads, [&](std::size_t j) {
    const auto& f = res.folds[j];
    const DayRange val{opt.burn_in + f.begin, opt.burn_in + f.end};  // panel days
    std::vector<DayRange> train;
    if (val.begin > 0) train.push_back({0, val.begin});
    if (val.end < D) train.push_back({val.end, D});
    const DayRange all{0, D};
    const auto panel = opt.sigma_training_only ? normalize_panel(raw, train, train)
                                               : normalize_panel(raw, train, std::span<const DayRange>(&all, 1));
    res.estimation_windows[j] = train;

    const auto db = build_signal_database(panel, specs, opt.burn_in, opt.premium_fraction);
    std::vector<double> premia = panel.premia();
    for (auto& p : premia) p *= 1.0 - opt.premium_fraction;

    const auto lo = static_cast<std::int64_t>(f.begin + 1), hi = static_cast<std::int64_t>(f.end + 1);
    const RowFilter training = [lo, hi](const SignalRow& r) { return r.day < lo || r.day >= hi; };
    const auto spec = resolve_aggregation(db, model, premia, training);
    FitEngine engine(spec, build_day_stats(db, spec, premia, training));
    for (auto d : engine.stats().days)
      if (d >= lo && d < hi) throw std::logic_error("cross_validate: validation day entered training statistics");
    for (std::size_t d = val.begin; d < val.end; ++d)
      if (in_ranges(train, d)) throw std::logic_error("cross_validate: validation day inside estimation window");
    res.training_days[j] = engine.stats().days;
    res.fold_fits[j] = engine.fit();

    const double origin = engine.stats().time_origin;
    for (const auto& r : db.rows) {
      if (r.day < lo || r.day >= hi) continue;
      const double t = (static_cast<double>(r.day) - origin) / kBusinessDaysPerYear;
      predict_row(res.fold_fits[j], spec, r, t, premia, [&](double p, double y) { pairs[j].push_back({p, y}); });
    }
  });

  for (std::size_t j = 0; j < opt.n_folds; ++j)
    for (const auto& [p, y] : pairs[j]) {
      res.predicted.push_back(p);
      res.actual.push_back(y);
      res.fold_of.push_back(j);
    }
  const double rho = stats::correlation(res.predicted, res.actual);
  res.r_squared_adj = rho * rho;
  return res;
}

inline CvResult cross_validate(const RawPanel& raw, const ModelSpec& model, const CvOptions& opt = {},
                               double cap = kDefaultCap) {
  const auto specs = default_specs(cap);
  return cross_validate(raw, specs, model, opt);
}

/// Cross-validation with the signals of `db` held fixed (no price panel at
/// hand). Folds run over the database days; excess responses use the
/// training-row mean of R per market.
inline CvResult cross_validate_database(const SignalDatabase& db, const ModelSpec& model, std::size_t n_folds = 15,
                                        unsigned threads = 0) {
  model.validate();
  const auto days = db.days();
  CvResult res;
  res.n_folds = n_folds;
  res.folds = contiguous_folds(days.size(), n_folds);
  res.fold_fits.resize(n_folds);
  res.training_days.resize(n_folds);
  res.estimation_windows.resize(n_folds);
  std::vector<std::vector<std::array<double, 2>>> pairs(n_folds);

  detail::parallel_for(n_folds, threads, [&](std::size_t j) {
    const auto& f = res.folds[j];
    const auto lo = days[f.begin], hi = days[f.end - 1] + 1;
    const RowFilter training = [lo, hi](const SignalRow& r) { return r.day < lo || r.day >= hi; };
    std::vector<double> premia(db.n_markets(), 0.0), n(db.n_markets(), 0.0);
    for (const auto& r : db.rows)
      if (training(r)) {
        premia[r.market] += r.ret;
        n[r.market] += 1.0;
      }
    for (std::size_t i = 0; i < premia.size(); ++i) premia[i] = n[i] > 0.0 ? premia[i] / n[i] : 0.0;
    ModelSpec s = model;
    if (!s.time_origin) s.time_origin = default_time_origin(db);
    s = resolve_aggregation(db, s, premia, training);
    FitEngine engine(s, build_day_stats(db, s, premia, training));
    for (auto d : engine.stats().days)
      if (d >= lo && d < hi) throw std::logic_error("cross_validate: validation day entered training statistics");
    res.training_days[j] = engine.stats().days;
    res.fold_fits[j] = engine.fit();
    const double origin = engine.stats().time_origin;
    for (const auto& r : db.rows) {
      if (training(r)) continue;
      const double t = (static_cast<double>(r.day) - origin) / kBusinessDaysPerYear;
      predict_row(res.fold_fits[j], s, r, t, premia, [&](double p, double y) { pairs[j].push_back({p, y}); });
    }
  });

  for (std::size_t j = 0; j < n_folds; ++j)
    for (const auto& [p, y] : pairs[j]) {
      res.predicted.push_back(p);
      res.actual.push_back(y);
      res.fold_of.push_back(j);
    }
  const double rho = stats::correlation(res.predicted, res.actual);
  res.r_squared_adj = rho * rho;
  return res;
}

// --- effective dimension and dof budget ---------------------------------------

struct EffectiveDimension {
  double n_m = 0.0;                       ///< 1 / var(equal-weight portfolio of unit-variance returns)
  std::vector<double> eigenvalues;        ///< correlation spectrum, descending
  std::vector<double> cumulative_shares;  ///< fraction of variance in the first j+1 components
};

inline EffectiveDimension effective_dimension(const RawPanel& panel) {
  const std::size_t M = panel.n_markets(), D = panel.n_days();
  if (M < 2) throw Error("effective_dimension: need at least 2 markets");
  if (D < 2) throw Error("effective_dimension: need at least 2 days");
  Eigen::MatrixXd Z(static_cast<Eigen::Index>(D), static_cast<Eigen::Index>(M));
  for (std::size_t i = 0; i < M; ++i) {
    std::vector<double> x(D);
    for (std::size_t d = 0; d < D; ++d) x[d] = panel.at(d, i);
    const double m = stats::mean(x), v = stats::variance(x);
    if (!(v > 0.0)) throw Error("effective_dimension: degenerate covariance (market " + panel.market_ids[i] + " is constant)");
    const double s = std::sqrt(v);
    for (std::size_t d = 0; d < D; ++d) Z(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(i)) = (x[d] - m) / s;
  }
  const Eigen::MatrixXd C = (Z.transpose() * Z) / static_cast<double>(D);
  EffectiveDimension out;
  const double pv = C.sum() / static_cast<double>(M * M);
  if (!(pv > 0.0)) throw Error("effective_dimension: degenerate covariance (portfolio variance is zero)");
  out.n_m = 1.0 / pv;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(C, Eigen::EigenvaluesOnly);
  const auto ev = es.eigenvalues();
  double total = 0.0;
  for (Eigen::Index i = ev.size(); i-- > 0;) {
    out.eigenvalues.push_back(std::max(ev(i), 0.0));
    total += out.eigenvalues.back();
  }
  double run = 0.0;
  for (double e : out.eigenvalues) out.cumulative_shares.push_back((run += e) / total);
  return out;
}

struct DofBudget {
  double n_m = 0.0;
  double years = 0.0;
  double n_points = 0.0;  ///< N = 260 n_m Y
  double daily_sharpe = 0.0;  ///< rho = sqrt(target R^2)
  double target_r2 = 0.0;
  double erosion_fraction = 0.0;
  long max_parameters = 0;  ///< floor(erosion * target * N)
};

inline DofBudget dof_budget(double n_m, double years, double target_r2, double erosion_fraction) {
  if (!(n_m > 0.0) || !(years > 0.0) || !(target_r2 > 0.0))
    throw Error("dof_budget: n_m, years and target R^2 must be positive");
  if (!(erosion_fraction >= 0.0)) throw Error("dof_budget: erosion fraction must be non-negative");
  DofBudget b;
  b.n_m = n_m;
  b.years = years;
  b.n_points = kBusinessDaysPerYear * n_m * years;
  b.target_r2 = target_r2;
  b.daily_sharpe = std::sqrt(target_r2);
  b.erosion_fraction = erosion_fraction;
  b.max_parameters = static_cast<long>(std::floor(erosion_fraction * target_r2 * b.n_points * (1.0 + 1e-12)));
  return b;
}

// --- subsets ------------------------------------------------------------------

struct GroupRatios {
  std::string group;
  std::size_t n_rows = 0;
  FitResult fit;
  std::vector<std::string> names;
  std::vector<std::array<double, 3>> ratio_quantiles;  ///< 16/50/84 of draw / overall point
  std::size_t n_excluded = 0;
};

struct SubsetResult {
  FitResult overall;
  std::vector<GroupRatios> groups;
};

struct NamedFilter {
  std::string name;
  RowFilter include;
};

/// Bootstraps each group and divides the draws by the overall point estimate.
inline SubsetResult subset_analysis(const SignalDatabase& db, const ModelSpec& spec, std::span<const NamedFilter> groups,
                                    std::size_t n_samples, std::uint64_t seed, std::span<const double> premia = {},
                                    unsigned threads = 0) {
  if (groups.empty()) throw Error("subset_analysis: no groups");
  std::vector<double> own;
  if (premia.empty() && spec.response == Response::excess) {
    own = database_premia(db);
    premia = own;
  }
  ModelSpec s = spec;
  if (!s.time_origin) s.time_origin = default_time_origin(db);
  SubsetResult out;
  out.overall = fit_model(db, s, premia);
  const auto overall = coefficients(out.overall);
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto& grp = groups[g];
    auto st = build_day_stats(db, s, premia, grp.include);
    if (st.n_days() == 0) throw Error("subset_analysis: group '" + grp.name + "' is empty");
    GroupRatios gr;
    gr.group = grp.name;
    for (std::size_t d = 0; d < st.n_days(); ++d) gr.n_rows += static_cast<std::size_t>(st.data[(d + 1) * st.stride() - 1]);
    const auto bs = bootstrap(FitEngine(s, std::move(st)), n_samples, derive_seed(seed, "subset", g), threads);
    gr.fit = bs.point;
    gr.names = bs.names;
    gr.n_excluded = bs.n_excluded;
    for (std::size_t j = 0; j < bs.names.size(); ++j) {
      auto col = bs.column(j);
      for (auto& x : col) x /= overall[j].second;
      gr.ratio_quantiles.push_back({stats::quantile(col, 0.16), stats::quantile(col, 0.50), stats::quantile(col, 0.84)});
    }
    out.groups.push_back(std::move(gr));
  }
  return out;
}

/// Groups rows by the class of their market.
inline std::vector<NamedFilter> asset_class_groups(const SignalDatabase& db,
                                                   const std::map<std::string, std::string>& market_class) {
  std::vector<std::string> cls(db.n_markets());
  std::vector<std::string> names;
  for (std::size_t i = 0; i < db.n_markets(); ++i) {
    auto it = market_class.find(db.markets[i]);
    if (it == market_class.end()) throw Error("asset-class map: no class for market " + db.markets[i]);
    cls[i] = it->second;
    if (std::find(names.begin(), names.end(), cls[i]) == names.end()) names.push_back(cls[i]);
  }
  std::vector<NamedFilter> out;
  for (const auto& n : names) {
    std::vector<bool> in(db.n_markets());
    for (std::size_t i = 0; i < in.size(); ++i) in[i] = cls[i] == n;
    out.push_back({n, [in](const SignalRow& r) { return in[r.market]; }});
  }
  return out;
}

/// Three contiguous blocks of days (early, middle, late).
inline std::vector<NamedFilter> period_third_groups(const SignalDatabase& db) {
  const auto days = db.days();
  const auto folds = contiguous_folds(days.size(), 3);
  static constexpr const char* names[3] = {"early", "middle", "late"};
  std::vector<NamedFilter> out;
  for (std::size_t j = 0; j < 3; ++j) {
    const auto lo = days[folds[j].begin], hi = days[folds[j].end - 1];
    out.push_back({names[j], [lo, hi](const SignalRow& r) { return r.day >= lo && r.day <= hi; }});
  }
  return out;
}

// --- sensitivity sweep --------------------------------------------------------

struct SweepOptions {
  ModelSpec model = scale_spec();
  std::size_t burn_in = kDefaultBurnIn;
  std::size_t n_samples = 5000;
  std::uint64_t seed = 0;
  std::size_t n_folds = 15;
  unsigned threads = 0;
};

struct SweepCell {
  double cap = kDefaultCap;
  double premium_fraction = 0.0;
  BootstrapResult bootstrap;
  double r_squared_adj = kNaN;
  double r_squared_adj_aggregated = kNaN;
};

/// Builds the signal database of a normalized panel for one (cap, f) cell;
/// returns the database and the per-market premia of the response.
inline std::pair<SignalDatabase, std::vector<double>> build_cell(const ReturnPanel& panel, double cap, double f,
                                                                 std::size_t burn_in) {
  auto db = build_signal_database(panel, burn_in, cap, f);
  auto premia = panel.premia();
  for (auto& p : premia) p *= 1.0 - f;
  return {std::move(db), std::move(premia)};
}

/// One row per (cap, premium fraction): refit, bootstrap t-stats, CV R^2_adj
/// for single scales and for the aggregated factor.
inline std::vector<SweepCell> sensitivity_sweep(const RawPanel& raw, std::span<const double> caps,
                                                std::span<const double> fractions, const SweepOptions& opt = {}) {
  for (double c : caps)
    if (!(c > 0.0)) throw Error("sweep: caps must be positive");
  for (double f : fractions)
    if (!(f >= 0.0 && f <= 1.0)) throw Error("sweep: premium fractions must lie in [0, 1]");
  const auto panel = normalize_panel(raw);
  std::vector<SweepCell> out;
  for (double cap : caps)
    for (double f : fractions) {
      SweepCell cell;
      cell.cap = cap;
      cell.premium_fraction = f;
      const auto [db, premia] = build_cell(panel, cap, f, opt.burn_in);
      cell.bootstrap = bootstrap(db, opt.model, opt.n_samples, opt.seed, premia, opt.threads);
      CvOptions cv;
      cv.n_folds = opt.n_folds;
      cv.burn_in = opt.burn_in;
      cv.premium_fraction = f;
      cv.threads = opt.threads;
      const auto specs = default_specs(cap);
      cell.r_squared_adj = cross_validate(raw, specs, opt.model, cv).r_squared_adj;
      cell.r_squared_adj_aggregated = cross_validate(raw, specs, aggregated_spec(opt.model), cv).r_squared_adj;
      out.push_back(std::move(cell));
    }
  return out;
}

}  // namespace trendrev
