#pragma once

#include <array>
#include <chrono>
#include <cmath>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <tuple>
#include <vector>

#include <Eigen/Dense>

#include "trendrev/common.hpp"
#include "trendrev/market_data.hpp"
#include "trendrev/model_fit.hpp"
#include "trendrev/signal_database.hpp"
#include "trendrev/trend.hpp"

namespace trendrev {

/// How the per-scale model feeds back into one return per market and day.
enum class Generator {
  /// Mean-field drift over the active scales with coefficients chosen so the
  /// pooled per-scale regression recovers the target model.
  calibrated,
  /// Mean-field drift with the target coefficients used as is.
  mean_field,
  /// A single scale drives the returns.
  single_scale,
};

enum class NoiseKind { normal, student_t };

struct SimConfig {
  std::size_t n_markets = 24;
  std::size_t n_days = 7827;  ///< return days, burn-in included
  std::size_t n_blocks = 8;
  double effective_markets = 8.0;  ///< n_m of the equal-weight portfolio of the noise
  /// Target regression: b(k) = beta0 + beta1 k + beta2 k^2, cubic c.
  std::array<double, 3> beta{};
  double c = 0.0;
  double Q_b = 0.0;  ///< decay of b per year (linear unless exponential)
  double Q_c = 0.0;
  bool exponential_decay = false;
  std::vector<double> premia;  ///< normalized mu_i/sigma_i, default 0
  double sigma = 0.01;         ///< daily volatility of the log returns
  NoiseKind noise = NoiseKind::normal;
  double nu = 5.0;  ///< Student-t degrees of freedom
  std::uint64_t seed = 0;
  Generator generator = Generator::calibrated;
  std::vector<int> active_scales = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  int single_scale = 6;
  double cap = kDefaultCap;  ///< cap used by the target regression (calibration only)
  std::size_t burn_in = kDefaultBurnIn;  ///< locates t = 0 at the middle of the emitted days
  Date start = Date{std::chrono::year{1990} / 1 / 1};

  void set_scale_model(double b, double c_, double k0, double delta_k) {
    const auto f = ScaleFit::from_parameters(b, c_, k0, delta_k);
    beta = f.beta;
    c = c_;
  }

  /// b constant in k.
  void set_flat_model(double b, double c_) {
    beta = {b, 0.0, 0.0};
    c = c_;
  }

  double b_of_k(double k) const { return beta[0] + beta[1] * k + beta[2] * k * k; }

  /// Within-block noise correlation that gives `effective_markets`.
  double block_correlation() const {
    const double M = static_cast<double>(n_markets);
    double pairs = 0.0;
    for (std::size_t b = 0; b < n_blocks; ++b) {
      const double s = static_cast<double>(block_size(b));
      pairs += s * (s - 1.0);
    }
    if (pairs == 0.0) return 0.0;
    return (M * M / effective_markets - M) / pairs;
  }

  std::size_t block_size(std::size_t b) const {
    return n_markets / n_blocks + (b < n_markets % n_blocks ? 1 : 0);
  }

  void validate() const {
    if (n_markets < 1 || n_days < 1) throw Error("sim config: need at least one market and one day");
    if (n_blocks < 1 || n_blocks > n_markets) throw Error("sim config: blocks must lie in 1..n_markets");
    const double rho = block_correlation();
    if (!(rho >= -1e-12 && rho <= 1.0 + 1e-12))
      throw Error("sim config: effective markets must lie between the block count and the market count");
    if (!premia.empty() && premia.size() != n_markets) throw Error("sim config: need one premium per market");
    if (!(sigma > 0.0)) throw Error("sim config: sigma must be positive");
    if (noise == NoiseKind::student_t && !(nu > 2.0)) throw Error("sim config: Student-t noise needs nu > 2");
    if (active_scales.empty()) throw Error("sim config: no active scales");
    for (int k : active_scales)
      if (k < 1 || k > kNumScales) throw Error("sim config: active scale outside 1..10");
    if (single_scale < 1 || single_scale > kNumScales) throw Error("sim config: single scale outside 1..10");
  }
};

struct SimResult {
  RawPanel raw;       ///< log returns sigma * R
  ReturnPanel truth;  ///< with the true mu and sigma
};

namespace detail {

struct NoiseSource {
  std::mt19937_64 rng;
  NoiseKind kind;
  double t_scale;
  std::normal_distribution<double> normal{0.0, 1.0};
  std::student_t_distribution<double> student;

  NoiseSource(std::uint64_t seed, NoiseKind k, double nu)
      : rng(seed), kind(k), t_scale(k == NoiseKind::student_t ? std::sqrt((nu - 2.0) / nu) : 1.0),
        student(k == NoiseKind::student_t ? nu : 5.0) {}

  double operator()() { return kind == NoiseKind::normal ? normal(rng) : t_scale * student(rng); }
};

// Pooled-fit regressors of one capped pair and generator features of one
// uncapped trend strength: (phi, k phi, k^2 phi, phi^3).
inline std::array<double, 4> scale_features(double phi, double k) {
  return {phi, k * phi, k * k * phi, phi * phi * phi};
}

/// Linear map from generator coefficients to the coefficients a pooled
/// per-scale regression recovers, estimated on a long independent-market run
/// whose returns are driven by generator coefficients `drive` (zero: pure noise).
/// The drift is linear in the coefficients, so on a given path the noise-free
/// regression target is exactly this map applied to them.
inline Eigen::Matrix4d compute_calibration(double cap, const std::vector<int>& active,
                                           const Eigen::Vector4d& drive = Eigen::Vector4d::Zero()) {
  constexpr std::size_t markets = 24, days = 60000, warmup = 2000;
  NoiseSource noise(derive_seed(0x7472656e64ULL, "calibration"), NoiseKind::normal, 0.0);
  std::vector<TrendState> st;
  for (std::size_t i = 0; i < markets; ++i)
    for (int k = 1; k <= kNumScales; ++k) st.push_back(TrendState::initial(std::ldexp(1.0, k)));
  Eigen::Matrix4d XX = Eigen::Matrix4d::Zero(), XZ = Eigen::Matrix4d::Zero();
  const double inv = 1.0 / static_cast<double>(active.size());
  for (std::size_t d = 0; d < days; ++d) {
    for (std::size_t i = 0; i < markets; ++i) {
      auto* s = &st[i * kNumScales];
      Eigen::Vector4d z = Eigen::Vector4d::Zero();
      for (int k : active) {
        const auto f = scale_features(s[k - 1].phi, k);
        for (int a = 0; a < 4; ++a) z(a) += inv * f[static_cast<std::size_t>(a)];
      }
      if (d >= warmup)
        for (int k = 1; k <= kNumScales; ++k) {
          const auto x = scale_features(cap_floor(s[k - 1].phi, cap), k);
          const Eigen::Vector4d xv(x[0], x[1], x[2], x[3]);
          XX += xv * xv.transpose();
          XZ += xv * z.transpose();
        }
      const double e = z.dot(drive) + noise();
      for (int k = 0; k < kNumScales; ++k) {
        s[k] = update_state(s[k], e);
        if (!(std::abs(s[k].phi) <= 50.0))
          throw Error("simulate: explosive feedback during calibration (|phi| > 50); b is too large or c is not negative");
      }
    }
  }
  return XX.colPivHouseholderQr().solve(XZ);
}

/// Generator coefficients whose feedback path reproduces `target` under the
/// pooled regression: fixed point of g = A(g)^-1 target, started from the
/// noise-only map. Cached per (cap, active scales, target).
inline Eigen::Vector4d calibrated_generator(double cap, const std::vector<int>& active, const Eigen::Vector4d& target) {
  constexpr int iterations = 3;
  static std::mutex mu;
  static std::map<std::tuple<double, std::vector<int>, std::array<double, 4>>, Eigen::Vector4d> cache;
  std::lock_guard lock(mu);
  const auto key = std::make_tuple(cap, active, std::array<double, 4>{target(0), target(1), target(2), target(3)});
  if (auto it = cache.find(key); it != cache.end()) return it->second;
  Eigen::Vector4d g = Eigen::Vector4d::Zero();
  if (!target.isZero(0.0))
    for (int it = 0; it <= iterations; ++it) g = compute_calibration(cap, active, g).colPivHouseholderQr().solve(target);
  cache.emplace(key, g);
  return g;
}

}  // namespace detail

/// Per-scale generator coefficients (lin_k for k = 1..10, cubic) implied by
/// the config's generator mode.
struct GeneratorCoefficients {
  std::array<double, kNumScales> lin{};
  double cubic = 0.0;
  std::vector<int> scales;
  double weight = 1.0;  ///< per active scale
};

inline GeneratorCoefficients generator_coefficients(const SimConfig& cfg) {
  GeneratorCoefficients g;
  switch (cfg.generator) {
    case Generator::single_scale:
      g.scales = {cfg.single_scale};
      g.lin[static_cast<std::size_t>(cfg.single_scale - 1)] = cfg.b_of_k(cfg.single_scale);
      g.cubic = cfg.c;
      break;
    case Generator::mean_field:
      g.scales = cfg.active_scales;
      for (int k : g.scales) g.lin[static_cast<std::size_t>(k - 1)] = cfg.b_of_k(k);
      g.cubic = cfg.c;
      break;
    case Generator::calibrated: {
      g.scales = cfg.active_scales;
      const Eigen::Vector4d target(cfg.beta[0], cfg.beta[1], cfg.beta[2], cfg.c);
      const Eigen::Vector4d x = detail::calibrated_generator(cfg.cap, cfg.active_scales, target);
      for (int k : g.scales) g.lin[static_cast<std::size_t>(k - 1)] = x(0) + x(1) * k + x(2) * k * k;
      g.cubic = x(3);
      break;
    }
  }
  g.weight = 1.0 / static_cast<double>(g.scales.size());
  return g;
}

/// Simulates the panel day by day: drift from yesterday's uncapped trend
/// strengths, correlated noise, then the trend recursions update.
inline SimResult simulate_panel(const SimConfig& cfg) {
  cfg.validate();
  const std::size_t M = cfg.n_markets, D = cfg.n_days;
  const auto g = generator_coefficients(cfg);
  const double rho = std::clamp(cfg.block_correlation(), 0.0, 1.0);
  const double a = std::sqrt(rho), b = std::sqrt(1.0 - rho);
  std::vector<std::size_t> block(M);
  for (std::size_t blk = 0, i = 0; blk < cfg.n_blocks; ++blk)
    for (std::size_t j = 0; j < cfg.block_size(blk); ++j) block[i++] = blk;

  detail::NoiseSource noise(derive_seed(cfg.seed, "simulate"), cfg.noise, cfg.nu);
  std::vector<TrendState> st;
  for (std::size_t i = 0; i < M; ++i)
    for (int k = 1; k <= kNumScales; ++k) st.push_back(TrendState::initial(std::ldexp(1.0, k)));

  SimResult out;
  auto& raw = out.raw;
  for (std::size_t i = 0; i < M; ++i) raw.market_ids.push_back((i < 9 ? "M0" : "M") + std::to_string(i + 1));
  raw.days = business_days(cfg.start, D);
  raw.returns.assign(M * D, 0.0);
  auto& truth = out.truth;
  truth.market_ids = raw.market_ids;
  truth.days = raw.days;
  truth.sigma.assign(M, cfg.sigma);
  truth.mu.assign(M, 0.0);
  for (std::size_t i = 0; i < M && !cfg.premia.empty(); ++i) truth.mu[i] = cfg.premia[i] * cfg.sigma;
  truth.normalized.resize(M * D);
  truth.excess.resize(M * D);

  const double origin = 0.5 * static_cast<double>(cfg.burn_in + D - 1);
  std::vector<double> common(cfg.n_blocks);
  for (std::size_t d = 0; d < D; ++d) {
    const double t = (static_cast<double>(d) - origin) / kBusinessDaysPerYear;
    const double gb = cfg.exponential_decay ? std::exp(-cfg.Q_b * t) : 1.0 - cfg.Q_b * t;
    const double gc = 1.0 - cfg.Q_c * t;
    for (auto& z : common) z = noise();
    for (std::size_t i = 0; i < M; ++i) {
      auto* s = &st[i * kNumScales];
      double drift = 0.0;
      for (int k : g.scales) {
        const double phi = s[k - 1].phi;
        drift += g.weight * (gb * g.lin[static_cast<std::size_t>(k - 1)] * phi + gc * g.cubic * phi * phi * phi);
      }
      const double eps = a * common[block[i]] + b * noise();
      const double excess = drift + eps;
      for (int k = 0; k < kNumScales; ++k) {
        s[k] = update_state(s[k], excess);
        if (!(std::abs(s[k].phi) <= 50.0))
          throw Error("simulate: explosive feedback on day " + std::to_string(d) + " (|phi| > 50); b is too large or c is not negative");
      }
      const double premium = cfg.premia.empty() ? 0.0 : cfg.premia[i];
      const std::size_t idx = d * M + i;
      truth.excess[idx] = excess;
      truth.normalized[idx] = excess + premium;
      raw.returns[idx] = cfg.sigma * (excess + premium);
    }
  }
  truth.raw = raw.returns;
  return out;
}

/// Simulated panel run through the standard pipeline: full-sample
/// normalization, then the signal database.
inline SignalDatabase simulate_database(const SimConfig& cfg, double cap = kDefaultCap) {
  const auto sim = simulate_panel(cfg);
  return build_signal_database(normalize_panel(sim.raw), cfg.burn_in, cap);
}

// --- continuum limit ----------------------------------------------------------

/// Prefactors of the psi-equation potential: derived by substituting the
/// continuum equations into the model, or as printed for T = 128.
enum class PotentialConvention { substitution, printed };

struct ContinuumCoefficients {
  double T = 0.0;
  double damping = 0.0;      ///< 2/T, both equations
  double force_scale = 0.0;  ///< 4 sqrt(2) T^{-3/2}
  double quad = 0.0;         ///< V = quad phi^2 + quart phi^4
  double quart = 0.0;
  double phi_noise = 0.0;
  double psi_noise = 0.0;  ///< 2/sqrt(T)
  double psi_quad = 0.0;   ///< V~ = psi_quad psi^2 + psi_quart psi^4
  double psi_quart = 0.0;
};

/// Closed-form coefficients; every T = 128 constant evaluates exactly.
inline ContinuumCoefficients continuum_coefficients(double T, double b, double c, std::optional<double> b_tilde = {},
                                                    std::optional<double> c_tilde = {},
                                                    PotentialConvention convention = PotentialConvention::substitution) {
  if (!(T >= 2.0)) throw Error("continuum_coefficients: T must be at least 2");
  const double bt = b_tilde.value_or(b), ct = c_tilde.value_or(c);
  const double s = std::sqrt(2.0 / T);  // sqrt(2) T^{-1/2}
  ContinuumCoefficients k;
  k.T = T;
  k.damping = 2.0 / T;
  k.force_scale = 4.0 * s / T;
  k.quad = -2.0 * s / T * b;
  k.quart = s / T * std::abs(c);
  k.phi_noise = k.force_scale;
  k.psi_noise = 2.0 / std::sqrt(T);
  if (convention == PotentialConvention::substitution) {
    k.psi_quad = -bt / std::sqrt(T);
    k.psi_quart = std::abs(ct) / (2.0 * std::sqrt(T));
  } else {
    k.psi_quad = -bt / 4.0;
    k.psi_quart = std::abs(ct) / 8.0;
  }
  return k;
}

enum class LangevinEquation { psi, phi };

struct LangevinOptions {
  LangevinEquation equation = LangevinEquation::psi;
  std::size_t n_steps = 1000;
  double step_size = 1.0;  ///< days
  std::uint64_t seed = 0;
  double x0 = 0.0;
  double v0 = 0.0;  ///< phi equation: initial (d/dt + 2/T) phi
};

/// Explicit Euler-Maruyama. psi: d psi = -(g psi + V~'(psi)) dt + s dW.
/// phi: d phi = (-g phi + u) dt, du = -(g u + V'(phi)) dt + s dW.
inline std::vector<double> simulate_langevin(const ContinuumCoefficients& k, const LangevinOptions& opt) {
  if (!(opt.step_size > 0.0)) throw Error("langevin: step size must be positive");
  if (!(opt.step_size * k.damping < 1.0)) throw Error("langevin: step_size * damping must be below 1");
  const bool psi = opt.equation == LangevinEquation::psi;
  const double g = k.damping, h = opt.step_size, sq = std::sqrt(h);
  const double q = psi ? k.psi_quad : k.quad, r = psi ? k.psi_quart : k.quart;
  const double s = psi ? k.psi_noise : k.phi_noise;
  std::mt19937_64 rng(derive_seed(opt.seed, "langevin"));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> path;
  path.reserve(opt.n_steps + 1);
  double x = opt.x0, u = opt.v0;
  path.push_back(x);
  for (std::size_t n = 0; n < opt.n_steps; ++n) {
    const double force = 2.0 * q * x + 4.0 * r * x * x * x;
    const double dw = s * sq * normal(rng);
    if (psi) {
      x += -(g * x + force) * h + dw;
    } else {
      const double xn = x + (-g * x + u) * h;
      u += -(g * u + force) * h + dw;
      x = xn;
    }
    if (!(std::abs(x) <= 50.0))
      throw Error("langevin: unstable at step " + std::to_string(n + 1) + " (|x| > 50); reduce the step size");
    path.push_back(x);
  }
  return path;
}

}  // namespace trendrev
