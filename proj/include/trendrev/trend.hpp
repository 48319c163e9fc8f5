#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "trendrev/common.hpp"

namespace trendrev {

/// Weight function used to turn past excess returns into a trend strength.
enum class WeightScheme {
  step,  ///< flat 1/sqrt(T) over the last T days
  ewma,  ///< M_T e^{-2n/T}
  mac,   ///< moving-average crossover wedge, parameters (L, S)
  xexp,  ///< N_T (n+1) e^{-2n/T}, the default
};

inline std::string to_string(WeightScheme s) {
  switch (s) {
    case WeightScheme::step: return "step";
    case WeightScheme::ewma: return "ewma";
    case WeightScheme::mac: return "mac";
    case WeightScheme::xexp: return "xexp";
  }
  return "?";
}

struct TrendSpec {
  int k = 1;  ///< T = 2^k business days
  WeightScheme scheme = WeightScheme::xexp;
  int mac_long = 0;   ///< L, mac only
  int mac_short = 0;  ///< S, mac only
  double cap = kDefaultCap;
  double days = 0.0;  ///< explicit horizon T in days; 0 means 2^k

  double horizon() const { return days > 0.0 ? days : std::ldexp(1.0, k); }

  /// Spec with an arbitrary horizon T (not necessarily a power of two).
  static TrendSpec with_horizon(double T, WeightScheme scheme = WeightScheme::xexp) {
    TrendSpec s;
    s.scheme = scheme;
    s.days = T;
    return s;
  }

  void validate() const {
    if (days > 0.0 ? days < 2.0 : k < 1) throw Error("trend spec: horizon must be at least 2 days");
    if (!(cap > 0.0)) throw Error("trend spec: cap must be positive");
    if (scheme == WeightScheme::step && horizon() != std::floor(horizon()))
      throw Error("trend spec: step weights need a whole number of days");
    if (scheme == WeightScheme::mac && !(mac_long > mac_short && mac_short >= 1))
      throw Error("trend spec: mac requires L > S >= 1");
  }
};

/// Default specs: xexp weights for k = 1..10.
inline std::vector<TrendSpec> default_specs(double cap = kDefaultCap) {
  std::vector<TrendSpec> specs;
  for (int k = 1; k <= kNumScales; ++k) specs.push_back(TrendSpec{k, WeightScheme::xexp, 0, 0, cap});
  return specs;
}

namespace detail {

// Unnormalized mac wedge: (L-1-n)_+/L - (S-1-n)_+/S.
inline double mac_raw(int L, int S, long n) {
  const double a = n < L - 1 ? static_cast<double>(L - 1 - n) / L : 0.0;
  const double b = n < S - 1 ? static_cast<double>(S - 1 - n) / S : 0.0;
  return a - b;
}

inline double mac_norm(int L, int S) {
  double s = 0.0;
  for (long n = 0; n < L; ++n) s += mac_raw(L, S, n) * mac_raw(L, S, n);
  return 1.0 / std::sqrt(s);
}

}  // namespace detail

/// Recursion constants for horizon T.
struct TrendConstants {
  double q;  ///< e^{-2/T}
  double m;  ///< M_T = sqrt(1 - e^{-4/T})
  double n;  ///< N_T = (1 - e^{-4/T})^2 / sqrt(1 - e^{-8/T})

  static TrendConstants for_horizon(double T) {
    const double e4 = -std::expm1(-4.0 / T);
    const double e8 = -std::expm1(-8.0 / T);
    return {std::exp(-2.0 / T), std::sqrt(e4), e4 * e4 / std::sqrt(e8)};
  }
};

namespace detail {

inline double weight_at(const TrendSpec& spec, const TrendConstants& c, double mac_scale, long n) {
  const double T = spec.horizon();
  const auto x = static_cast<double>(n);
  switch (spec.scheme) {
    case WeightScheme::step: return x < T ? 1.0 / std::sqrt(T) : 0.0;
    case WeightScheme::ewma: return c.m * std::exp(-2.0 * x / T);
    case WeightScheme::xexp: return c.n * (x + 1.0) * std::exp(-2.0 * x / T);
    case WeightScheme::mac: return mac_scale * mac_raw(spec.mac_long, spec.mac_short, n);
  }
  return 0.0;
}

inline double mac_scale(const TrendSpec& spec) {
  return spec.scheme == WeightScheme::mac ? mac_norm(spec.mac_long, spec.mac_short) : 0.0;
}

}  // namespace detail

/// w_T(n) for the given scheme.
inline double weight(const TrendSpec& spec, long n) {
  spec.validate();
  if (n < 0) throw Error("weight: lag must be non-negative");
  return detail::weight_at(spec, TrendConstants::for_horizon(spec.horizon()), detail::mac_scale(spec), n);
}

/// w(0..length-1) for the scheme.
inline std::vector<double> weight_vector(const TrendSpec& spec, std::size_t length) {
  spec.validate();
  std::vector<double> w(length);
  const auto c = TrendConstants::for_horizon(spec.horizon());
  const double ms = detail::mac_scale(spec);
  for (std::size_t n = 0; n < length; ++n) w[n] = detail::weight_at(spec, c, ms, static_cast<long>(n));
  return w;
}

/// Number of lags kept by direct summation: finite support, or the first lag
/// beyond which the squared weight mass is below `tail_mass`.
inline long truncation_length(const TrendSpec& spec, double tail_mass = 1e-24) {
  spec.validate();
  const double T = spec.horizon();
  switch (spec.scheme) {
    case WeightScheme::step: return static_cast<long>(T);
    case WeightScheme::mac: return spec.mac_long;
    case WeightScheme::ewma: {
      // tail from n is q^{2n}
      return static_cast<long>(std::ceil(std::log(tail_mass) / (-4.0 / T))) + 1;
    }
    case WeightScheme::xexp: {
      // Past the peak, w(j+1)/w(j) <= rho := q (n+2)/(n+1), so tail <= w(n)^2 / (1 - rho^2).
      const auto c = TrendConstants::for_horizon(T);
      const double q = c.q;
      for (long n = static_cast<long>(T);; ++n) {
        const double w = detail::weight_at(spec, c, 0.0, n);
        const double rho = q * static_cast<double>(n + 2) / static_cast<double>(n + 1);
        if (rho < 1.0 && w * w / (1.0 - rho * rho) < tail_mass) return n;
      }
    }
  }
  return 0;
}

/// Combined (psi, phi) recursion state for the xexp/ewma trend strengths.
struct TrendState {
  double psi = 0.0;
  double phi = 0.0;
  TrendConstants c{};

  static TrendState initial(double T) { return TrendState{0.0, 0.0, TrendConstants::for_horizon(T)}; }
};

/// One day of the recursion; psi is updated first and the new psi feeds phi.
inline TrendState update_state(const TrendState& s, double excess_return) {
  TrendState out = s;
  out.psi = s.c.q * s.psi + s.c.m * excess_return;
  out.phi = s.c.q * s.phi + (s.c.n / s.c.m) * out.psi;
  return out;
}

/// phi = sum_n weights[n] R_hat(t - n) over `history` (oldest first, last = day t).
inline double direct_trend(std::span<const double> history, std::span<const double> weights) {
  const std::size_t L = std::min(weights.size(), history.size());
  double phi = 0.0;
  for (std::size_t n = L; n-- > 0;) phi += weights[n] * history[history.size() - 1 - n];
  return phi;
}

/// Direct truncated sum; the independent counterpart of the recursion.
inline double direct_trend(std::span<const double> history, const TrendSpec& spec) {
  if (history.empty()) return 0.0;
  const auto L = std::min<std::size_t>(static_cast<std::size_t>(truncation_length(spec)), history.size());
  return direct_trend(history, weight_vector(spec, L));
}

inline double cap_floor(double phi, double cap) {
  if (!(cap > 0.0)) throw Error("cap must be positive");
  return std::min(cap, std::max(-cap, phi));
}

/// Uncapped trend-strength path: out[t] is phi at the end of day t, from a zero
/// state before day 0. xexp/ewma use the recursion, step/mac finite sums.
inline std::vector<double> trend_series(std::span<const double> excess, const TrendSpec& spec) {
  spec.validate();
  std::vector<double> out(excess.size());
  switch (spec.scheme) {
    case WeightScheme::xexp:
    case WeightScheme::ewma: {
      auto st = TrendState::initial(spec.horizon());
      const bool use_psi = spec.scheme == WeightScheme::ewma;
      for (std::size_t t = 0; t < excess.size(); ++t) {
        st = update_state(st, excess[t]);
        out[t] = use_psi ? st.psi : st.phi;
      }
      break;
    }
    case WeightScheme::step: {
      const auto T = static_cast<std::size_t>(spec.horizon());
      const double w = 1.0 / std::sqrt(spec.horizon());
      double sum = 0.0;
      for (std::size_t t = 0; t < excess.size(); ++t) {
        sum += excess[t];
        if (t >= T) sum -= excess[t - T];
        out[t] = w * sum;
      }
      break;
    }
    case WeightScheme::mac: {
      const auto w = weight_vector(spec, static_cast<std::size_t>(spec.mac_long));
      for (std::size_t t = 0; t < excess.size(); ++t) {
        double s = 0.0;
        for (std::size_t n = 0; n < w.size() && n <= t; ++n) s += w[n] * excess[t - n];
        out[t] = s;
      }
      break;
    }
  }
  return out;
}

}  // namespace trendrev
