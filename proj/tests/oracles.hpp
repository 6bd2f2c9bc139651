#pragma once

// Test-only reference implementations, kept independent of the library code
// they verify: quadrature instead of closed-form special functions, exhaustive
// search instead of incremental scans.

#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

namespace oracle {

// Simpson integration of f over [a, b] with n panels (n forced even).
inline double simpson(const std::function<double(double)>& f, double a,
                      double b, int n = 4000) {
  if (n % 2) ++n;
  double h = (b - a) / n;
  double s = f(a) + f(b);
  for (int i = 1; i < n; ++i) s += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
  return s * h / 3.0;
}

// Chi-squared(df) density after the substitution x = u^2, which removes the
// x^(df/2-1) singularity for df >= 1 (density in u is ~ u^(df-1) e^{-u^2/2}).
inline double chi2_density_u(double u, double df) {
  double log_norm = -(df / 2.0) * std::log(2.0) - std::lgamma(df / 2.0);
  if (u <= 0.0) {
    // u^(df-1) -> 1 as u -> 0 when df == 1, so the endpoint is NOT zero
    return df > 1.0 ? 0.0 : std::exp(std::log(2.0) + log_norm);
  }
  double logv =
      std::log(2.0) + (df - 1.0) * std::log(u) - u * u / 2.0 + log_norm;
  return std::exp(logv);
}

// Chi-squared(df) CDF by quadrature of the lower tail.
inline double chi2_cdf(double x, double df) {
  if (x <= 0.0) return 0.0;
  auto g = [&](double u) { return chi2_density_u(u, df); };
  return simpson(g, 0.0, std::sqrt(x), 20000);
}

// Chi-squared(df) upper tail by quadrature over [x, cutoff]; in u the density
// decays like a Gaussian, so 45 units beyond the mode the remainder is
// negligible at any precision this file cares about.
inline double chi2_sf(double x, double df) {
  if (x <= 0.0) return 1.0;
  double u_lo = std::sqrt(x);
  double u_mode = std::sqrt(std::max(df - 1.0, 0.0));
  double u_hi = std::max(u_lo, u_mode) + 45.0;
  auto g = [&](double u) { return chi2_density_u(u, df); };
  return simpson(g, u_lo, u_hi, 40000);
}

// Quantile by bisection on the quadrature CDF.
inline double chi2_quantile(double p, double df) {
  double lo = 0.0, hi = std::max(10.0, df + 40.0 * std::sqrt(2.0 * df));
  while (chi2_cdf(hi, df) < p) hi *= 2.0;
  for (int i = 0; i < 200; ++i) {
    double mid = 0.5 * (lo + hi);
    (chi2_cdf(mid, df) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

// F(d1, d2) upper-tail probability. Substituting v = d2/(d2 + d1 x) maps
// P(X > f) to a Beta(d2/2, d1/2) lower-tail integral over v in (0, v_f];
// a second substitution v = s^2 removes the v^(d2/2-1) endpoint singularity,
// leaving a bounded smooth integrand on [0, sqrt(v_f)].
inline double f_pvalue(double f, double d1, double d2) {
  if (f <= 0.0) return 1.0;
  double v_f = d2 / (d2 + d1 * f);
  double log_norm = std::lgamma((d1 + d2) / 2.0) - std::lgamma(d1 / 2.0) -
                    std::lgamma(d2 / 2.0);
  auto g = [&](double s) {
    if (s <= 0.0)  // s^(d2-1) endpoint: nonzero only when d2 == 1
      return d2 > 1.0 ? 0.0 : std::exp(std::log(2.0) + log_norm);
    double logv = std::log(2.0) + (d2 - 1.0) * std::log(s) +
                  (d1 / 2.0 - 1.0) * std::log1p(-s * s) + log_norm;
    return std::exp(logv);
  };
  return simpson(g, 0.0, std::sqrt(v_f), 40000);
}

// Closed-form Poisson rate-ratio solution for a saturated treatment-level
// model with offset: rate_z = sum(events in level z) / sum(offsets in z).
struct PoissonRates {
  std::vector<double> rate;       // per level
  std::vector<bool> defined;      // false when the level has no events
};

inline PoissonRates poisson_level_rates(const std::vector<double>& events,
                                        const std::vector<double>& offsets,
                                        const std::vector<int>& level,
                                        int n_levels) {
  std::vector<double> ev(n_levels, 0.0), off(n_levels, 0.0);
  for (std::size_t i = 0; i < events.size(); ++i) {
    ev[level[i]] += events[i];
    off[level[i]] += offsets[i];
  }
  PoissonRates out;
  out.rate.resize(n_levels, 0.0);
  out.defined.resize(n_levels, false);
  for (int l = 0; l < n_levels; ++l) {
    if (ev[l] > 0.0 && off[l] > 0.0) {
      out.rate[l] = ev[l] / off[l];
      out.defined[l] = true;
    }
  }
  return out;
}

}  // namespace oracle
