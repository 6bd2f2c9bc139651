#pragma once

#include <cstddef>
#include <vector>

#include "subtree/common.hpp"

namespace subtree {

// ---- distribution helpers -------------------------------------------------

// P(X <= x) for X ~ chi-squared(df); df may be fractional.
double chi2_cdf(double x, double df);
// x with P(X <= x) = p.
double chi2_quantile(double p, double df);
// x with P(X > x) = p_upper; keeps precision for tiny tails.
double chi2_upper_quantile(double p_upper, double df);
// P(X > x) for X ~ chi-squared(df).
double chi2_pvalue(double x, double df);
// P(F > f) for F ~ F(d1, d2); f <= 0 gives 1.
double f_pvalue(double f, double d1, double d2);
// Standard normal quantile.
double normal_quantile(double p);
// Student-t quantile.
double t_quantile(double p, double df);

// Maps a p-value to the equivalent 1-df chi-squared value: the x with
// P(chi2_1 > x) = p. p is clamped to [1e-300, 1].
double chi2_from_pvalue(double p);

// ---- contingency tables ---------------------------------------------------

struct ContingencyTable {
  std::size_t n_rows = 0, n_cols = 0;
  std::vector<double> counts;  // row-major

  double& at(std::size_t r, std::size_t c) { return counts[r * n_cols + c]; }
  double at(std::size_t r, std::size_t c) const {
    return counts[r * n_cols + c];
  }
  static ContingencyTable zeros(std::size_t r, std::size_t c) {
    ContingencyTable t;
    t.n_rows = r;
    t.n_cols = c;
    t.counts.assign(r * c, 0.0);
    return t;
  }
};

struct ChiSquared {
  double statistic = 0.0;
  int df = 0;  // 0 when the table is degenerate
};

// Pearson chi-squared after dropping all-zero rows and columns. Degenerate
// tables (fewer than two non-empty rows or columns) give {0, 0}. With
// yates_2x2 set, a 2x2 effective table gets the continuity correction (each
// |O-E| - 1/2 term clamped at zero); split-variable selection always uses the
// uncorrected statistic so tables of different shapes stay comparable after
// the Wilson-Hilferty calibration.
ChiSquared chi_squared_statistic(const ContingencyTable& t,
                                 bool yates_2x2 = false);

// Wilson-Hilferty approximation: maps x ~ chi-squared(nu) to the mu-df scale,
//   y = max(0, mu * [1 - 2/(9 mu) + sqrt(nu/mu) ((x/nu)^(1/3) - 1 + 2/(9 nu))]^3).
// Identity when nu == mu == 1. Requires x >= 0, nu > 0, mu > 0.
double wilson_hilferty(double x, double nu, double mu = 1.0);

// ---- node regression fits -------------------------------------------------

// Least squares for E[Y] = mu_z per treatment level: per-level means.
struct TreatmentMeansFit {
  std::vector<double> mean;   // per level; NaN where count == 0
  std::vector<int> count;     // per level
  std::vector<double> residual;  // aligned with the input order
  double sse = 0.0;
};

// y and z aligned; z codes in [0, n_levels). Throws InputError when empty.
TreatmentMeansFit fit_treatment_means(const std::vector<double>& y,
                                      const std::vector<int>& z,
                                      int n_levels);

// Lack-of-fit test of the additive model
//   E[Y] = b0 + sum_k b_k I(Z=k) + sum_j g_j I(H=j)
// against the saturated Z x H cell-means model, as a classical F test.
// Returns the p-value mapped to the 1-df chi-squared scale via
// chi2_from_pvalue; degenerate configurations (no residual df, additive
// model saturating the cells, single populated H group) give 0.
// h holds group codes in [0, n_groups); n must match y/z.
double lack_of_fit_q(const std::vector<double>& y, const std::vector<int>& z,
                     int n_treatment_levels, const std::vector<int>& h,
                     int n_groups);

// ---- Poisson log-linear GLM -----------------------------------------------

struct GlmFit {
  std::vector<double> coef;  // size p
  std::vector<double> mu;    // fitted means, size n
  double loglik = 0.0;       // kernel: sum of y*log(mu) - mu
  int rank = 0;              // column rank of the design
  bool converged = false;
};

// Maximum-likelihood Poisson regression with log link and known offset:
//   E[y_i] = exp(offset_log[i] + x_i' beta),
// fitted by iteratively reweighted least squares. x is row-major n x p.
// Rank-deficient designs are solved in the least-squares sense (column-pivoted
// QR). Groups separated toward rate zero push their linear predictor to the
// lower guard; the likelihood still converges to its supremum and the fit is
// reported converged, with the affected coefficients large and negative.
GlmFit poisson_loglinear(const std::vector<double>& x, std::size_t n,
                         std::size_t p, const std::vector<double>& y,
                         const std::vector<double>& offset_log,
                         int max_iter = 100, double tol = 1e-10);

}  // namespace subtree
