#include "subtree/stats.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>
#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/fisher_f.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

namespace subtree {

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
}

double chi2_cdf(double x, double df) {
  if (x <= 0.0) return 0.0;
  boost::math::chi_squared dist(df);
  return boost::math::cdf(dist, x);
}

double chi2_quantile(double p, double df) {
  if (!(p >= 0.0 && p < 1.0)) {
    throw NumericalError("chi2_quantile: p outside [0, 1)");
  }
  boost::math::chi_squared dist(df);
  return boost::math::quantile(dist, p);
}

double chi2_upper_quantile(double p_upper, double df) {
  if (!(p_upper > 0.0 && p_upper <= 1.0)) {
    throw NumericalError("chi2_upper_quantile: p outside (0, 1]");
  }
  boost::math::chi_squared dist(df);
  return boost::math::quantile(boost::math::complement(dist, p_upper));
}

double chi2_pvalue(double x, double df) {
  if (x <= 0.0) return 1.0;
  boost::math::chi_squared dist(df);
  return boost::math::cdf(boost::math::complement(dist, x));
}

double f_pvalue(double f, double d1, double d2) {
  if (f <= 0.0) return 1.0;
  boost::math::fisher_f dist(d1, d2);
  return boost::math::cdf(boost::math::complement(dist, f));
}

double normal_quantile(double p) {
  boost::math::normal dist;
  return boost::math::quantile(dist, p);
}

double t_quantile(double p, double df) {
  boost::math::students_t dist(df);
  return boost::math::quantile(dist, p);
}

double chi2_from_pvalue(double p) {
  p = std::clamp(p, 1e-300, 1.0);
  if (p == 1.0) return 0.0;
  return chi2_upper_quantile(p, 1.0);
}

ChiSquared chi_squared_statistic(const ContingencyTable& t, bool yates_2x2) {
  // Effective table: non-empty rows and columns only.
  std::vector<double> row_sum(t.n_rows, 0.0), col_sum(t.n_cols, 0.0);
  double total = 0.0;
  for (std::size_t r = 0; r < t.n_rows; ++r) {
    for (std::size_t c = 0; c < t.n_cols; ++c) {
      double v = t.at(r, c);
      row_sum[r] += v;
      col_sum[c] += v;
      total += v;
    }
  }
  std::vector<std::size_t> rows, cols;
  for (std::size_t r = 0; r < t.n_rows; ++r)
    if (row_sum[r] > 0.0) rows.push_back(r);
  for (std::size_t c = 0; c < t.n_cols; ++c)
    if (col_sum[c] > 0.0) cols.push_back(c);
  if (rows.size() < 2 || cols.size() < 2) return {0.0, 0};

  bool yates = yates_2x2 && rows.size() == 2 && cols.size() == 2;
  double stat = 0.0;
  for (std::size_t r : rows) {
    for (std::size_t c : cols) {
      double expected = row_sum[r] * col_sum[c] / total;
      double dev = std::abs(t.at(r, c) - expected);
      if (yates) dev = std::max(0.0, dev - 0.5);
      stat += dev * dev / expected;
    }
  }
  int df = static_cast<int>((rows.size() - 1) * (cols.size() - 1));
  return {stat, df};
}

double wilson_hilferty(double x, double nu, double mu) {
  if (x < 0.0 || nu <= 0.0 || mu <= 0.0) {
    throw NumericalError("wilson_hilferty: require x >= 0, nu > 0, mu > 0");
  }
  double bracket = 1.0 - 2.0 / (9.0 * mu) +
                   std::sqrt(nu / mu) *
                       (std::cbrt(x / nu) - 1.0 + 2.0 / (9.0 * nu));
  double y = mu * bracket * bracket * bracket;
  return std::max(0.0, y);
}

TreatmentMeansFit fit_treatment_means(const std::vector<double>& y,
                                      const std::vector<int>& z,
                                      int n_levels) {
  if (y.empty() || y.size() != z.size() || n_levels <= 0) {
    throw InputError("fit_treatment_means: empty or misaligned input");
  }
  TreatmentMeansFit fit;
  fit.mean.assign(static_cast<std::size_t>(n_levels), 0.0);
  fit.count.assign(static_cast<std::size_t>(n_levels), 0);
  for (std::size_t i = 0; i < y.size(); ++i) {
    auto l = static_cast<std::size_t>(z[i]);
    fit.mean[l] += y[i];
    ++fit.count[l];
  }
  for (std::size_t l = 0; l < fit.mean.size(); ++l) {
    fit.mean[l] = fit.count[l] ? fit.mean[l] / fit.count[l] : kNaN;
  }
  fit.residual.resize(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    double r = y[i] - fit.mean[static_cast<std::size_t>(z[i])];
    fit.residual[i] = r;
    fit.sse += r * r;
  }
  return fit;
}

double lack_of_fit_q(const std::vector<double>& y, const std::vector<int>& z,
                     int n_treatment_levels, const std::vector<int>& h,
                     int n_groups) {
  const std::size_t n = y.size();
  if (n == 0 || z.size() != n || h.size() != n) {
    throw InputError("lack_of_fit_q: empty or misaligned input");
  }
  const int L = n_treatment_levels, G = n_groups;

  // Saturated model: cell means over observed (z, h) cells.
  std::vector<double> cell_sum(static_cast<std::size_t>(L) * G, 0.0);
  std::vector<int> cell_n(static_cast<std::size_t>(L) * G, 0);
  std::vector<int> g_count(static_cast<std::size_t>(G), 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t cell = static_cast<std::size_t>(z[i]) * G + h[i];
    cell_sum[cell] += y[i];
    ++cell_n[cell];
    ++g_count[static_cast<std::size_t>(h[i])];
  }
  int populated_groups = 0;
  for (int c : g_count)
    if (c > 0) ++populated_groups;
  if (populated_groups < 2) return 0.0;

  int n_cells = 0;
  for (int c : cell_n)
    if (c > 0) ++n_cells;
  if (static_cast<std::size_t>(n_cells) >= n) return 0.0;  // no residual df

  double sse_full = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t cell = static_cast<std::size_t>(z[i]) * G + h[i];
    double r = y[i] - cell_sum[cell] / cell_n[cell];
    sse_full += r * r;
  }

  // Additive design: intercept + treatment dummies + group dummies.
  const int p = 1 + (L - 1) + (G - 1);
  Eigen::MatrixXd X = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), p);
  Eigen::VectorXd yv(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    auto row = static_cast<Eigen::Index>(i);
    X(row, 0) = 1.0;
    if (z[i] > 0) X(row, z[i]) = 1.0;
    if (h[i] > 0) X(row, (L - 1) + h[i]) = 1.0;
    yv(row) = y[i];
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  int rank = static_cast<int>(qr.rank());
  int df1 = n_cells - rank;
  int df2 = static_cast<int>(n) - n_cells;
  if (df1 <= 0 || df2 <= 0) return 0.0;

  Eigen::VectorXd resid = yv - X * qr.solve(yv);
  double sse_add = resid.squaredNorm();

  double sst = yv.squaredNorm();
  double eps = 1e-12 * std::max(1.0, sst);
  double num = std::max(0.0, sse_add - sse_full);
  if (sse_full <= eps) {
    if (num <= eps) return 0.0;
    return chi2_from_pvalue(1e-300);  // exact interaction, no noise
  }
  double f = (num / df1) / (sse_full / df2);
  return chi2_from_pvalue(f_pvalue(f, df1, df2));
}

GlmFit poisson_loglinear(const std::vector<double>& x, std::size_t n,
                         std::size_t p, const std::vector<double>& y,
                         const std::vector<double>& offset_log, int max_iter,
                         double tol) {
  if (n == 0 || p == 0 || x.size() != n * p || y.size() != n ||
      offset_log.size() != n) {
    throw InputError("poisson_loglinear: inconsistent dimensions");
  }
  auto ni = static_cast<Eigen::Index>(n);
  auto pi = static_cast<Eigen::Index>(p);
  Eigen::MatrixXd X(ni, pi);
  Eigen::VectorXd yv(ni), off(ni);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < p; ++j)
      X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          x[i * p + j];
    yv(static_cast<Eigen::Index>(i)) = y[i];
    if (!std::isfinite(offset_log[i]))
      throw InputError(
          "poisson_loglinear: offsets must be finite; drop zero-hazard rows");
    off(static_cast<Eigen::Index>(i)) = offset_log[i];
  }

  GlmFit fit;
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(pi);
  auto loglik_of = [&](const Eigen::VectorXd& b, Eigen::VectorXd& mu_out) {
    Eigen::VectorXd eta = off + X * b;
    double ll = 0.0;
    mu_out.resize(ni);
    for (Eigen::Index i = 0; i < ni; ++i) {
      // guard the linear predictor: rate-zero separation drives eta to -inf
      double e = std::clamp(eta(i), -30.0, 30.0);
      double mu = std::exp(e);
      mu_out(i) = mu;
      if (yv(i) > 0.0) ll += yv(i) * std::log(mu);
      ll -= mu;
    }
    return ll;
  };

  Eigen::VectorXd mu(ni);
  double ll = loglik_of(beta, mu);
  fit.rank = 0;
  for (int it = 0; it < max_iter; ++it) {
    // IRLS step: weights mu, working response (eta - offset) + (y - mu)/mu
    Eigen::VectorXd sw(ni), zeta(ni);
    for (Eigen::Index i = 0; i < ni; ++i) {
      double m = std::max(mu(i), 1e-12);
      sw(i) = std::sqrt(m);
      double eta_centered = std::log(m) - off(i);
      zeta(i) = eta_centered + (yv(i) - m) / m;
    }
    Eigen::MatrixXd Xw = sw.asDiagonal() * X;
    Eigen::VectorXd zw = sw.asDiagonal() * zeta;
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Xw);
    fit.rank = static_cast<int>(qr.rank());
    Eigen::VectorXd beta_new = qr.solve(zw);

    Eigen::VectorXd mu_new(ni);
    double ll_new = loglik_of(beta_new, mu_new);
    double step = (beta_new - beta).cwiseAbs().maxCoeff();
    beta = beta_new;
    mu = mu_new;
    bool ll_settled = std::abs(ll_new - ll) <=
                      1e-12 * (1.0 + std::abs(ll_new));
    ll = ll_new;
    if (step < tol * (1.0 + beta.cwiseAbs().maxCoeff()) || ll_settled) {
      fit.converged = true;
      break;
    }
  }
  fit.coef.assign(beta.data(), beta.data() + pi);
  fit.mu.assign(mu.data(), mu.data() + ni);
  fit.loglik = ll;
  return fit;
}

}  // namespace subtree
