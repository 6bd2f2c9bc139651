#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "oracles.hpp"
#include "subtree/stats.hpp"

using namespace subtree;

TEST_CASE("chi-squared quantiles match quadrature to 1e-8 relative") {
  for (double df : {1.0, 2.0, 5.0, 10.0, 37.0, 200.0, 1000.0}) {
    for (double p : {0.5, 0.9, 0.95, 0.99}) {
      double got = chi2_quantile(p, df);
      double ref = oracle::chi2_quantile(p, df);
      CHECK(std::abs(got - ref) / ref < 1e-8);
    }
  }
  // the selection-gate constant
  CHECK(chi2_quantile(0.95, 1.0) == doctest::Approx(3.8414588206941254).epsilon(1e-12));
}

TEST_CASE("chi-squared cdf/pvalue match quadrature") {
  for (double df : {1.0, 3.0, 8.0, 50.0}) {
    for (double x : {0.3, 1.0, 4.2, 11.0, 30.0}) {
      // lower and upper tails are each integrated directly, so both
      // comparisons can be relative (scale 0) without cancellation noise
      CHECK(chi2_cdf(x, df) ==
            doctest::Approx(oracle::chi2_cdf(x, df)).epsilon(1e-8).scale(0.0));
      CHECK(chi2_pvalue(x, df) ==
            doctest::Approx(oracle::chi2_sf(x, df)).epsilon(1e-7).scale(0.0));
    }
  }
}

TEST_CASE("F upper-tail probabilities match quadrature") {
  struct Case { double f, d1, d2; };
  for (auto c : {Case{2.5, 3, 17}, Case{1.0, 1, 10}, Case{5.0, 6, 40},
                 Case{0.4, 2, 2}, Case{12.0, 4, 8}}) {
    CHECK(f_pvalue(c.f, c.d1, c.d2) ==
          doctest::Approx(oracle::f_pvalue(c.f, c.d1, c.d2))
              .epsilon(1e-6)
              .scale(0.0));
  }
  CHECK(f_pvalue(-1.0, 3, 3) == 1.0);
}

TEST_CASE("p-value to 1-df chi-squared mapping") {
  CHECK(chi2_from_pvalue(0.05) == doctest::Approx(3.8414588206941254));
  CHECK(chi2_from_pvalue(1.0) == 0.0);
  // round trip: p -> q -> p, compared relatively so tiny p still counts
  for (double p : {0.8, 0.3, 0.01, 1e-6, 1e-12}) {
    CHECK(chi2_pvalue(chi2_from_pvalue(p), 1.0) ==
          doctest::Approx(p).epsilon(1e-9).scale(0.0));
  }
  // extreme p-values stay finite
  CHECK(std::isfinite(chi2_from_pvalue(0.0)));
  CHECK(chi2_from_pvalue(0.0) > 1000.0);
}

TEST_CASE("Yates-corrected 2x2 statistics reproduce the worked tables") {
  // residual-sign vs. grouped-predictor tables from the two-arm worked example
  ContingencyTable t1 = ContingencyTable::zeros(2, 2);
  t1.at(0, 0) = 21; t1.at(0, 1) = 6;
  t1.at(1, 0) = 2;  t1.at(1, 1) = 21;
  auto r1 = chi_squared_statistic(t1, true);
  CHECK(r1.df == 1);
  CHECK(std::abs(r1.statistic - 21.2) < 0.05);

  ContingencyTable t2 = ContingencyTable::zeros(2, 2);
  t2.at(0, 0) = 1;  t2.at(0, 1) = 21;
  t2.at(1, 0) = 26; t2.at(1, 1) = 2;
  auto r2 = chi_squared_statistic(t2, true);
  CHECK(r2.df == 1);
  CHECK(std::abs(r2.statistic - 35.2) < 0.05);

  // the default is the uncorrected Pearson statistic: the correction would
  // shrink 2x2 tables relative to wider ones and bias variable selection
  auto plain = chi_squared_statistic(t1);
  CHECK(plain.statistic > 23.0);
  CHECK(r1.statistic < 23.0);
}

TEST_CASE("all-zero rows and columns are dropped before df counting") {
  ContingencyTable t = ContingencyTable::zeros(3, 3);
  t.at(0, 0) = 5; t.at(0, 2) = 3;
  t.at(2, 0) = 2; t.at(2, 2) = 7;
  auto r = chi_squared_statistic(t);
  CHECK(r.df == 1);  // effective 2x2

  ContingencyTable t2 = ContingencyTable::zeros(2, 2);
  t2.at(0, 0) = 4; t2.at(0, 1) = 6;
  auto r2 = chi_squared_statistic(t2);
  CHECK(r2.df == 0);
  CHECK(r2.statistic == 0.0);
}

TEST_CASE("chi-squared statistic is invariant to row/col permutations") {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> cell(0, 12);
  for (int rep = 0; rep < 50; ++rep) {
    ContingencyTable t = ContingencyTable::zeros(3, 4);
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t c = 0; c < 4; ++c) t.at(r, c) = cell(rng);
    ContingencyTable p = ContingencyTable::zeros(3, 4);
    std::size_t rp[3] = {2, 0, 1}, cp[4] = {3, 1, 0, 2};
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t c = 0; c < 4; ++c) p.at(rp[r], cp[c]) = t.at(r, c);
    auto a = chi_squared_statistic(t);
    auto b = chi_squared_statistic(p);
    CHECK(a.df == b.df);
    CHECK(a.statistic == doctest::Approx(b.statistic).epsilon(1e-12));
  }
}

TEST_CASE("Wilson-Hilferty: identity at nu=mu=1, clamping, bracket quality") {
  for (double x : {0.0, 0.04, 1.0, 5.0, 21.2, 56.37, 300.0}) {
    CHECK(wilson_hilferty(x, 1.0, 1.0) == doctest::Approx(x).epsilon(1e-12));
  }
  CHECK(wilson_hilferty(0.0, 5.0, 1.0) == 0.0);
  // the worked two-arm example: 21.2 + 35.2 on the 2-df scale -> about 56.0
  CHECK(wilson_hilferty(56.37, 2.0, 1.0) == doctest::Approx(56.0).epsilon(0.002));
  // monotone in x
  double prev = -1.0;
  for (double x = 0.0; x < 40.0; x += 0.5) {
    double y = wilson_hilferty(x, 4.0, 1.0);
    CHECK(y >= prev);
    prev = y;
  }
  // tail-probability transport: for upper tails 0.10/0.05/0.01 the mapped
  // value lands within +-0.01 of the same tail on the 1-df scale
  for (double alpha : {0.10, 0.05, 0.01}) {
    for (double nu = 2.0; nu <= 30.0; nu += 1.0) {
      double x = chi2_quantile(1.0 - alpha, nu);
      double implied = chi2_pvalue(wilson_hilferty(x, nu, 1.0), 1.0);
      CHECK(implied > alpha - 0.01);
      CHECK(implied < alpha + 0.01);
    }
  }
}

TEST_CASE("treatment-means fit: means, residuals, least-squares property") {
  std::vector<double> y{1.0, 3.0, 10.0, 14.0, 2.0};
  std::vector<int> z{0, 0, 1, 1, 0};
  auto fit = fit_treatment_means(y, z, 2);
  CHECK(fit.mean[0] == doctest::Approx(2.0));
  CHECK(fit.mean[1] == doctest::Approx(12.0));
  CHECK(fit.count[0] == 3);
  CHECK(fit.residual[0] == doctest::Approx(-1.0));
  CHECK(fit.sse == doctest::Approx(1 + 1 + 4 + 4 + 0));

  // perturbing any level mean can only increase the squared error
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> eps(-1.0, 1.0);
  for (int rep = 0; rep < 20; ++rep) {
    double m0 = fit.mean[0] + eps(rng), m1 = fit.mean[1] + eps(rng);
    double sse = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      double m = z[i] == 0 ? m0 : m1;
      sse += (y[i] - m) * (y[i] - m);
    }
    CHECK(sse >= fit.sse - 1e-12);
  }

  CHECK_THROWS_AS(fit_treatment_means({}, {}, 2), InputError);
}

TEST_CASE("lack-of-fit q is zero for exactly additive cell means") {
  // E[Y] = 1 + 2 I(z=1) + 3 I(h=1): no interaction, no noise
  std::vector<double> y;
  std::vector<int> z, h;
  for (int zi = 0; zi < 2; ++zi)
    for (int hi = 0; hi < 2; ++hi)
      for (int k = 0; k < 5; ++k) {
        y.push_back(1.0 + 2.0 * zi + 3.0 * hi);
        z.push_back(zi);
        h.push_back(hi);
      }
  CHECK(lack_of_fit_q(y, z, 2, h, 2) == 0.0);
}

TEST_CASE("lack-of-fit q grows with interaction strength") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> noise(0.0, 1.0);
  auto make_q = [&](double interaction) {
    std::vector<double> y;
    std::vector<int> z, h;
    std::mt19937_64 local(99);
    std::normal_distribution<double> e(0.0, 1.0);
    for (int zi = 0; zi < 2; ++zi)
      for (int hi = 0; hi < 3; ++hi)
        for (int k = 0; k < 30; ++k) {
          y.push_back(zi + 0.5 * hi + interaction * zi * (hi == 2) + e(local));
          z.push_back(zi);
          h.push_back(hi);
        }
    return lack_of_fit_q(y, z, 2, h, 3);
  };
  double q0 = make_q(0.0), q2 = make_q(2.0), q5 = make_q(5.0);
  CHECK(q2 > q0);
  CHECK(q5 > q2);
  CHECK(q5 > chi2_quantile(0.95, 1.0));
  (void)rng; (void)noise;
}

TEST_CASE("lack-of-fit q is null-calibrated under the additive model") {
  // under additivity+noise, q > 95% point in roughly 5% of draws
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> e(0.0, 1.0);
  std::uniform_int_distribution<int> zdist(0, 1), hdist(0, 2);
  int hits = 0;
  const int reps = 2000;
  const double gate = chi2_quantile(0.95, 1.0);
  for (int rep = 0; rep < reps; ++rep) {
    std::vector<double> y;
    std::vector<int> z, h;
    for (int i = 0; i < 90; ++i) {
      int zi = zdist(rng), hi = hdist(rng);
      y.push_back(0.5 * zi + 0.3 * hi + e(rng));
      z.push_back(zi);
      h.push_back(hi);
    }
    if (lack_of_fit_q(y, z, 2, h, 3) > gate) ++hits;
  }
  double rate = static_cast<double>(hits) / reps;
  CHECK(rate > 0.03);
  CHECK(rate < 0.075);
}

TEST_CASE("lack-of-fit handles noise-free interaction and degenerate groups") {
  std::vector<double> y;
  std::vector<int> z, h;
  for (int zi = 0; zi < 2; ++zi)
    for (int hi = 0; hi < 2; ++hi)
      for (int k = 0; k < 4; ++k) {
        y.push_back(zi && hi ? 5.0 : 0.0);  // pure interaction, no noise
        z.push_back(zi);
        h.push_back(hi);
      }
  CHECK(lack_of_fit_q(y, z, 2, h, 2) > 100.0);

  // a single populated group cannot show lack of fit
  std::vector<int> h1(y.size(), 0);
  CHECK(lack_of_fit_q(y, z, 2, h1, 1) == 0.0);
}
