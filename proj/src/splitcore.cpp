#include "subtree/splitcore.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace subtree {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::vector<int> treatment_codes(const Dataset& ds,
                                 const std::vector<int>& rows) {
  const Column& zc = ds.col(ds.treatment);
  std::vector<int> z(rows.size());
  for (std::size_t k = 0; k < rows.size(); ++k)
    z[k] = zc.code[static_cast<std::size_t>(rows[k])];
  return z;
}

// Treatment levels with at least one row in the node.
std::vector<char> present_levels(const std::vector<int>& z, int n_levels) {
  std::vector<char> present(static_cast<std::size_t>(n_levels), 0);
  for (int v : z) present[static_cast<std::size_t>(v)] = 1;
  return present;
}

// ---- selection -------------------------------------------------------------

template <typename ScoreFn>
std::vector<VariableScore> score_predictors(const Dataset& ds,
                                            const std::vector<int>& rows,
                                            ScoreFn&& score) {
  std::vector<VariableScore> out;
  for (int col : ds.predictors) {
    FactorGrouping g = group_rows(ds, col, rows);
    if (g.degenerate) continue;  // constant predictors carry no information
    VariableScore vs;
    vs.column = col;
    vs.variable = ds.col(col).name;
    score(g, vs);
    out.push_back(std::move(vs));
  }
  // stable: equal q keeps dataset column order
  std::stable_sort(out.begin(), out.end(),
                   [](const VariableScore& a, const VariableScore& b) {
                     return a.q > b.q;
                   });
  return out;
}

}  // namespace

bool SplitRule::routes_left(const Dataset& ds, std::size_t row) const {
  const Column& c = ds.col(column);
  if (c.miss[row]) return missing_goes_left;
  if (kind == SplitKind::OrdinalThreshold) return c.num[row] <= threshold;
  return std::binary_search(left_levels.begin(), left_levels.end(),
                            c.code[row]);
}

std::vector<VariableScore> gs_select(const Dataset& ds,
                                     const std::vector<int>& rows,
                                     const std::vector<double>& residual) {
  if (residual.size() != rows.size())
    throw InputError("gs_select: residual not aligned with rows");
  std::vector<int> z = treatment_codes(ds, rows);
  int n_levels = ds.n_treatment_levels();
  std::vector<char> present = present_levels(z, n_levels);
  int L = static_cast<int>(std::count(present.begin(), present.end(), 1));

  return score_predictors(ds, rows, [&](const FactorGrouping& g,
                                        VariableScore& vs) {
    double sum_r = 0.0;
    for (int lev = 0; lev < n_levels; ++lev) {
      if (!present[static_cast<std::size_t>(lev)]) continue;
      auto tab = ContingencyTable::zeros(2, static_cast<std::size_t>(g.n_levels));
      for (std::size_t k = 0; k < rows.size(); ++k) {
        if (z[k] != lev) continue;
        tab.at(residual[k] > 0.0 ? 0 : 1,
               static_cast<std::size_t>(g.level[k])) += 1.0;
      }
      ChiSquared cs = chi_squared_statistic(tab);
      double r = cs.df >= 1 ? wilson_hilferty(cs.statistic, cs.df, 1.0) : 0.0;
      vs.r_z.push_back(r);
      sum_r += r;
    }
    vs.q = wilson_hilferty(sum_r, static_cast<double>(L), 1.0);
  });
}

std::vector<VariableScore> gi_select(const Dataset& ds,
                                     const std::vector<int>& rows) {
  std::vector<int> z = treatment_codes(ds, rows);
  std::vector<double> y(rows.size());
  const Column& yc = ds.col(ds.response);
  for (std::size_t k = 0; k < rows.size(); ++k)
    y[k] = yc.num[static_cast<std::size_t>(rows[k])];
  int n_levels = ds.n_treatment_levels();

  return score_predictors(
      ds, rows, [&](const FactorGrouping& g, VariableScore& vs) {
        vs.q = lack_of_fit_q(y, z, n_levels, g.level, g.n_levels);
      });
}

std::vector<VariableScore> gi_select_censored(
    const Dataset& ds, const std::vector<int>& rows,
    const std::vector<double>& delta, const std::vector<double>& cumhaz) {
  if (delta.size() != rows.size() || cumhaz.size() != rows.size())
    throw InputError("gi_select_censored: vectors not aligned with rows");
  std::vector<int> z = treatment_codes(ds, rows);
  int n_levels = ds.n_treatment_levels();

  return score_predictors(ds, rows, [&](const FactorGrouping& g,
                                        VariableScore& vs) {
    // active rows: positive baseline hazard (others are inert this iteration)
    std::vector<std::size_t> act;
    for (std::size_t k = 0; k < rows.size(); ++k)
      if (cumhaz[k] > 0.0) act.push_back(k);
    vs.q = 0.0;
    if (act.size() < 2) return;

    // compact the treatment and grouping levels seen among active rows
    std::vector<int> zmap(static_cast<std::size_t>(n_levels), -1);
    std::vector<int> hmap(static_cast<std::size_t>(g.n_levels), -1);
    int L = 0, G = 0;
    for (std::size_t k : act) {
      auto& zm = zmap[static_cast<std::size_t>(z[k])];
      if (zm < 0) zm = L++;
      auto& hm = hmap[static_cast<std::size_t>(g.level[k])];
      if (hm < 0) hm = G++;
    }
    if (L < 2 || G < 2) return;

    // saturated per-cell rates: closed form, loglik kernel per cell is
    //   sum(delta log Lambda) + E log(E/O) - E  with E = sum delta, O = sum
    //   Lambda (zero-event cells contribute exactly 0)
    std::vector<double> cell_e(static_cast<std::size_t>(L * G), 0.0);
    std::vector<double> cell_o(static_cast<std::size_t>(L * G), 0.0);
    std::vector<char> cell_used(static_cast<std::size_t>(L * G), 0);
    double tlog = 0.0;
    for (std::size_t k : act) {
      auto c = static_cast<std::size_t>(
          zmap[static_cast<std::size_t>(z[k])] * G +
          hmap[static_cast<std::size_t>(g.level[k])]);
      cell_e[c] += delta[k];
      cell_o[c] += cumhaz[k];
      cell_used[c] = 1;
      if (delta[k] > 0.0) tlog += delta[k] * std::log(cumhaz[k]);
    }
    int n_cells = 0;
    double ll_sat = tlog;
    for (std::size_t c = 0; c < cell_e.size(); ++c) {
      if (!cell_used[c]) continue;
      ++n_cells;
      if (cell_e[c] > 0.0 && cell_o[c] > 0.0)
        ll_sat += cell_e[c] * std::log(cell_e[c] / cell_o[c]) - cell_e[c];
    }

    // additive log-linear model: intercept + treatment + grouping dummies
    std::size_t p = static_cast<std::size_t>(1 + (L - 1) + (G - 1));
    std::vector<double> X(act.size() * p, 0.0);
    std::vector<double> ev(act.size()), offl(act.size());
    for (std::size_t a = 0; a < act.size(); ++a) {
      std::size_t k = act[a];
      X[a * p] = 1.0;
      int zi = zmap[static_cast<std::size_t>(z[k])];
      int hi = hmap[static_cast<std::size_t>(g.level[k])];
      if (zi > 0) X[a * p + static_cast<std::size_t>(zi)] = 1.0;
      if (hi > 0) X[a * p + static_cast<std::size_t>(L - 1 + hi)] = 1.0;
      ev[a] = delta[k];
      offl[a] = std::log(cumhaz[k]);
    }
    GlmFit add = poisson_loglinear(X, act.size(), p, ev, offl);
    int df = n_cells - add.rank;
    if (df < 1) return;
    double stat = std::max(0.0, 2.0 * (ll_sat - add.loglik));
    vs.q = chi2_from_pvalue(chi2_pvalue(stat, static_cast<double>(df)));
  });
}

std::vector<int> gc_class_variable(const std::vector<double>& y,
                                   const std::vector<int>& z) {
  if (y.size() != z.size()) throw InputError("gc_class_variable: size mismatch");
  std::vector<int> v(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (!(y[i] == 0.0 || y[i] == 1.0))
      throw InputError("gc_class_variable: response must be binary 0/1");
    if (!(z[i] == 0 || z[i] == 1))
      throw InputError("gc_class_variable: treatment must be binary 0/1");
    v[i] = (static_cast<int>(y[i]) + z[i]) % 2;
  }
  return v;
}

std::vector<VariableScore> gc_select(const Dataset& ds,
                                     const std::vector<int>& rows,
                                     const std::vector<int>& v) {
  if (v.size() != rows.size())
    throw InputError("gc_select: class vector not aligned with rows");
  return score_predictors(
      ds, rows, [&](const FactorGrouping& g, VariableScore& vs) {
        auto tab =
            ContingencyTable::zeros(2, static_cast<std::size_t>(g.n_levels));
        for (std::size_t k = 0; k < rows.size(); ++k)
          tab.at(static_cast<std::size_t>(v[k]),
                 static_cast<std::size_t>(g.level[k])) += 1.0;
        ChiSquared cs = chi_squared_statistic(tab);
        vs.q = cs.df >= 1 ? wilson_hilferty(cs.statistic, cs.df, 1.0) : 0.0;
      });
}

// ---- split-point search ----------------------------------------------------

namespace {

// Additive per-child accumulator covering all three criteria.
struct Acc {
  std::vector<double> cnt, sy, syy;   // per treatment level
  std::vector<double> ev, off, tlog;  // per treatment level (censored)
  double cls_cnt[2] = {0.0, 0.0};
  double n = 0.0;

  explicit Acc(int n_levels)
      : cnt(static_cast<std::size_t>(n_levels), 0.0),
        sy(cnt.size(), 0.0),
        syy(cnt.size(), 0.0),
        ev(cnt.size(), 0.0),
        off(cnt.size(), 0.0),
        tlog(cnt.size(), 0.0) {}

  void add_row(const SplitContext& ctx, std::size_t k) {
    auto z = static_cast<std::size_t>(ctx.z[k]);
    cnt[z] += 1.0;
    n += 1.0;
    if (!ctx.y.empty()) {
      sy[z] += ctx.y[k];
      syy[z] += ctx.y[k] * ctx.y[k];
    }
    if (!ctx.delta.empty()) {
      ev[z] += ctx.delta[k];
      off[z] += ctx.cumhaz[k];
      if (ctx.delta[k] > 0.0 && ctx.cumhaz[k] > 0.0)
        tlog[z] += ctx.delta[k] * std::log(ctx.cumhaz[k]);
    }
    if (!ctx.cls.empty()) cls_cnt[ctx.cls[k] ? 1 : 0] += 1.0;
  }

  void add(const Acc& o) {
    for (std::size_t i = 0; i < cnt.size(); ++i) {
      cnt[i] += o.cnt[i];
      sy[i] += o.sy[i];
      syy[i] += o.syy[i];
      ev[i] += o.ev[i];
      off[i] += o.off[i];
      tlog[i] += o.tlog[i];
    }
    cls_cnt[0] += o.cls_cnt[0];
    cls_cnt[1] += o.cls_cnt[1];
    n += o.n;
  }

  void subtract(const Acc& o) {
    for (std::size_t i = 0; i < cnt.size(); ++i) {
      cnt[i] -= o.cnt[i];
      sy[i] -= o.sy[i];
      syy[i] -= o.syy[i];
      ev[i] -= o.ev[i];
      off[i] -= o.off[i];
      tlog[i] -= o.tlog[i];
    }
    cls_cnt[0] -= o.cls_cnt[0];
    cls_cnt[1] -= o.cls_cnt[1];
    n -= o.n;
  }
};

double child_cost(const Acc& a, SplitCriterion criterion) {
  switch (criterion) {
    case SplitCriterion::TreatmentMeansSSE: {
      double sse = 0.0;
      for (std::size_t i = 0; i < a.cnt.size(); ++i)
        if (a.cnt[i] > 0.0)
          sse += std::max(0.0, a.syy[i] - a.sy[i] * a.sy[i] / a.cnt[i]);
      return sse;
    }
    case SplitCriterion::PoissonDeviance: {
      double dev = 0.0;
      for (std::size_t i = 0; i < a.cnt.size(); ++i) {
        double term = a.tlog[i];
        if (a.ev[i] > 0.0 && a.off[i] > 0.0)
          term += a.ev[i] * std::log(a.ev[i] / a.off[i]) - a.ev[i];
        dev += -2.0 * term;
      }
      return dev;
    }
    case SplitCriterion::GiniClass: {
      if (a.n <= 0.0) return 0.0;
      double ss = a.cls_cnt[0] * a.cls_cnt[0] + a.cls_cnt[1] * a.cls_cnt[1];
      return a.n - ss / a.n;
    }
  }
  return 0.0;
}

bool admissible(const Acc& left, const Acc& right, const SplitContext& ctx,
                const std::vector<char>& present) {
  if (left.n < 1.0 || right.n < 1.0) return false;
  if (left.n < ctx.min_node_size || right.n < ctx.min_node_size) return false;
  for (std::size_t i = 0; i < present.size(); ++i) {
    if (!present[i]) continue;
    if (left.cnt[i] < ctx.min_level_count ||
        right.cnt[i] < ctx.min_level_count)
      return false;
  }
  if (ctx.forbid_pure_children) {
    if (left.cls_cnt[0] == 0.0 || left.cls_cnt[1] == 0.0) return false;
    if (right.cls_cnt[0] == 0.0 || right.cls_cnt[1] == 0.0) return false;
  }
  return true;
}

struct BestSplit {
  double cost = kInf;
  bool found = false;
  double threshold = 0.0;
  bool missing_left = false;
  std::vector<int> left_units;  // categorical: grouping unit indices
  double n_left = 0.0, n_right = 0.0;
};

}  // namespace

std::vector<std::vector<int>> categorical_candidates(
    const Dataset& ds, const std::vector<int>& rows, int column,
    const std::vector<int>& cls) {
  FactorGrouping g = group_rows(ds, column, rows);
  std::vector<std::vector<int>> out;
  if (g.degenerate) return out;
  int gu = g.n_levels;  // every grouping level is populated by construction

  if (gu < 10) {
    // all subsets of units 1..gu-1; unit 0 stays on the right
    for (unsigned mask = 1; mask < (1u << (gu - 1)); ++mask) {
      std::vector<int> left;
      for (int u = 1; u < gu; ++u)
        if (mask & (1u << (u - 1)))
          left.push_back(g.source_level[static_cast<std::size_t>(u)]);
      out.push_back(std::move(left));
    }
    return out;
  }

  // many levels: order units by their proportion of cls == 1 rows and take
  // the gu - 1 ordered prefixes
  if (cls.size() != rows.size())
    throw InputError(
        "categorical_candidates: class labels required for 10+ levels");
  std::vector<double> n1(static_cast<std::size_t>(gu), 0.0),
      nt(static_cast<std::size_t>(gu), 0.0);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    auto u = static_cast<std::size_t>(g.level[k]);
    nt[u] += 1.0;
    if (cls[k]) n1[u] += 1.0;
  }
  std::vector<int> order(static_cast<std::size_t>(gu));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    double pa = n1[static_cast<std::size_t>(a)] / nt[static_cast<std::size_t>(a)];
    double pb = n1[static_cast<std::size_t>(b)] / nt[static_cast<std::size_t>(b)];
    return pa < pb;
  });
  std::vector<int> left;
  for (int j = 0; j + 1 < gu; ++j) {
    left.push_back(g.source_level[static_cast<std::size_t>(order[static_cast<std::size_t>(j)])]);
    out.push_back(left);
  }
  return out;
}

std::optional<SplitRule> find_split_point(const Dataset& ds,
                                          const std::vector<int>& rows,
                                          int column,
                                          const SplitContext& ctx) {
  if (ctx.z.size() != rows.size())
    throw InputError("find_split_point: z not aligned with rows");
  const Column& xc = ds.col(column);
  std::vector<char> present = present_levels(ctx.z, ctx.n_treatment_levels);
  BestSplit best;
  auto consider = [&](double cost, const Acc& left, const Acc& right,
                      auto&& record) {
    if (!admissible(left, right, ctx, present)) return;
    if (cost < best.cost) {
      best.cost = cost;
      best.found = true;
      best.n_left = left.n;
      best.n_right = right.n;
      record();
    }
  };

  if (!xc.is_factor()) {
    // ---- ordinal: thresholds at midpoints of consecutive distinct values
    std::vector<std::size_t> obs;  // positions into rows, non-missing
    Acc total(ctx.n_treatment_levels), missing(ctx.n_treatment_levels);
    bool any_missing = false;
    for (std::size_t k = 0; k < rows.size(); ++k) {
      total.add_row(ctx, k);
      if (xc.miss[static_cast<std::size_t>(rows[k])]) {
        missing.add_row(ctx, k);
        any_missing = true;
      } else {
        obs.push_back(k);
      }
    }
    if (obs.size() < 2) return std::nullopt;
    std::stable_sort(obs.begin(), obs.end(), [&](std::size_t a, std::size_t b) {
      return xc.num[static_cast<std::size_t>(rows[a])] <
             xc.num[static_cast<std::size_t>(rows[b])];
    });

    // missing-left variant scanned first, then missing-right; within a
    // variant thresholds ascend, so ties keep the earliest candidate
    int n_variants = any_missing ? 2 : 1;
    for (int variant = 0; variant < n_variants; ++variant) {
      bool miss_left = any_missing && variant == 0;
      Acc left(ctx.n_treatment_levels);
      if (miss_left) left.add(missing);
      for (std::size_t j = 0; j + 1 < obs.size(); ++j) {
        left.add_row(ctx, obs[j]);
        double lo = xc.num[static_cast<std::size_t>(rows[obs[j]])];
        double hi = xc.num[static_cast<std::size_t>(rows[obs[j + 1]])];
        if (lo == hi) continue;
        Acc right = total;
        right.subtract(left);
        double c =
            child_cost(left, ctx.criterion) + child_cost(right, ctx.criterion);
        double thr = lo + (hi - lo) / 2.0;
        consider(c, left, right, [&] {
          best.threshold = thr;
          best.missing_left = miss_left;
        });
      }
    }
    if (!best.found) return std::nullopt;

    SplitRule rule;
    rule.column = column;
    rule.variable = xc.name;
    rule.kind = SplitKind::OrdinalThreshold;
    rule.threshold = best.threshold;
    rule.missing_goes_left =
        any_missing ? best.missing_left : best.n_left >= best.n_right;
    return rule;
  }

  // ---- categorical: subset enumeration over grouping units
  FactorGrouping g = group_rows(ds, column, rows);
  if (g.degenerate) return std::nullopt;
  int gu = g.n_levels;
  std::vector<Acc> unit_acc(static_cast<std::size_t>(gu),
                            Acc(ctx.n_treatment_levels));
  Acc total(ctx.n_treatment_levels);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    unit_acc[static_cast<std::size_t>(g.level[k])].add_row(ctx, k);
    total.add_row(ctx, k);
  }
  // map dataset level code -> grouping unit
  auto unit_of = [&](int code) {
    for (int u = 0; u < gu; ++u)
      if (g.source_level[static_cast<std::size_t>(u)] == code) return u;
    return -1;
  };

  // the many-level shortcut scores its ordered candidates by the Gini sum of
  // the class labels rather than the context criterion
  SplitCriterion crit =
      gu >= 10 ? SplitCriterion::GiniClass : ctx.criterion;
  for (const auto& cand : categorical_candidates(ds, rows, column, ctx.cls)) {
    Acc left(ctx.n_treatment_levels);
    std::vector<int> units;
    for (int code : cand) {
      int u = unit_of(code);
      left.add(unit_acc[static_cast<std::size_t>(u)]);
      units.push_back(u);
    }
    Acc right = total;
    right.subtract(left);
    double c = child_cost(left, crit) + child_cost(right, crit);
    consider(c, left, right, [&] { best.left_units = units; });
  }
  if (!best.found) return std::nullopt;

  SplitRule rule;
  rule.column = column;
  rule.variable = xc.name;
  rule.kind = SplitKind::CategoricalSubset;
  bool miss_in_left = false;
  for (int u : best.left_units) {
    int code = g.source_level[static_cast<std::size_t>(u)];
    if (code < 0)
      miss_in_left = true;
    else
      rule.left_levels.push_back(code);
  }
  std::sort(rule.left_levels.begin(), rule.left_levels.end());
  rule.missing_goes_left = g.missing_level >= 0
                               ? miss_in_left
                               : best.n_left >= best.n_right;
  return rule;
}

}  // namespace subtree
