#include "subtree/survival.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace subtree {

double HazardTable::eval(double t) const {
  auto it = std::upper_bound(times.begin(), times.end(), t);
  if (it == times.begin()) return 0.0;
  return cumhaz[static_cast<std::size_t>(it - times.begin()) - 1];
}

HazardTable nelson_aalen(const std::vector<double>& times,
                         const std::vector<double>& events,
                         const std::vector<double>& weights) {
  std::size_t n = times.size();
  if (events.size() != n || (!weights.empty() && weights.size() != n))
    throw InputError("nelson_aalen: inconsistent input lengths");
  for (std::size_t i = 0; i < n; ++i) {
    if (!(times[i] > 0.0)) throw InputError("nelson_aalen: times must be > 0");
    if (!weights.empty() && !(weights[i] > 0.0))
      throw InputError("nelson_aalen: weights must be > 0");
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return times[a] < times[b]; });

  // total risk weight, peeled off as observations leave the risk set
  double at_risk = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    at_risk += weights.empty() ? 1.0 : weights[i];

  HazardTable table;
  double cum = 0.0;
  std::size_t i = 0;
  while (i < n) {
    double t = times[order[i]];
    double d = 0.0, leaving = 0.0;
    std::size_t j = i;
    for (; j < n && times[order[j]] == t; ++j) {
      d += events[order[j]];
      leaving += weights.empty() ? 1.0 : weights[order[j]];
    }
    if (d > 0.0) {
      cum += d / at_risk;
      table.times.push_back(t);
      table.cumhaz.push_back(cum);
    }
    at_risk -= leaving;
    i = j;
  }
  return table;
}

std::vector<std::vector<KmPoint>> kaplan_meier(
    const std::vector<double>& times, const std::vector<double>& events,
    const std::vector<int>& group, int n_groups) {
  std::size_t n = times.size();
  if (events.size() != n || group.size() != n)
    throw InputError("kaplan_meier: inconsistent input lengths");
  if (n_groups < 1) throw InputError("kaplan_meier: need at least one group");

  std::vector<std::vector<KmPoint>> curves(
      static_cast<std::size_t>(n_groups));
  for (int g = 0; g < n_groups; ++g) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < n; ++i)
      if (group[i] == g) members.push_back(i);
    if (members.empty())
      throw InputError("kaplan_meier: empty group " + std::to_string(g));
    std::sort(members.begin(), members.end(), [&](std::size_t a, std::size_t b) {
      return times[a] < times[b];
    });

    auto& curve = curves[static_cast<std::size_t>(g)];
    curve.push_back({0.0, 1.0});
    double s = 1.0;
    double at_risk = static_cast<double>(members.size());
    std::size_t i = 0;
    while (i < members.size()) {
      double t = times[members[i]];
      double d = 0.0, leaving = 0.0;
      std::size_t j = i;
      for (; j < members.size() && times[members[j]] == t; ++j) {
        d += events[members[j]];
        leaving += 1.0;
      }
      if (d > 0.0) {
        s *= 1.0 - d / at_risk;
        curve.push_back({t, s});
      }
      at_risk -= leaving;
      i = j;
    }
  }
  return curves;
}

PoissonTreatmentFit poisson_treatment_fit(const std::vector<double>& delta,
                                          const std::vector<double>& cumhaz,
                                          const std::vector<int>& z,
                                          int n_levels) {
  std::size_t n = delta.size();
  if (cumhaz.size() != n || z.size() != n)
    throw InputError("poisson_treatment_fit: inconsistent input lengths");
  if (n_levels < 1) throw InputError("poisson_treatment_fit: no levels");

  PoissonTreatmentFit fit;
  auto nl = static_cast<std::size_t>(n_levels);
  fit.beta.assign(nl, std::numeric_limits<double>::quiet_NaN());
  fit.unbounded.assign(nl, 0);
  fit.present.assign(nl, 0);
  fit.residual.assign(n, 0.0);

  std::vector<std::size_t> act;  // rows with positive hazard
  std::vector<double> lev_events(nl, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (cumhaz[i] > 0.0) {
      act.push_back(i);
      fit.present[static_cast<std::size_t>(z[i])] = 1;
      lev_events[static_cast<std::size_t>(z[i])] += delta[i];
    } else if (delta[i] != 0.0) {
      throw InputError(
          "poisson_treatment_fit: event recorded at zero cumulative hazard");
    }
  }
  if (act.empty()) return fit;  // nothing to estimate; all levels absent

  // compact the present levels; reference = lowest present level
  std::vector<int> lmap(nl, -1);
  int L = 0;
  for (std::size_t l = 0; l < nl; ++l)
    if (fit.present[l]) {
      if (fit.reference < 0) fit.reference = static_cast<int>(l);
      lmap[l] = L++;
    }

  std::size_t p = static_cast<std::size_t>(L);
  std::vector<double> X(act.size() * p, 0.0), ev(act.size()), off(act.size());
  for (std::size_t a = 0; a < act.size(); ++a) {
    std::size_t i = act[a];
    X[a * p] = 1.0;
    int li = lmap[static_cast<std::size_t>(z[i])];
    if (li > 0) X[a * p + static_cast<std::size_t>(li)] = 1.0;
    ev[a] = delta[i];
    off[a] = std::log(cumhaz[i]);
  }
  GlmFit glm = poisson_loglinear(X, act.size(), p, ev, off);
  fit.converged = glm.converged;
  fit.intercept = glm.coef[0];
  for (std::size_t l = 0; l < nl; ++l) {
    if (!fit.present[l]) continue;
    int li = lmap[l];
    fit.beta[l] = li == 0 ? 0.0 : glm.coef[static_cast<std::size_t>(li)];
    if (lev_events[l] <= 0.0) fit.unbounded[l] = 1;
  }

  double ll_sat = 0.0;
  for (std::size_t a = 0; a < act.size(); ++a) {
    fit.residual[act[a]] = ev[a] - glm.mu[a];
    if (ev[a] > 0.0) ll_sat += ev[a] * std::log(ev[a]) - ev[a];
  }
  fit.deviance = 2.0 * (ll_sat - glm.loglik);
  return fit;
}

}  // namespace subtree
