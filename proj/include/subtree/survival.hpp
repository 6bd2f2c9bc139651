#pragma once

#include <vector>

#include "subtree/common.hpp"
#include "subtree/stats.hpp"

namespace subtree {

// Baseline cumulative hazard as a right-continuous step function.
struct HazardTable {
  std::vector<double> times;   // strictly increasing event times
  std::vector<double> cumhaz;  // nondecreasing, one entry per time

  bool any_events() const { return !times.empty(); }
  // Lambda0(t): the accumulated hazard at the largest event time <= t,
  // zero before the first event.
  double eval(double t) const;
};

// Nelson-Aalen estimator of the baseline cumulative hazard; with per-row
// risk weights w_i = exp(eta_i) this is the Breslow form. At each distinct
// event time the increment is (number of events) / (weighted size of the
// risk set), a row being at risk at its own observed time. No events at all
// produce an empty table (any_events() == false) for the caller to handle.
HazardTable nelson_aalen(const std::vector<double>& times,
                         const std::vector<double>& events,
                         const std::vector<double>& weights = {});

struct KmPoint {
  double time = 0.0;
  double survival = 1.0;
};

// Product-limit survival curves, one per group code in [0, n_groups). Each
// curve starts at (0, 1) and steps at that group's distinct event times.
// Empty groups throw InputError.
std::vector<std::vector<KmPoint>> kaplan_meier(
    const std::vector<double>& times, const std::vector<double>& events,
    const std::vector<int>& group, int n_groups);

// Poisson regression of event indicators on treatment dummies with offset
// log Lambda0(y_i): log mu_i = log cumhaz_i + b0 + b_z. Levels are dataset
// treatment codes in [0, n_levels); the reference is the lowest level with a
// positive-hazard row. Rows with cumhaz <= 0 are inert (their delta is
// necessarily 0 under the model) and are excluded from the fit; their
// residual is 0.
struct PoissonTreatmentFit {
  std::vector<double> beta;      // per level; 0 at reference, NaN when absent
  std::vector<char> unbounded;   // level has rows but zero events
  std::vector<char> present;     // level has at least one active row
  int reference = -1;
  double intercept = 0.0;        // log baseline rate of the reference level
  std::vector<double> residual;  // delta - mu, aligned with the inputs
  double deviance = 0.0;         // vs. the per-observation saturated model
  bool converged = false;
};

PoissonTreatmentFit poisson_treatment_fit(const std::vector<double>& delta,
                                          const std::vector<double>& cumhaz,
                                          const std::vector<int>& z,
                                          int n_levels);

}  // namespace subtree
