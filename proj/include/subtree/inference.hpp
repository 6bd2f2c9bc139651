#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "subtree/dataset.hpp"
#include "subtree/tree.hpp"

namespace subtree {

struct ArmInterval {
  double estimate = std::numeric_limits<double>::quiet_NaN();
  double lo = std::numeric_limits<double>::quiet_NaN();
  double hi = std::numeric_limits<double>::quiet_NaN();
  // Spread backing the interval: bootstrap SD of the replicate summaries, or
  // the plug-in standard error for naive intervals.
  double sd = std::numeric_limits<double>::quiet_NaN();
  int support = 0;  // bootstrap replicates contributing (0 for naive)
  bool defined = false;
};

struct LeafIntervals {
  int node_id = 0;
  int n = 0;
  std::vector<ArmInterval> mu;  // per treatment level (uncensored fits)
  ArmInterval d;                // mu(level 1) - mu(level 0), two-arm fits
  std::vector<ArmInterval> beta;  // per level vs. the leaf reference (censored)
};

struct BootstrapResult {
  std::vector<LeafIntervals> leaves;  // leaf order of collect_leaves
  int replicates = 0;
};

// Bootstrap confidence intervals for the per-leaf treatment summaries of a
// fitted tree. Each replicate resamples the training rows with replacement,
// refits a tree with the model's own configuration, and summarizes it on the
// original data: for every original leaf, the replicate estimate of each
// quantity is averaged over the leaf's original rows (row r contributing the
// estimate of the replicate leaf r routes to). Rows whose replicate leaf has
// no defined estimate drop out of numerator and denominator; a replicate
// contributing nothing is skipped for that target. Intervals are
//   estimate +/- 2 * SD(replicate summaries).
// Censored fits summarize log rate ratios re-expressed against the original
// leaf's reference level. Results are identical for any thread count; the
// per-replicate RNG stream depends only on (seed, replicate index). Fewer
// than 10 requested replicates is an InputError; a target left with fewer
// than 10 usable replicates is a NumericalError. The model must carry its
// training row assignments (a freshly grown model, not a deserialized one).
BootstrapResult bootstrap_intervals(const Dataset& ds, const TreeModel& model,
                                    int replicates, std::uint64_t seed,
                                    int threads);

// Plug-in intervals from the leaf estimates alone (uncensored fits only):
//   mu(t,z): mean +/- 2 * sd / sqrt(k);
//   d(t):    Welch two-sample t interval at level 0.95.
// Arms need at least two observations; undefined entries are flagged.
std::vector<LeafIntervals> naive_intervals(const TreeModel& model);

struct ImportanceEntry {
  int column = -1;
  std::string variable;
  double score = 0.0;
  bool flagged = false;
};

// Importance of predictor X: sum of n_t * q_t(X) over the nodes of the final
// tree where a split was made (the root's selection scores alone when the
// tree is trivial). The threshold scales a chi-squared quantile by matching
// first and second moments of sum n_t * chi2_1:
//   c = sum n_t^2 / sum n_t,  dof = (sum n_t)^2 / sum n_t^2,
//   threshold = c * chi2_quantile(0.95, dof).
struct ImportanceResult {
  std::vector<ImportanceEntry> entries;  // score descending, ties by column
  double threshold = std::numeric_limits<double>::quiet_NaN();
  double c = std::numeric_limits<double>::quiet_NaN();
  double dof = std::numeric_limits<double>::quiet_NaN();
  bool usable = false;  // false when no selection scores were recorded
};

ImportanceResult importance_scores(const TreeModel& model);

}  // namespace subtree
