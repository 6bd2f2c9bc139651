#pragma once

#include <optional>
#include <string>
#include <vector>

#include "subtree/dataset.hpp"
#include "subtree/stats.hpp"

namespace subtree {

// ---- split rules ------------------------------------------------------------

enum class SplitKind { OrdinalThreshold, CategoricalSubset };

// A binary routing rule attached to an internal tree node. Missing values
// (and, at prediction time, unseen categorical levels) always follow
// missing_goes_left, which is resolved when the rule is created: chosen by
// the split criterion when the training node contains missing values, and
// pointing at the larger child (ties left) otherwise.
struct SplitRule {
  int column = -1;        // dataset column index at training time
  std::string variable;   // column name, for reports and serialization
  SplitKind kind = SplitKind::OrdinalThreshold;
  double threshold = 0.0;        // ordinal: route left iff x <= threshold
  bool missing_goes_left = false;
  std::vector<int> left_levels;  // categorical: dataset level codes, sorted

  // Routing against the training dataset (same level coding).
  bool routes_left(const Dataset& ds, std::size_t row) const;
};

// ---- split-variable selection ------------------------------------------------

struct VariableScore {
  int column = -1;
  std::string variable;
  double q = 0.0;
  std::vector<double> r_z;  // per-treatment-level components (Gs only)
};

// Gs selection: per treatment level z, a contingency table of residual sign
// (strictly positive vs. not) against the node-level grouping of X over the
// rows with Z = z gives a chi-squared value W_z with df nu_z, mapped to
// r_z = wilson_hilferty(W_z, nu_z, 1); q(X) = wilson_hilferty(sum r_z, L, 1)
// with L the number of treatment levels present in the node. Degenerate
// tables contribute r_z = 0 and still count toward L. residual is aligned
// with rows; uncensored callers pass treatment-means residuals, censored
// callers pass Poisson residuals. Constant predictors are excluded; the
// result is sorted by q descending, ties kept in dataset column order.
std::vector<VariableScore> gs_select(const Dataset& ds,
                                     const std::vector<int>& rows,
                                     const std::vector<double>& residual);

// Gi selection (uncensored): q(X) is the additive-vs-saturated lack-of-fit
// score of E[Y] = b0 + sum b_k I(Z=k) + sum g_j I(H=j) where H is the
// node-level grouping of X.
std::vector<VariableScore> gi_select(const Dataset& ds,
                                     const std::vector<int>& rows);

// Gi selection (censored): the same lack-of-fit comparison for the additive
// log-linear Poisson model of the event indicators with offset log Lambda0,
// tested against the saturated Z x H cell-rates model by deviance difference
// on df = (#populated cells) - rank(additive design); the p-value is mapped
// to the 1-df chi-squared scale. Rows with cumhaz <= 0 are inert and are
// left out of the fits. delta and cumhaz are aligned with rows.
std::vector<VariableScore> gi_select_censored(const Dataset& ds,
                                              const std::vector<int>& rows,
                                              const std::vector<double>& delta,
                                              const std::vector<double>& cumhaz);

// Gc class variable: V = (Y + Z) mod 2, zero iff Y == Z. Inputs must be
// binary (0/1); anything else throws InputError.
std::vector<int> gc_class_variable(const std::vector<double>& y,
                                   const std::vector<int>& z);

// Gc selection: one chi-squared of V against the node-level grouping of X
// over all node rows; q = wilson_hilferty(W, nu, 1).
std::vector<VariableScore> gc_select(const Dataset& ds,
                                     const std::vector<int>& rows,
                                     const std::vector<int>& v);

// ---- split-point search --------------------------------------------------

enum class SplitCriterion {
  TreatmentMeansSSE,  // summed child SSE of per-treatment-means fits
  PoissonDeviance,    // summed child deviance of per-treatment rate fits
  GiniClass,          // summed child Gini impurity of the class labels
};

// Node context for find_split_point. All per-row vectors are aligned with
// the node's rows vector. y/z feed TreatmentMeansSSE, delta/cumhaz feed
// PoissonDeviance, cls feeds GiniClass and the ordered-category shortcut;
// unused vectors may be left empty. z is always required for the
// per-treatment-level child-size constraint (levels present in the node need
// min_level_count rows in each child; each child needs min_node_size rows).
struct SplitContext {
  SplitCriterion criterion = SplitCriterion::TreatmentMeansSSE;
  std::vector<double> y;
  std::vector<int> z;
  int n_treatment_levels = 0;
  std::vector<double> delta;
  std::vector<double> cumhaz;
  std::vector<int> cls;  // binary class labels (residual sign or V)
  int min_node_size = 1;
  int min_level_count = 0;
  bool forbid_pure_children = false;  // Gc: no child may be pure in cls
};

// The categorical left-set candidates find_split_point evaluates for this
// column at this node, as sets of dataset level codes (-1 stands for the
// missing-value level). With g observed levels: g < 10 enumerates all
// 2^(g-1) - 1 subsets holding the first level on the right; g >= 10 orders
// levels by their proportion of cls == 1 rows and returns the g - 1 ordered
// prefixes. cls may be empty only when g < 10.
std::vector<std::vector<int>> categorical_candidates(
    const Dataset& ds, const std::vector<int>& rows, int column,
    const std::vector<int>& cls);

// Best admissible split of `column` at this node, or nullopt when none
// exists. Ordinal candidates are the midpoints of consecutive distinct
// observed values; when the node contains missing values each candidate is
// scored with the missing rows sent left and sent right. Candidates are
// compared by the context criterion (smaller is better); ties keep the
// earliest candidate in scan order (missing-left variants first, thresholds
// ascending; categorical candidates in categorical_candidates order).
std::optional<SplitRule> find_split_point(const Dataset& ds,
                                          const std::vector<int>& rows,
                                          int column, const SplitContext& ctx);

}  // namespace subtree
