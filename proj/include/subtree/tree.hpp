#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "subtree/dataset.hpp"
#include "subtree/splitcore.hpp"
#include "subtree/survival.hpp"

namespace subtree {

enum class Method { Gc, Gs, Gi };
enum class GateKind { Off, Fixed, Sidak };
enum class PruneKind { None, CostComplexityCV };

Method method_from_string(const std::string& s);
std::string to_string(Method m);

struct GrowConfig {
  Method method = Method::Gs;
  bool censored = false;
  int max_depth = 4;
  int min_node_size = 0;    // 0 resolves to max(10, n/100)
  int min_level_count = 2;  // per present treatment level per child
  // Selection gate: a node splits only when the top score clears the
  // (1 - gate_alpha) quantile of chi-squared(1); Sidak raises the quantile to
  // (1 - gate_alpha)^(1/M) for M scored predictors. Off defers entirely to
  // pruning / depth / size limits.
  GateKind gate = GateKind::Fixed;
  double gate_alpha = 0.05;
  PruneKind prune = PruneKind::None;
  int cv_folds = 10;
  // SE rule: the smallest tree within factor*SE of the CV-minimum error. The
  // default 0 picks the CV-minimum tree itself (ties still favor smaller
  // trees); positive factors prune noticeably harder on weak-effect data.
  double cv_se_factor = 0.0;
  std::uint64_t seed = 0;
  int ph_iterations = 5;  // censored: baseline-hazard refinement passes
  int threads = 1;        // consumed by callers that fit many trees
};

// Per-node treatment-level estimates. Uncensored fits fill mean/sd; censored
// fits fill intercept/beta/events against the shared baseline hazard.
struct NodeEstimates {
  std::vector<int> count;        // rows per treatment level
  std::vector<double> mean;      // uncensored; NaN when the level is absent
  std::vector<double> sd;        // sample SD; NaN when count < 2
  std::vector<double> beta;      // censored; 0 at reference, NaN when absent
  std::vector<char> unbounded;   // censored: level present but event-free
  std::vector<double> events;    // censored: events per level
  double intercept = 0.0;        // censored: log rate of the reference level
  double d = 0.0;                // mean(z=1) - mean(z=0); NaN if undefined
  double r_hat = 0.0;            // binary y: max pairwise |p_i - p_j|
  bool effect_defined = false;   // both arms present with enough data
};

struct Node {
  int id = 1;  // level-order: root 1, children 2t and 2t+1
  // Training row indices; kept on fitted trees, empty after deserialization
  // (n_rows preserves the size either way).
  std::vector<int> rows;
  int n_rows = 0;
  std::optional<SplitRule> split;
  std::unique_ptr<Node> left, right;
  NodeEstimates est;

  bool is_leaf() const { return !split.has_value(); }
  int n() const { return n_rows; }
};

struct ColumnSchema {
  std::string name;
  Role role = Role::Excluded;
  std::vector<std::string> levels;
};

// Selection record for one node where variable scoring ran; importance
// scoring sums q over the nodes that remain split in the final tree.
struct TraceEntry {
  int node_id = 0;
  int n = 0;
  std::vector<std::pair<int, double>> scores;  // (column index, q)
};

struct TreeModel {
  GrowConfig config;  // with min_node_size resolved
  std::unique_ptr<Node> root;
  std::vector<std::string> treatment_levels;
  std::string response_name, treatment_name, event_name;
  std::vector<ColumnSchema> schema;  // by training column index
  HazardTable baseline;              // censored fits only
  std::vector<std::vector<double>> root_beta_trace;  // per iteration
  std::vector<TraceEntry> trace;

  bool trivial() const { return !root || root->is_leaf(); }
};

// Grows a tree by recursive variable selection + split-point search until the
// gate, depth, or size rules stop it; censored configs run ph_iterations
// passes of baseline-hazard estimation and tree regrowth sharing one
// baseline. Role/method mismatches throw InputError; a censored fit with no
// events throws NumericalError.
TreeModel grow(const Dataset& ds, const GrowConfig& config);

// Column-name/level mapping from a model onto a (possibly different) dataset
// so rules can route rows whose level codes differ from training.
struct RoutingMap {
  std::vector<int> column;              // model column index -> ds column
  std::vector<std::vector<int>> level;  // model code -> ds code (-1: missing)
};

RoutingMap make_routing(const TreeModel& model, const Dataset& ds);
const Node* predict_leaf(const TreeModel& model, const RoutingMap& map,
                         const Dataset& ds, std::size_t row);
// Convenience for the training dataset (identity mapping).
const Node* predict_leaf(const TreeModel& model, const Dataset& ds,
                         std::size_t row);

// Leaves in id order.
std::vector<const Node*> collect_leaves(const TreeModel& model);
// Internal (split) nodes in id order.
std::vector<const Node*> collect_internal(const TreeModel& model);

// Versioned JSON round trip; the row lists are not serialized, everything
// else (structure, rules, estimates, baseline, traces) is lossless.
std::string serialize(const TreeModel& model);
TreeModel deserialize(const std::string& text);
void save_model(const TreeModel& model, const std::string& path);
TreeModel load_model(const std::string& path);

// Indented printout; a case goes to the left child iff the stated condition
// holds. Trivial trees report "no subgroups found".
std::string text_report(const TreeModel& model);

}  // namespace subtree
