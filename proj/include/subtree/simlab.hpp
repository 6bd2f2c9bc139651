#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "subtree/dataset.hpp"
#include "subtree/tree.hpp"

namespace subtree {

// ---- generators ---------------------------------------------------------------

// Simulation models.
//   BiasNull        two independent predictors, response and treatment both
//                   Bernoulli(0.5) and independent of everything: the null
//                   design for measuring split-selection bias.
//   M1, M2, M3      binary-response genetic-marker designs with 100 trinomial
//                   predictors; x1/x2 carry the structure (predictive in M1
//                   and M2, prognostic in M3), x3/x4 are prognostic in M2.
//   PredictiveDemo  y = 1.9 + 0.2*I(z=1) - 1.8*I(x1>0) + 3.6*I(x1>0, z=1) + e
//   PrognosticDemo  y = 2*I(z=1) + I(x1>0) + e
enum class SimModel { BiasNull, M1, M2, M3, PredictiveDemo, PrognosticDemo };

// Predictor distributions available to BiasNull.
enum class BiasDist { Cont, Ord4, Cat3, Cat7 };

SimModel sim_model_from_string(const std::string& s);
std::string sim_model_to_string(SimModel m);
BiasDist bias_dist_from_string(const std::string& s);
std::string bias_dist_to_string(BiasDist d);

struct GeneratorSpec {
  SimModel model = SimModel::M1;
  BiasDist dist1 = BiasDist::Cont;  // BiasNull: distribution of x1
  BiasDist dist2 = BiasDist::Ord4;  // BiasNull: distribution of x2
  int n = 100;                      // rows; ignored when factorial_r > 0
  // When > 0 (M1/M2/M3 only): deterministic r-replicate 3^4 factorial design
  // in x1..x4 (each combination appears exactly factorial_r times); only the
  // treatment assignment and the response are random.
  int factorial_r = 0;
  std::uint64_t seed = 0;
};

// What a generator run promises about its own distribution: the model that
// produced the data and the exact marginal P(X = code) per predictor (only
// for the all-categorical designs, where subgroup probabilities factorize).
struct GeneratorInfo {
  SimModel model = SimModel::M1;
  bool factorial = false;
  std::map<std::string, std::vector<double>> marginals;
};

struct Generated {
  Dataset ds;
  GeneratorInfo info;
};

// Draws one dataset. Treatment is Bernoulli(0.5) everywhere; responses follow
// the model formulas exactly. M1-M3 emit 100 categorical predictors: x1 and
// x2 with P = (0.4, 0.465, 0.135), x3..x100 with P(X=0) = (1-pi)^2,
// P(X=1) = 2 pi (1-pi), P(X=2) = pi^2 where pi ~ Beta(2,3) per predictor per
// call (the realized marginals are recorded in info). Throws InputError on an
// invalid spec (n < 1, factorial with a non-marker model, ...).
Generated generate(const GeneratorSpec& spec);

// True success probability P(y=1 | x = row of ds, z) under an M1/M2/M3
// generator; reads the x1..x4 level codes from ds. Throws InputError for
// other models.
double true_response_probability(SimModel model, const Dataset& ds,
                                 std::size_t row, int z);

// ---- reference subgroups and accuracy -----------------------------------------

struct SubgroupCondition {
  std::string variable;
  std::vector<int> allowed_codes;  // level codes the condition accepts
};

// Conjunction of level-set conditions plus its probability under the
// generator's marginals. No conditions = the whole space.
struct SubgroupSpec {
  std::vector<SubgroupCondition> conditions;
  double prob = 1.0;
};

// The maximal-probability subgroup with the largest effect size:
// M1/M2 -> {x1 != 0 and x2 != 0} with probability 0.36; M3 -> the whole
// space. Throws InputError for models without a defined reference subgroup.
SubgroupSpec true_subgroup(SimModel model);

// Accuracy of the tree's selected subgroup against the generator's reference
// subgroup. The selected subgroup is the terminal node maximizing the
// estimated effect size (leaves with an undefined estimate are skipped; ties
// within 1e-9 relative are unioned); a trivial tree selects the whole space.
// Returns P(selected)/P(reference) when the selected subgroup is contained in
// the reference one and 0 otherwise; containment and probabilities are exact
// over the finite lattice of the variables referenced by the selected leaves
// and the reference subgroup. Requires categorical split variables with
// recorded marginals.
double subgroup_accuracy(const TreeModel& tree, const GeneratorInfo& info);

// ---- experiment drivers --------------------------------------------------------

struct ExperimentConfig {
  Method method = Method::Gi;
  SimModel model = SimModel::M1;  // accuracy and coverage runs
  int n = 100;
  // bias/accuracy: Monte-Carlo iterations; coverage: the number of
  // nontrivial-tree trials to collect.
  int iterations = 500;
  int factorial_r = 2;          // coverage design replicates
  int bootstrap_replicates = 100;  // coverage: J
  // accuracy and coverage runs: tree-growing policy (bias pins its own
  // shallow config).
  GateKind gate = GateKind::Sidak;
  PruneKind prune = PruneKind::None;
  int max_depth = 4;
  std::uint64_t seed = 0;
  int threads = 1;
};

// Deterministic experiment outcome: csv and text depend only on the config
// (identical config + seed -> byte-identical strings); the measured wall time
// is reported separately so callers may print it without breaking that.
struct ExperimentReport {
  std::string name;  // "bias" | "accuracy" | "coverage"
  std::string csv;
  std::string text;
  int failures = 0;
  double wall_seconds = 0.0;
};

// Selection-bias study: for each of the four canonical distribution pairs
// (Cont,Ord4), (Cont,Cat3), (Cont,Cat7), (Ord4,Cat3), draws `iterations` null
// datasets of size n and records how often the configured method ranks x1
// highest at the root (gate disabled). An unbiased method scores 0.5 per
// pair; the csv carries one row per pair with a binomial standard error.
ExperimentReport run_bias_experiment(const ExperimentConfig& config);

// Subgroup-identification study on model M1, M2, or M3 at sample size n:
// grows a tree per iteration under the configured gate/prune/depth policy
// and reports mean accuracy, the fraction of nontrivial trees, and how often
// x1/x2 are chosen at the first and second split levels.
ExperimentReport run_accuracy_experiment(const ExperimentConfig& config);

// Interval-calibration study on the r-replicate 3^4 factorial: collects
// `iterations` nontrivial trees, and per trial records node-averaged bias of
// the naive estimates and the coverage of naive and bootstrap 95% intervals
// for mu(t,0), mu(t,1), and d(t) against the generator truth. Attempts are
// capped at 20x the target; shortfalls show up in the reported counts.
ExperimentReport run_coverage_experiment(const ExperimentConfig& config);

// Parses the flat key-value config format (one "key value" or "key=value"
// pair per line, '#' comments): keys experiment, method, model, n,
// iterations, r, J, seed, threads, gate, prune, max_depth. Returns the
// experiment name through `experiment`. Throws InputError on unknown keys or
// bad values.
ExperimentConfig load_experiment_config(const std::filesystem::path& path,
                                        std::string& experiment);

}  // namespace subtree
