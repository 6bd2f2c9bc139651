#include "subtree/simlab.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "subtree/common.hpp"
#include "subtree/inference.hpp"

namespace subtree {

namespace {

std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

// %.6g with NA for non-finite cells, so reports are deterministic and diffable.
std::string fmt(double v) {
  if (!std::isfinite(v)) return "NA";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

}  // namespace

SimModel sim_model_from_string(const std::string& s) {
  std::string k = lower(s);
  if (k == "bias-null" || k == "biasnull") return SimModel::BiasNull;
  if (k == "m1") return SimModel::M1;
  if (k == "m2") return SimModel::M2;
  if (k == "m3") return SimModel::M3;
  if (k == "predictive-demo") return SimModel::PredictiveDemo;
  if (k == "prognostic-demo") return SimModel::PrognosticDemo;
  throw InputError("unknown simulation model '" + s + "'");
}

std::string sim_model_to_string(SimModel m) {
  switch (m) {
    case SimModel::BiasNull: return "bias-null";
    case SimModel::M1: return "m1";
    case SimModel::M2: return "m2";
    case SimModel::M3: return "m3";
    case SimModel::PredictiveDemo: return "predictive-demo";
    case SimModel::PrognosticDemo: return "prognostic-demo";
  }
  return "?";
}

BiasDist bias_dist_from_string(const std::string& s) {
  std::string k = lower(s);
  if (k == "cont") return BiasDist::Cont;
  if (k == "ord4") return BiasDist::Ord4;
  if (k == "cat3") return BiasDist::Cat3;
  if (k == "cat7") return BiasDist::Cat7;
  throw InputError("unknown predictor distribution '" + s + "'");
}

std::string bias_dist_to_string(BiasDist d) {
  switch (d) {
    case BiasDist::Cont: return "Cont";
    case BiasDist::Ord4: return "Ord4";
    case BiasDist::Cat3: return "Cat3";
    case BiasDist::Cat7: return "Cat7";
  }
  return "?";
}

// ---- dataset assembly ----------------------------------------------------------

namespace {

Column numeric_column(std::string name, Role role, std::vector<double> values) {
  Column c;
  c.name = std::move(name);
  c.role = role;
  c.miss.assign(values.size(), 0);
  c.num = std::move(values);
  return c;
}

Column coded_column(std::string name, Role role, std::vector<int> codes,
                    int n_levels) {
  Column c;
  c.name = std::move(name);
  c.role = role;
  c.miss.assign(codes.size(), 0);
  c.code = std::move(codes);
  c.levels.reserve(static_cast<std::size_t>(n_levels));
  for (int l = 0; l < n_levels; ++l) c.levels.push_back(std::to_string(l));
  return c;
}

Dataset assemble(std::vector<Column> cols, std::size_t n) {
  Dataset ds;
  ds.cols = std::move(cols);
  ds.n = n;
  for (int i = 0; i < static_cast<int>(ds.cols.size()); ++i) {
    switch (ds.cols[static_cast<std::size_t>(i)].role) {
      case Role::Response: ds.response = i; break;
      case Role::Treatment: ds.treatment = i; break;
      case Role::Event: ds.event = i; break;
      case Role::Ordinal:
      case Role::Categorical: ds.predictors.push_back(i); break;
      case Role::Excluded: break;
    }
  }
  return ds;
}

int trinomial_code(double u, const std::vector<double>& p) {
  if (u < p[0]) return 0;
  if (u < p[0] + p[1]) return 1;
  return 2;
}

// The fixed marginal distribution of x1 and x2 in the marker models.
const std::vector<double> kMarkerP = {0.4, 0.465, 0.135};

double marker_probability(SimModel model, int x1, int x2, int x3, int x4,
                          int z) {
  double s1 = x1 != 0 ? 1.0 : 0.0;
  double s2 = x2 != 0 ? 1.0 : 0.0;
  switch (model) {
    case SimModel::M1:
      return 0.4 + 0.05 * (z == 1 ? 1.0 : 0.0) *
                       (4.0 * s1 + 3.0 * s2 + s1 * s2);
    case SimModel::M2:
      return 0.3 + 0.2 * ((2.0 * (z == 1 ? 1.0 : 0.0) - 1.0) * s1 * s2 +
                          (x3 != 0 ? 1.0 : 0.0) + (x4 != 0 ? 1.0 : 0.0));
    case SimModel::M3:
      return 0.5 +
             0.1 * (2.0 * ((z == 1 ? 1.0 : 0.0) + s1 + s2) - 3.0);
    default:
      throw InputError("response probabilities are defined for m1/m2/m3 only");
  }
}

Generated generate_bias_null(const GeneratorSpec& spec) {
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  std::size_t n = static_cast<std::size_t>(spec.n);
  std::vector<double> y(n);
  std::vector<int> z(n);
  std::array<BiasDist, 2> dist = {spec.dist1, spec.dist2};
  std::array<std::vector<double>, 2> xnum;
  std::array<std::vector<int>, 2> xcode;
  for (int j = 0; j < 2; ++j) {
    if (dist[static_cast<std::size_t>(j)] == BiasDist::Cont ||
        dist[static_cast<std::size_t>(j)] == BiasDist::Ord4)
      xnum[static_cast<std::size_t>(j)].resize(n);
    else
      xcode[static_cast<std::size_t>(j)].resize(n);
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < 2; ++j) {
      switch (dist[j]) {
        case BiasDist::Cont: xnum[j][i] = gauss(rng); break;
        case BiasDist::Ord4:
          xnum[j][i] = 1.0 + std::floor(unif(rng) * 4.0);
          if (xnum[j][i] > 4.0) xnum[j][i] = 4.0;
          break;
        case BiasDist::Cat3:
          xcode[j][i] = std::min(2, static_cast<int>(unif(rng) * 3.0));
          break;
        case BiasDist::Cat7:
          xcode[j][i] = std::min(6, static_cast<int>(unif(rng) * 7.0));
          break;
      }
    }
    y[i] = unif(rng) < 0.5 ? 0.0 : 1.0;
    z[i] = unif(rng) < 0.5 ? 0 : 1;
  }

  std::vector<Column> cols;
  cols.push_back(numeric_column("y", Role::Response, std::move(y)));
  cols.push_back(coded_column("z", Role::Treatment, std::move(z), 2));
  for (std::size_t j = 0; j < 2; ++j) {
    std::string name = j == 0 ? "x1" : "x2";
    switch (dist[j]) {
      case BiasDist::Cont:
      case BiasDist::Ord4:
        cols.push_back(
            numeric_column(name, Role::Ordinal, std::move(xnum[j])));
        break;
      case BiasDist::Cat3:
        cols.push_back(
            coded_column(name, Role::Categorical, std::move(xcode[j]), 3));
        break;
      case BiasDist::Cat7:
        cols.push_back(
            coded_column(name, Role::Categorical, std::move(xcode[j]), 7));
        break;
    }
  }
  Generated g{assemble(std::move(cols), n), {}};
  g.info.model = SimModel::BiasNull;
  return g;
}

Generated generate_markers(const GeneratorSpec& spec) {
  const int kPredictors = 100;
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::gamma_distribution<double> gamma2(2.0, 1.0);
  std::gamma_distribution<double> gamma3(3.0, 1.0);

  // Per-predictor marginals: x1/x2 fixed, x3..x100 from pi ~ Beta(2,3).
  std::vector<std::vector<double>> marg(kPredictors);
  marg[0] = kMarkerP;
  marg[1] = kMarkerP;
  for (int j = 2; j < kPredictors; ++j) {
    double g1 = gamma2(rng), g2 = gamma3(rng);
    double pi = g1 / (g1 + g2);
    marg[static_cast<std::size_t>(j)] = {(1.0 - pi) * (1.0 - pi),
                                         2.0 * pi * (1.0 - pi), pi * pi};
  }

  std::size_t n = static_cast<std::size_t>(spec.n);
  std::vector<double> y(n);
  std::vector<int> z(n);
  std::vector<std::vector<int>> x(kPredictors, std::vector<int>(n));
  for (std::size_t i = 0; i < n; ++i) {
    z[i] = unif(rng) < 0.5 ? 0 : 1;
    for (int j = 0; j < kPredictors; ++j)
      x[static_cast<std::size_t>(j)][i] =
          trinomial_code(unif(rng), marg[static_cast<std::size_t>(j)]);
    double p = marker_probability(spec.model, x[0][i], x[1][i], x[2][i],
                                  x[3][i], z[i]);
    y[i] = unif(rng) < p ? 1.0 : 0.0;
  }

  std::vector<Column> cols;
  cols.push_back(numeric_column("y", Role::Response, std::move(y)));
  cols.push_back(coded_column("z", Role::Treatment, std::move(z), 2));
  Generated g;
  g.info.model = spec.model;
  for (int j = 0; j < kPredictors; ++j) {
    std::string name = "x" + std::to_string(j + 1);
    g.info.marginals[name] = marg[static_cast<std::size_t>(j)];
    cols.push_back(coded_column(name, Role::Categorical,
                                std::move(x[static_cast<std::size_t>(j)]), 3));
  }
  g.ds = assemble(std::move(cols), n);
  return g;
}

Generated generate_factorial(const GeneratorSpec& spec) {
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  std::size_t n = static_cast<std::size_t>(81 * spec.factorial_r);
  std::vector<double> y(n);
  std::vector<int> z(n);
  std::array<std::vector<int>, 4> x;
  for (auto& col : x) col.resize(n);

  std::size_t row = 0;
  for (int c1 = 0; c1 < 3; ++c1)
    for (int c2 = 0; c2 < 3; ++c2)
      for (int c3 = 0; c3 < 3; ++c3)
        for (int c4 = 0; c4 < 3; ++c4)
          for (int rep = 0; rep < spec.factorial_r; ++rep) {
            x[0][row] = c1;
            x[1][row] = c2;
            x[2][row] = c3;
            x[3][row] = c4;
            z[row] = unif(rng) < 0.5 ? 0 : 1;
            double p = marker_probability(spec.model, c1, c2, c3, c4, z[row]);
            y[row] = unif(rng) < p ? 1.0 : 0.0;
            ++row;
          }

  std::vector<Column> cols;
  cols.push_back(numeric_column("y", Role::Response, std::move(y)));
  cols.push_back(coded_column("z", Role::Treatment, std::move(z), 2));
  Generated g;
  g.info.model = spec.model;
  g.info.factorial = true;
  for (int j = 0; j < 4; ++j) {
    std::string name = "x" + std::to_string(j + 1);
    g.info.marginals[name] = {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
    cols.push_back(coded_column(name, Role::Categorical,
                                std::move(x[static_cast<std::size_t>(j)]), 3));
  }
  g.ds = assemble(std::move(cols), n);
  return g;
}

Generated generate_demo(const GeneratorSpec& spec) {
  const int kPredictors = 5;
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  std::size_t n = static_cast<std::size_t>(spec.n);
  std::vector<double> y(n);
  std::vector<int> z(n);
  std::vector<std::vector<double>> x(kPredictors, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i) {
    z[i] = unif(rng) < 0.5 ? 0 : 1;
    for (auto& col : x) col[i] = gauss(rng);
    double pos = x[0][i] > 0.0 ? 1.0 : 0.0;
    double eps = gauss(rng);
    if (spec.model == SimModel::PredictiveDemo)
      y[i] = 1.9 + 0.2 * z[i] - 1.8 * pos + 3.6 * pos * z[i] + eps;
    else
      y[i] = 2.0 * z[i] + pos + eps;
  }

  std::vector<Column> cols;
  cols.push_back(numeric_column("y", Role::Response, std::move(y)));
  cols.push_back(coded_column("z", Role::Treatment, std::move(z), 2));
  for (int j = 0; j < kPredictors; ++j)
    cols.push_back(numeric_column("x" + std::to_string(j + 1), Role::Ordinal,
                                  std::move(x[static_cast<std::size_t>(j)])));
  Generated g{assemble(std::move(cols), n), {}};
  g.info.model = spec.model;
  return g;
}

}  // namespace

Generated generate(const GeneratorSpec& spec) {
  bool marker = spec.model == SimModel::M1 || spec.model == SimModel::M2 ||
                spec.model == SimModel::M3;
  if (spec.factorial_r < 0)
    throw InputError("factorial replicate count must be >= 0");
  if (spec.factorial_r > 0 && !marker)
    throw InputError("the factorial design applies to models m1/m2/m3 only");
  if (spec.factorial_r == 0 && spec.n < 2)
    throw InputError("generator sample size must be at least 2");

  switch (spec.model) {
    case SimModel::BiasNull: return generate_bias_null(spec);
    case SimModel::M1:
    case SimModel::M2:
    case SimModel::M3:
      return spec.factorial_r > 0 ? generate_factorial(spec)
                                  : generate_markers(spec);
    case SimModel::PredictiveDemo:
    case SimModel::PrognosticDemo: return generate_demo(spec);
  }
  throw InputError("unknown simulation model");
}

double true_response_probability(SimModel model, const Dataset& ds,
                                 std::size_t row, int z) {
  auto code_of = [&](const char* name, bool required) {
    int c = ds.col_index(name);
    if (c < 0) {
      if (required) throw InputError(std::string("column ") + name +
                                     " is required to evaluate the model");
      return 0;
    }
    return ds.col(c).code[row];
  };
  bool need34 = model == SimModel::M2;
  int x1 = code_of("x1", true);
  int x2 = code_of("x2", true);
  int x3 = code_of("x3", need34);
  int x4 = code_of("x4", need34);
  return marker_probability(model, x1, x2, x3, x4, z);
}

SubgroupSpec true_subgroup(SimModel model) {
  SubgroupSpec s;
  switch (model) {
    case SimModel::M1:
    case SimModel::M2:
      s.conditions.push_back({"x1", {1, 2}});
      s.conditions.push_back({"x2", {1, 2}});
      s.prob = 0.36;
      return s;
    case SimModel::M3:
      s.prob = 1.0;
      return s;
    default:
      throw InputError(
          "no reference subgroup is defined for this simulation model");
  }
}

// ---- accuracy ------------------------------------------------------------------

namespace {

struct PathStep {
  const SplitRule* rule;
  bool went_left;
};

void collect_leaf_paths(const Node* node, std::vector<PathStep>& path,
                        std::vector<std::pair<const Node*, std::vector<PathStep>>>& out) {
  if (node->is_leaf()) {
    out.emplace_back(node, path);
    return;
  }
  path.push_back({&*node->split, true});
  collect_leaf_paths(node->left.get(), path, out);
  path.back().went_left = false;
  collect_leaf_paths(node->right.get(), path, out);
  path.pop_back();
}

}  // namespace

double subgroup_accuracy(const TreeModel& tree, const GeneratorInfo& info) {
  if (!tree.root) throw InputError("accuracy needs a fitted tree");
  SubgroupSpec star = true_subgroup(info.model);

  // Select the leaves with the maximal estimated effect size.
  std::vector<std::pair<const Node*, std::vector<PathStep>>> leaves;
  std::vector<PathStep> scratch;
  collect_leaf_paths(tree.root.get(), scratch, leaves);

  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    const NodeEstimates& est = leaves[i].first->est;
    if (est.effect_defined && std::isfinite(est.r_hat)) eligible.push_back(i);
  }

  bool whole_space = tree.trivial() || eligible.empty();
  std::vector<std::size_t> chosen;
  if (!whole_space) {
    double rmax = 0.0;
    for (std::size_t i : eligible)
      rmax = std::max(rmax, leaves[i].first->est.r_hat);
    double tol = 1e-9 * std::max(1.0, std::fabs(rmax));
    for (std::size_t i : eligible)
      if (leaves[i].first->est.r_hat >= rmax - tol) chosen.push_back(i);
  }

  if (whole_space) return star.conditions.empty() ? 1.0 : 0.0;

  // The chosen subgroup's indicator depends only on the variables along the
  // chosen paths; together with the reference variables they span a finite
  // lattice over which containment and probability are exact.
  std::vector<int> vars;
  auto add_var = [&](int col) {
    if (std::find(vars.begin(), vars.end(), col) == vars.end())
      vars.push_back(col);
  };
  for (std::size_t i : chosen)
    for (const PathStep& step : leaves[i].second) add_var(step.rule->column);
  for (const SubgroupCondition& c : star.conditions) {
    int col = -1;
    for (std::size_t j = 0; j < tree.schema.size(); ++j)
      if (tree.schema[j].name == c.variable) col = static_cast<int>(j);
    if (col < 0)
      throw InputError("reference variable " + c.variable +
                       " is absent from the fitted tree's data");
    add_var(col);
  }

  std::vector<const std::vector<double>*> margs;
  std::vector<int> n_levels;
  double lattice = 1.0;
  for (int col : vars) {
    const ColumnSchema& cs = tree.schema[static_cast<std::size_t>(col)];
    if (cs.role != Role::Categorical)
      throw InputError("accuracy is defined for categorical predictors; '" +
                       cs.name + "' is not one");
    auto it = info.marginals.find(cs.name);
    if (it == info.marginals.end() ||
        it->second.size() != cs.levels.size())
      throw InputError("the generator recorded no marginals for '" + cs.name +
                       "'");
    margs.push_back(&it->second);
    n_levels.push_back(static_cast<int>(cs.levels.size()));
    lattice *= static_cast<double>(cs.levels.size());
  }
  if (lattice > 5e6)
    throw NumericalError("the accuracy lattice is too large to enumerate");

  // P(reference) under the recorded marginals.
  double p_star = 1.0;
  for (const SubgroupCondition& c : star.conditions) {
    const std::vector<double>& m = info.marginals.at(c.variable);
    double p = 0.0;
    for (int code : c.allowed_codes) p += m[static_cast<std::size_t>(code)];
    p_star *= p;
  }

  // Resolve columns to lattice slots once, outside the enumeration.
  auto slot_of = [&](int col) {
    for (std::size_t k = 0; k < vars.size(); ++k)
      if (vars[k] == col) return k;
    throw InputError("internal: lattice variable not collected");
  };
  struct FlatStep {
    std::size_t slot;
    const std::vector<int>* left_levels;
    bool went_left;
  };
  std::vector<std::vector<FlatStep>> paths;
  for (std::size_t i : chosen) {
    std::vector<FlatStep> p;
    for (const PathStep& step : leaves[i].second)
      p.push_back({slot_of(step.rule->column), &step.rule->left_levels,
                   step.went_left});
    paths.push_back(std::move(p));
  }
  struct FlatCond {
    std::size_t slot;
    const std::vector<int>* allowed;
  };
  std::vector<FlatCond> star_conds;
  for (const SubgroupCondition& c : star.conditions) {
    int col = -1;
    for (std::size_t j = 0; j < tree.schema.size(); ++j)
      if (tree.schema[j].name == c.variable) col = static_cast<int>(j);
    star_conds.push_back({slot_of(col), &c.allowed_codes});
  }

  // Odometer over the lattice.
  std::vector<int> point(vars.size(), 0);
  double p_sel = 0.0;
  for (;;) {
    bool in_sel = false;
    for (const std::vector<FlatStep>& path : paths) {
      bool member = true;
      for (const FlatStep& step : path) {
        bool left = std::binary_search(step.left_levels->begin(),
                                       step.left_levels->end(),
                                       point[step.slot]);
        if (left != step.went_left) {
          member = false;
          break;
        }
      }
      if (member) {
        in_sel = true;
        break;
      }
    }
    if (in_sel) {
      bool in_star = true;
      for (const FlatCond& c : star_conds)
        if (std::find(c.allowed->begin(), c.allowed->end(),
                      point[c.slot]) == c.allowed->end())
          in_star = false;
      if (!in_star) return 0.0;  // not contained in the reference subgroup
      double p = 1.0;
      for (std::size_t k = 0; k < vars.size(); ++k)
        p *= (*margs[k])[static_cast<std::size_t>(point[k])];
      p_sel += p;
    }
    // advance
    std::size_t k = 0;
    for (; k < point.size(); ++k) {
      if (++point[k] < n_levels[k]) break;
      point[k] = 0;
    }
    if (k == point.size()) break;
  }
  return p_sel / p_star;
}

// ---- experiment drivers --------------------------------------------------------

namespace {

struct Timer {
  std::chrono::steady_clock::time_point start =
      std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                         start)
        .count();
  }
};

void validate_common(const ExperimentConfig& cfg) {
  if (cfg.iterations < 1) throw InputError("iterations must be >= 1");
  if (cfg.n < 10) throw InputError("experiment sample size must be >= 10");
  if (cfg.threads < 0) throw InputError("threads must be >= 0");
}

bool marker_model(SimModel m) {
  return m == SimModel::M1 || m == SimModel::M2 || m == SimModel::M3;
}

}  // namespace

ExperimentReport run_bias_experiment(const ExperimentConfig& cfg) {
  validate_common(cfg);
  Timer timer;
  int threads = resolve_threads(cfg.threads);

  const std::array<std::pair<BiasDist, BiasDist>, 4> pairs = {
      std::make_pair(BiasDist::Cont, BiasDist::Ord4),
      std::make_pair(BiasDist::Cont, BiasDist::Cat3),
      std::make_pair(BiasDist::Cont, BiasDist::Cat7),
      std::make_pair(BiasDist::Ord4, BiasDist::Cat3)};

  std::ostringstream csv, text;
  csv << "experiment,method,pair,n,iterations,seed,failures,freq_x1,se\n";
  text << "selection-bias experiment\n"
       << "method " << to_string(cfg.method) << ", n=" << cfg.n
       << ", iterations=" << cfg.iterations << ", seed=" << cfg.seed << "\n\n"
       << "pair        freq(x1)   se         failures\n";

  ExperimentReport report;
  report.name = "bias";
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    // -1 failed iteration, 0 x1 not top-ranked, 1 x1 top-ranked.
    std::vector<signed char> hit(static_cast<std::size_t>(cfg.iterations), -1);
    parallel_for(cfg.iterations, threads, [&](int it) {
      std::uint64_t base =
          mix_seed(mix_seed(cfg.seed, 0xB1A5u + p), static_cast<std::uint64_t>(it));
      GeneratorSpec spec;
      spec.model = SimModel::BiasNull;
      spec.dist1 = pairs[p].first;
      spec.dist2 = pairs[p].second;
      spec.n = cfg.n;
      spec.seed = mix_seed(base, 1);
      Generated g = generate(spec);

      GrowConfig gc;
      gc.method = cfg.method;
      gc.max_depth = 1;
      gc.gate = GateKind::Off;
      gc.prune = PruneKind::None;
      gc.seed = mix_seed(base, 2);
      gc.threads = 1;
      try {
        TreeModel model = grow(g.ds, gc);
        const TraceEntry* root = nullptr;
        for (const TraceEntry& t : model.trace)
          if (t.node_id == 1) root = &t;
        if (!root || root->scores.empty()) return;
        int best = root->scores.front().first;
        double best_q = root->scores.front().second;
        for (const auto& s : root->scores)
          if (s.second > best_q) {
            best = s.first;
            best_q = s.second;
          }
        hit[static_cast<std::size_t>(it)] =
            best == g.ds.col_index("x1") ? 1 : 0;
      } catch (const std::exception&) {
        // counted as a failure below
      }
    });

    int ok = 0, x1 = 0;
    for (signed char h : hit) {
      if (h >= 0) ++ok;
      if (h == 1) ++x1;
    }
    int fails = cfg.iterations - ok;
    report.failures += fails;
    double freq = ok > 0 ? static_cast<double>(x1) / ok
                         : std::numeric_limits<double>::quiet_NaN();
    double se = ok > 0 ? std::sqrt(std::max(0.0, freq * (1.0 - freq) /
                                                     static_cast<double>(ok)))
                       : std::numeric_limits<double>::quiet_NaN();
    std::string label = bias_dist_to_string(pairs[p].first) + "-" +
                        bias_dist_to_string(pairs[p].second);
    csv << "bias," << to_string(cfg.method) << "," << label << ","
        << cfg.n << "," << cfg.iterations << "," << cfg.seed << "," << fails
        << "," << fmt(freq) << "," << fmt(se) << "\n";
    char line[96];
    std::snprintf(line, sizeof line, "%-11s %-10s %-10s %d\n", label.c_str(),
                  fmt(freq).c_str(), fmt(se).c_str(), fails);
    text << line;
  }

  report.csv = csv.str();
  report.text = text.str();
  report.wall_seconds = timer.seconds();
  return report;
}

ExperimentReport run_accuracy_experiment(const ExperimentConfig& cfg) {
  validate_common(cfg);
  if (!marker_model(cfg.model))
    throw InputError("the accuracy experiment runs on models m1/m2/m3");
  Timer timer;
  int threads = resolve_threads(cfg.threads);
  std::size_t iters = static_cast<std::size_t>(cfg.iterations);

  std::vector<double> acc(iters, std::numeric_limits<double>::quiet_NaN());
  std::vector<char> nontrivial(iters, 0), level1(iters, 0), level2(iters, 0);
  parallel_for(cfg.iterations, threads, [&](int it) {
    std::uint64_t base = mix_seed(cfg.seed, static_cast<std::uint64_t>(it));
    GeneratorSpec spec;
    spec.model = cfg.model;
    spec.n = cfg.n;
    spec.seed = mix_seed(base, 1);
    Generated g = generate(spec);

    GrowConfig gc;
    gc.method = cfg.method;
    gc.gate = cfg.gate;
    gc.prune = cfg.prune;
    gc.max_depth = cfg.max_depth;
    gc.seed = mix_seed(base, 2);
    gc.threads = 1;
    try {
      TreeModel model = grow(g.ds, gc);
      std::size_t i = static_cast<std::size_t>(it);
      nontrivial[i] = model.trivial() ? 0 : 1;
      auto is_target = [](const Node* nd) {
        return nd && nd->split &&
               (nd->split->variable == "x1" || nd->split->variable == "x2");
      };
      if (is_target(model.root.get())) level1[i] = 1;
      if (model.root->split &&
          (is_target(model.root->left.get()) ||
           is_target(model.root->right.get())))
        level2[i] = 1;
      acc[i] = subgroup_accuracy(model, g.info);
    } catch (const std::exception&) {
      // counted as a failure; wipe any partially recorded outcome
      std::size_t i = static_cast<std::size_t>(it);
      acc[i] = std::numeric_limits<double>::quiet_NaN();
      nontrivial[i] = level1[i] = level2[i] = 0;
    }
  });

  int ok = 0;
  double mean = 0.0;
  for (double a : acc)
    if (std::isfinite(a)) {
      ++ok;
      mean += a;
    }
  mean = ok > 0 ? mean / ok : std::numeric_limits<double>::quiet_NaN();
  double var = 0.0;
  for (double a : acc)
    if (std::isfinite(a)) var += (a - mean) * (a - mean);
  double se = ok > 1 ? std::sqrt(var / (ok - 1) / ok)
                     : std::numeric_limits<double>::quiet_NaN();
  double p_nontrivial = 0.0, f1 = 0.0, f2 = 0.0;
  for (std::size_t i = 0; i < iters; ++i) {
    p_nontrivial += nontrivial[i];
    f1 += level1[i];
    f2 += level2[i];
  }
  if (ok > 0) {
    p_nontrivial /= ok;
    f1 /= ok;
    f2 /= ok;
  }

  ExperimentReport report;
  report.name = "accuracy";
  report.failures = cfg.iterations - ok;

  std::ostringstream csv, text;
  csv << "experiment,model,method,n,iterations,seed,failures,mean_accuracy,"
         "accuracy_se,p_nontrivial,level1_freq,level2_freq\n";
  csv << "accuracy," << sim_model_to_string(cfg.model) << ","
      << to_string(cfg.method) << "," << cfg.n << "," << cfg.iterations
      << "," << cfg.seed << "," << report.failures << "," << fmt(mean) << ","
      << fmt(se) << "," << fmt(p_nontrivial) << "," << fmt(f1) << ","
      << fmt(f2) << "\n";
  text << "accuracy experiment\n"
       << "model " << sim_model_to_string(cfg.model) << ", method "
       << to_string(cfg.method) << ", n=" << cfg.n
       << ", iterations=" << cfg.iterations << ", seed=" << cfg.seed << "\n\n"
       << "mean accuracy      " << fmt(mean) << " (se " << fmt(se) << ")\n"
       << "P(nontrivial tree) " << fmt(p_nontrivial) << "\n"
       << "x1/x2 at level 1   " << fmt(f1) << "\n"
       << "x1/x2 at level 2   " << fmt(f2) << "\n"
       << "failures           " << report.failures << "\n";
  report.csv = csv.str();
  report.text = text.str();
  report.wall_seconds = timer.seconds();
  return report;
}

namespace {

// Node-averaged per-trial coverage bookkeeping; index 0/1/2 = mu(t,0),
// mu(t,1), d(t).
struct CoverageTrial {
  bool ok = false;
  bool nontrivial = false;
  double naive_bias[3];
  double naive_cover[3];
  double boot_cover[3];
};

}  // namespace

ExperimentReport run_coverage_experiment(const ExperimentConfig& cfg) {
  if (cfg.iterations < 1) throw InputError("iterations must be >= 1");
  if (!marker_model(cfg.model))
    throw InputError("the coverage experiment runs on models m1/m2/m3");
  if (cfg.factorial_r < 1)
    throw InputError("the coverage design needs factorial_r >= 1");
  if (cfg.bootstrap_replicates < 10)
    throw InputError("the coverage experiment needs at least 10 bootstrap "
                     "replicates");
  Timer timer;
  int threads = resolve_threads(cfg.threads);

  const int target = cfg.iterations;
  const int cap = 20 * target;
  std::vector<CoverageTrial> trials;
  trials.reserve(static_cast<std::size_t>(target) + 64);
  int attempts = 0, failures = 0, collected = 0;

  while (collected < target && attempts < cap) {
    int remaining = target - collected;
    int batch = std::min(cap - attempts,
                         std::max(8, remaining + remaining / 5 + 4));
    std::vector<CoverageTrial> out(static_cast<std::size_t>(batch));
    parallel_for(batch, threads, [&](int k) {
      CoverageTrial& t = out[static_cast<std::size_t>(k)];
      std::uint64_t base =
          mix_seed(cfg.seed, static_cast<std::uint64_t>(attempts + k));
      GeneratorSpec spec;
      spec.model = cfg.model;
      spec.factorial_r = cfg.factorial_r;
      spec.seed = mix_seed(base, 1);
      Generated g = generate(spec);

      GrowConfig gc;
      gc.method = cfg.method;
      gc.gate = cfg.gate;
      gc.prune = cfg.prune;
      gc.max_depth = cfg.max_depth;
      gc.seed = mix_seed(base, 2);
      gc.threads = 1;
      try {
        TreeModel model = grow(g.ds, gc);
        t.ok = true;
        t.nontrivial = !model.trivial();
        if (!t.nontrivial) return;

        std::vector<LeafIntervals> naive = naive_intervals(model);
        BootstrapResult boot =
            bootstrap_intervals(g.ds, model, cfg.bootstrap_replicates,
                                mix_seed(base, 3), 1);
        std::map<int, const LeafIntervals*> boot_by_id;
        for (const LeafIntervals& li : boot.leaves) boot_by_id[li.node_id] = &li;

        std::vector<const Node*> leaves = collect_leaves(model);
        double bias_sum[3] = {0, 0, 0}, naive_sum[3] = {0, 0, 0},
               boot_sum[3] = {0, 0, 0};
        int bias_n[3] = {0, 0, 0}, naive_n[3] = {0, 0, 0},
            boot_n[3] = {0, 0, 0};
        for (std::size_t li = 0; li < leaves.size(); ++li) {
          const Node* leaf = leaves[li];
          double truth[3];
          double t0 = 0.0, t1 = 0.0;
          for (int r : leaf->rows) {
            t0 += true_response_probability(cfg.model, g.ds,
                                            static_cast<std::size_t>(r), 0);
            t1 += true_response_probability(cfg.model, g.ds,
                                            static_cast<std::size_t>(r), 1);
          }
          truth[0] = t0 / leaf->n();
          truth[1] = t1 / leaf->n();
          truth[2] = truth[1] - truth[0];

          const LeafIntervals& nv = naive[li];
          const LeafIntervals* bt = boot_by_id.at(leaf->id);
          for (int q = 0; q < 3; ++q) {
            const ArmInterval& niv =
                q < 2 ? nv.mu[static_cast<std::size_t>(q)] : nv.d;
            const ArmInterval& biv =
                q < 2 ? bt->mu[static_cast<std::size_t>(q)] : bt->d;
            if (niv.defined) {
              bias_sum[q] += niv.estimate - truth[q];
              ++bias_n[q];
              naive_sum[q] +=
                  (niv.lo <= truth[q] && truth[q] <= niv.hi) ? 1.0 : 0.0;
              ++naive_n[q];
            }
            if (biv.defined) {
              boot_sum[q] +=
                  (biv.lo <= truth[q] && truth[q] <= biv.hi) ? 1.0 : 0.0;
              ++boot_n[q];
            }
          }
        }
        for (int q = 0; q < 3; ++q) {
          t.naive_bias[q] =
              bias_n[q] ? bias_sum[q] / bias_n[q]
                        : std::numeric_limits<double>::quiet_NaN();
          t.naive_cover[q] =
              naive_n[q] ? naive_sum[q] / naive_n[q]
                         : std::numeric_limits<double>::quiet_NaN();
          t.boot_cover[q] = boot_n[q]
                                ? boot_sum[q] / boot_n[q]
                                : std::numeric_limits<double>::quiet_NaN();
        }
      } catch (const std::exception&) {
        t.ok = false;  // a failed trial consumes its attempt
      }
    });
    for (CoverageTrial& t : out) {
      if (!t.ok) {
        ++failures;
      } else if (t.nontrivial && collected < target) {
        trials.push_back(t);
        ++collected;
      }
    }
    attempts += batch;
  }

  double bias_mean[3], naive_mean[3], boot_mean[3];
  for (int q = 0; q < 3; ++q) {
    double bs = 0, ns = 0, bc = 0;
    int bn = 0, nn = 0, bcn = 0;
    for (const CoverageTrial& t : trials) {
      if (std::isfinite(t.naive_bias[q])) {
        bs += t.naive_bias[q];
        ++bn;
      }
      if (std::isfinite(t.naive_cover[q])) {
        ns += t.naive_cover[q];
        ++nn;
      }
      if (std::isfinite(t.boot_cover[q])) {
        bc += t.boot_cover[q];
        ++bcn;
      }
    }
    bias_mean[q] = bn ? bs / bn : std::numeric_limits<double>::quiet_NaN();
    naive_mean[q] = nn ? ns / nn : std::numeric_limits<double>::quiet_NaN();
    boot_mean[q] = bcn ? bc / bcn : std::numeric_limits<double>::quiet_NaN();
  }

  ExperimentReport report;
  report.name = "coverage";
  report.failures = failures;

  int n_design = 81 * cfg.factorial_r;
  std::ostringstream csv, text;
  csv << "experiment,model,method,r,n,target_trials,trials,attempts,"
         "replicates,seed,failures,quantity,naive_bias,naive_cover,boot_cover\n";
  const char* qname[3] = {"mu0", "mu1", "d"};
  for (int q = 0; q < 3; ++q)
    csv << "coverage," << sim_model_to_string(cfg.model) << ","
        << to_string(cfg.method) << "," << cfg.factorial_r << ","
        << n_design << "," << target << "," << collected << "," << attempts
        << "," << cfg.bootstrap_replicates << "," << cfg.seed << ","
        << failures << "," << qname[q] << "," << fmt(bias_mean[q]) << ","
        << fmt(naive_mean[q]) << "," << fmt(boot_mean[q]) << "\n";

  text << "coverage experiment\n"
       << "model " << sim_model_to_string(cfg.model) << ", method "
       << to_string(cfg.method) << ", r=" << cfg.factorial_r
       << " factorial (n=" << n_design << "), trials=" << collected << "/"
       << target << " (attempts " << attempts << ", failures " << failures
       << "), J=" << cfg.bootstrap_replicates << ", seed=" << cfg.seed
       << "\n\n"
       << "quantity   naive bias   naive cover   bootstrap cover\n";
  const char* qlabel[3] = {"mu(t,0)", "mu(t,1)", "d(t)"};
  for (int q = 0; q < 3; ++q) {
    char line[112];
    std::snprintf(line, sizeof line, "%-10s %-12s %-13s %s\n", qlabel[q],
                  fmt(bias_mean[q]).c_str(), fmt(naive_mean[q]).c_str(),
                  fmt(boot_mean[q]).c_str());
    text << line;
  }

  report.csv = csv.str();
  report.text = text.str();
  report.wall_seconds = timer.seconds();
  return report;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path,
                                        std::string& experiment) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config file " + path.string());
  ExperimentConfig cfg;
  experiment.clear();
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string::size_type hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    for (char& c : line)
      if (c == '=' || c == '\t') c = ' ';
    std::istringstream ls(line);
    std::string key, value;
    if (!(ls >> key)) continue;
    if (!(ls >> value))
      throw InputError("config line " + std::to_string(lineno) +
                       ": key '" + key + "' has no value");
    std::string extra;
    if (ls >> extra)
      throw InputError("config line " + std::to_string(lineno) +
                       ": unexpected token '" + extra + "'");
    try {
      std::string k = lower(key);
      if (k == "experiment") {
        std::string e = lower(value);
        if (e != "bias" && e != "accuracy" && e != "coverage")
          throw InputError("unknown experiment '" + value + "'");
        experiment = e;
      } else if (k == "method") {
        cfg.method = method_from_string(value);
      } else if (k == "model") {
        cfg.model = sim_model_from_string(value);
      } else if (k == "n") {
        cfg.n = std::stoi(value);
      } else if (k == "iterations") {
        cfg.iterations = std::stoi(value);
      } else if (k == "r") {
        cfg.factorial_r = std::stoi(value);
      } else if (k == "j") {
        cfg.bootstrap_replicates = std::stoi(value);
      } else if (k == "seed") {
        cfg.seed = std::stoull(value);
      } else if (k == "threads") {
        cfg.threads = std::stoi(value);
      } else if (k == "gate") {
        std::string g = lower(value);
        if (g == "off")
          cfg.gate = GateKind::Off;
        else if (g == "fixed")
          cfg.gate = GateKind::Fixed;
        else if (g == "sidak")
          cfg.gate = GateKind::Sidak;
        else
          throw InputError("unknown gate '" + value +
                           "' (expected off, fixed, or sidak)");
      } else if (k == "prune") {
        std::string p = lower(value);
        if (p == "none")
          cfg.prune = PruneKind::None;
        else if (p == "cv")
          cfg.prune = PruneKind::CostComplexityCV;
        else
          throw InputError("unknown prune '" + value +
                           "' (expected none or cv)");
      } else if (k == "max_depth") {
        cfg.max_depth = std::stoi(value);
      } else {
        throw InputError("unknown config key '" + key + "'");
      }
    } catch (const InputError&) {
      throw;
    } catch (const std::exception&) {
      throw InputError("config line " + std::to_string(lineno) +
                       ": bad value '" + value + "' for key '" + key + "'");
    }
  }
  if (experiment.empty())
    throw InputError("config file " + path.string() +
                     " does not set 'experiment'");
  return cfg;
}

}  // namespace subtree
