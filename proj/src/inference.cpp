#include "subtree/inference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "subtree/stats.hpp"

namespace subtree {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Lowest treatment level with a finite coefficient: the fit's reference.
int reference_level(const std::vector<double>& beta) {
  for (std::size_t l = 0; l < beta.size(); ++l)
    if (std::isfinite(beta[l])) return static_cast<int>(l);
  return -1;
}

bool level_usable(const NodeEstimates& e, int l) {
  if (l < 0 || l >= static_cast<int>(e.beta.size())) return false;
  if (!std::isfinite(e.beta[l])) return false;
  if (l < static_cast<int>(e.unbounded.size()) && e.unbounded[l]) return false;
  return true;
}

struct Spread {
  double sd = kNaN;
  int support = 0;
};

// SD (ddof 1) of the finite entries of one target across replicates.
Spread reduce_target(const std::vector<double>& values, int replicates,
                     int total_targets, int target) {
  Spread s;
  double sum = 0.0;
  for (int j = 0; j < replicates; ++j) {
    double v = values[static_cast<std::size_t>(j) * total_targets + target];
    if (std::isfinite(v)) {
      sum += v;
      ++s.support;
    }
  }
  if (s.support < 2) return s;
  double mean = sum / s.support;
  double ss = 0.0;
  for (int j = 0; j < replicates; ++j) {
    double v = values[static_cast<std::size_t>(j) * total_targets + target];
    if (std::isfinite(v)) ss += (v - mean) * (v - mean);
  }
  s.sd = std::sqrt(ss / (s.support - 1));
  return s;
}

ArmInterval make_interval(double estimate, const Spread& s, int node_id,
                          const char* what) {
  if (s.support < 10)
    throw NumericalError(
        "bootstrap: fewer than 10 usable replicates for " + std::string(what) +
        " at node " + std::to_string(node_id) +
        " (the subgroup or arm is too unstable to resample)");
  ArmInterval out;
  out.estimate = estimate;
  out.sd = s.sd;
  out.support = s.support;
  out.lo = estimate - 2.0 * s.sd;
  out.hi = estimate + 2.0 * s.sd;
  out.defined = true;
  return out;
}

}  // namespace

BootstrapResult bootstrap_intervals(const Dataset& ds, const TreeModel& model,
                                    int replicates, std::uint64_t seed,
                                    int threads) {
  if (replicates < 10)
    throw InputError("bootstrap requires at least 10 replicates");
  if (!model.root) throw InputError("the model has no tree");
  if (model.root->n() > 0 && model.root->rows.empty())
    throw InputError(
        "bootstrap needs the in-process fitted model; row assignments are "
        "not kept in model files");
  if (static_cast<std::size_t>(model.root->n()) != ds.n)
    throw InputError("bootstrap data must be the model's training data");

  const bool censored = model.config.censored;
  const int levels = static_cast<int>(model.treatment_levels.size());
  std::vector<const Node*> leaves = collect_leaves(model);
  const int n_leaves = static_cast<int>(leaves.size());
  // Per-leaf slots: uncensored holds one mean per level plus the two-arm
  // difference; censored holds one log rate ratio per level.
  const int width = censored ? levels : levels + 1;
  const int total = n_leaves * width;

  std::vector<double> values(static_cast<std::size_t>(replicates) * total,
                             kNaN);
  const std::vector<int>& zcol = ds.z();

  parallel_for(replicates, resolve_threads(threads), [&](int j) {
    std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(j)));
    std::vector<int> draw(ds.n);
    for (std::size_t i = 0; i < ds.n; ++i)
      draw[i] = static_cast<int>(rng() % ds.n);
    Dataset bs = subset_rows(ds, draw);
    GrowConfig cfg = model.config;
    cfg.seed = mix_seed(seed, static_cast<std::uint64_t>(j));
    TreeModel bt;
    try {
      bt = grow(bs, cfg);
    } catch (const NumericalError&) {
      return;  // e.g. a censored resample without events; slots stay NaN
    }
    RoutingMap rm = make_routing(bt, ds);
    std::vector<const Node*> hit(ds.n);
    for (std::size_t r = 0; r < ds.n; ++r)
      hit[r] = predict_leaf(bt, rm, ds, r);

    double* slot = &values[static_cast<std::size_t>(j) * total];
    for (int li = 0; li < n_leaves; ++li) {
      const Node* leaf = leaves[li];
      if (!censored) {
        std::vector<double> sum(levels, 0.0);
        std::vector<int> cnt(levels, 0);
        for (int r : leaf->rows) {
          int zr = zcol[r];
          double m = hit[r]->est.mean[zr];
          if (std::isfinite(m)) {
            sum[zr] += m;
            ++cnt[zr];
          }
        }
        for (int z = 0; z < levels; ++z)
          if (cnt[z] > 0) slot[li * width + z] = sum[z] / cnt[z];
        if (levels == 2 && cnt[0] > 0 && cnt[1] > 0)
          slot[li * width + levels] =
              slot[li * width + 1] - slot[li * width + 0];
      } else {
        int ref = reference_level(leaf->est.beta);
        if (ref < 0) continue;
        std::vector<double> sum(levels, 0.0);
        std::vector<int> cnt(levels, 0);
        for (int r : leaf->rows) {
          const NodeEstimates& e = hit[r]->est;
          if (!level_usable(e, ref)) continue;
          for (int z = 0; z < levels; ++z) {
            if (z == ref) continue;
            if (!level_usable(e, z)) continue;
            sum[z] += e.beta[z] - e.beta[ref];
            ++cnt[z];
          }
        }
        for (int z = 0; z < levels; ++z)
          if (z != ref && cnt[z] > 0) slot[li * width + z] = sum[z] / cnt[z];
      }
    }
  });

  BootstrapResult out;
  out.replicates = replicates;
  for (int li = 0; li < n_leaves; ++li) {
    const Node* leaf = leaves[li];
    const NodeEstimates& est = leaf->est;
    LeafIntervals row;
    row.node_id = leaf->id;
    row.n = leaf->n();
    if (!censored) {
      row.mu.resize(levels);
      for (int z = 0; z < levels; ++z) {
        if (est.count[z] == 0 || !std::isfinite(est.mean[z])) continue;
        Spread s = reduce_target(values, replicates, total, li * width + z);
        std::string what = "mu[" + model.treatment_levels[z] + "]";
        row.mu[z] = make_interval(est.mean[z], s, leaf->id, what.c_str());
      }
      if (levels == 2 && std::isfinite(est.d)) {
        Spread s =
            reduce_target(values, replicates, total, li * width + levels);
        row.d = make_interval(est.d, s, leaf->id, "d");
      }
    } else {
      row.beta.resize(levels);
      int ref = reference_level(est.beta);
      for (int z = 0; z < levels; ++z) {
        if (z == ref) {
          row.beta[z].estimate = 0.0;
          row.beta[z].lo = 0.0;
          row.beta[z].hi = 0.0;
          row.beta[z].sd = 0.0;
          row.beta[z].defined = true;
          continue;
        }
        if (!level_usable(est, z) || ref < 0) continue;
        Spread s = reduce_target(values, replicates, total, li * width + z);
        std::string what = "beta[" + model.treatment_levels[z] + "]";
        row.beta[z] = make_interval(est.beta[z], s, leaf->id, what.c_str());
      }
    }
    out.leaves.push_back(std::move(row));
  }
  return out;
}

std::vector<LeafIntervals> naive_intervals(const TreeModel& model) {
  if (model.config.censored)
    throw InputError("naive intervals are defined for uncensored fits");
  int levels = static_cast<int>(model.treatment_levels.size());
  std::vector<LeafIntervals> out;
  for (const Node* leaf : collect_leaves(model)) {
    const NodeEstimates& est = leaf->est;
    LeafIntervals row;
    row.node_id = leaf->id;
    row.n = leaf->n();
    row.mu.resize(levels);
    for (int z = 0; z < levels; ++z) {
      if (est.count[z] < 2 || !std::isfinite(est.sd[z])) continue;
      ArmInterval& a = row.mu[z];
      a.estimate = est.mean[z];
      a.sd = est.sd[z] / std::sqrt(static_cast<double>(est.count[z]));
      a.lo = a.estimate - 2.0 * a.sd;
      a.hi = a.estimate + 2.0 * a.sd;
      a.defined = true;
    }
    if (levels == 2 && est.count[0] >= 2 && est.count[1] >= 2 &&
        std::isfinite(est.d)) {
      double v0 = est.sd[0] * est.sd[0] / est.count[0];
      double v1 = est.sd[1] * est.sd[1] / est.count[1];
      double se = std::sqrt(v0 + v1);
      if (se > 0.0) {
        double df = (v0 + v1) * (v0 + v1) /
                    (v0 * v0 / (est.count[0] - 1) +
                     v1 * v1 / (est.count[1] - 1));
        double t = t_quantile(0.975, df);
        row.d.estimate = est.d;
        row.d.sd = se;
        row.d.lo = est.d - t * se;
        row.d.hi = est.d + t * se;
        row.d.defined = true;
      }
    }
    out.push_back(std::move(row));
  }
  return out;
}

ImportanceResult importance_scores(const TreeModel& model) {
  ImportanceResult out;
  if (!model.root) return out;

  // Selection scores of the nodes that were split; the root's alone when the
  // tree is trivial.
  std::map<int, const TraceEntry*> by_id;
  for (const TraceEntry& t : model.trace) by_id[t.node_id] = &t;
  std::vector<const TraceEntry*> used;
  if (model.trivial()) {
    auto it = by_id.find(1);
    if (it != by_id.end()) used.push_back(it->second);
  } else {
    for (const Node* nd : collect_internal(model)) {
      auto it = by_id.find(nd->id);
      if (it != by_id.end()) used.push_back(it->second);
    }
  }
  if (used.empty()) return out;

  // Every predictor appears in the ranking, split on or not.
  std::map<int, double> score;
  for (std::size_t j = 0; j < model.schema.size(); ++j)
    if (model.schema[j].role == Role::Ordinal ||
        model.schema[j].role == Role::Categorical)
      score[static_cast<int>(j)] = 0.0;

  double sum_n = 0.0, sum_n2 = 0.0;
  for (const TraceEntry* t : used) {
    double n = static_cast<double>(t->n);
    sum_n += n;
    sum_n2 += n * n;
    for (const auto& s : t->scores) score[s.first] += n * s.second;
  }
  out.c = sum_n2 / sum_n;
  out.dof = sum_n * sum_n / sum_n2;
  out.threshold = out.c * chi2_quantile(0.95, out.dof);
  out.usable = true;

  for (const auto& kv : score) {
    ImportanceEntry e;
    e.column = kv.first;
    e.variable = model.schema[kv.first].name;
    e.score = kv.second;
    e.flagged = kv.second > out.threshold;
    out.entries.push_back(std::move(e));
  }
  std::stable_sort(out.entries.begin(), out.entries.end(),
                   [](const ImportanceEntry& a, const ImportanceEntry& b) {
                     if (a.score != b.score) return a.score > b.score;
                     return a.column < b.column;
                   });
  return out;
}

}  // namespace subtree
