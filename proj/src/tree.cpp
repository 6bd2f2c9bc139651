#include "subtree/tree.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <utility>

#include <json.hpp>

#include "subtree/stats.hpp"

namespace subtree {

namespace {

using nlohmann::json;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string fmt(double v) {
  if (std::isnan(v)) return "NA";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

std::vector<int> residual_signs(const std::vector<double>& resid) {
  std::vector<int> cls(resid.size());
  for (std::size_t i = 0; i < resid.size(); ++i) cls[i] = resid[i] > 0 ? 1 : 0;
  return cls;
}

// ---- growth ----------------------------------------------------------------

struct Grower {
  const Dataset& ds;
  const GrowConfig& cfg;                // min_node_size already resolved
  const std::vector<double>* cumhaz;    // per dataset row; censored only
  const std::vector<int>* class_var;    // per dataset row; Gc only
  bool y_binary = false;
  double fixed_gate = 0.0;
  std::vector<TraceEntry>* trace = nullptr;
  std::vector<double>* root_beta = nullptr;  // root-level betas (censored)

  void build(Node& node, int depth) const;
};

void fill_uncensored_estimates(NodeEstimates& est,
                               const TreatmentMeansFit& fit,
                               const std::vector<double>& yv,
                               const std::vector<int>& zv, bool y_binary) {
  int levels = static_cast<int>(fit.mean.size());
  est.count = fit.count;
  est.mean = fit.mean;
  est.sd.assign(levels, kNaN);
  std::vector<double> sq(levels, 0.0);
  for (std::size_t i = 0; i < yv.size(); ++i) {
    double d = yv[i] - fit.mean[zv[i]];
    sq[zv[i]] += d * d;
  }
  int present = 0;
  for (int l = 0; l < levels; ++l) {
    if (fit.count[l] > 0) ++present;
    if (fit.count[l] >= 2)
      est.sd[l] = std::sqrt(std::max(0.0, sq[l]) / (fit.count[l] - 1));
  }
  est.effect_defined = present >= 2;
  est.d = kNaN;
  if (levels == 2 && fit.count[0] > 0 && fit.count[1] > 0)
    est.d = fit.mean[1] - fit.mean[0];
  est.r_hat = kNaN;
  if (y_binary && present >= 2) {
    double r = 0.0;
    for (int a = 0; a < levels; ++a) {
      if (fit.count[a] == 0) continue;
      for (int b = a + 1; b < levels; ++b) {
        if (fit.count[b] == 0) continue;
        r = std::max(r, std::fabs(fit.mean[a] - fit.mean[b]));
      }
    }
    est.r_hat = r;
  }
}

void fill_censored_estimates(NodeEstimates& est, const PoissonTreatmentFit& fit,
                             const std::vector<double>& delta,
                             const std::vector<int>& zv, int levels) {
  est.count.assign(levels, 0);
  est.events.assign(levels, 0.0);
  for (std::size_t i = 0; i < zv.size(); ++i) {
    ++est.count[zv[i]];
    est.events[zv[i]] += delta[i];
  }
  est.beta = fit.beta;
  est.unbounded = fit.unbounded;
  est.intercept = fit.intercept;
  int present = 0;
  for (char p : fit.present) present += p ? 1 : 0;
  est.effect_defined = present >= 2;
  est.d = kNaN;
  est.r_hat = kNaN;
}

void Grower::build(Node& node, int depth) const {
  const std::vector<int>& rows = node.rows;
  node.n_rows = static_cast<int>(rows.size());
  int levels = ds.n_treatment_levels();

  std::vector<int> zv(rows.size());
  const std::vector<int>& zcol = ds.z();
  for (std::size_t i = 0; i < rows.size(); ++i) zv[i] = zcol[rows[i]];

  std::vector<double> yv, delta, ch, resid;
  if (!cfg.censored) {
    yv.resize(rows.size());
    const std::vector<double>& ycol = ds.y();
    for (std::size_t i = 0; i < rows.size(); ++i) yv[i] = ycol[rows[i]];
    TreatmentMeansFit fit = fit_treatment_means(yv, zv, levels);
    fill_uncensored_estimates(node.est, fit, yv, zv, y_binary);
    resid = std::move(fit.residual);
  } else {
    delta.resize(rows.size());
    ch.resize(rows.size());
    const std::vector<double>& dcol = ds.col(ds.event).num;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      delta[i] = dcol[rows[i]];
      ch[i] = (*cumhaz)[rows[i]];
    }
    PoissonTreatmentFit fit = poisson_treatment_fit(delta, ch, zv, levels);
    fill_censored_estimates(node.est, fit, delta, zv, levels);
    resid = std::move(fit.residual);
    if (node.id == 1 && root_beta) *root_beta = node.est.beta;
  }

  int present = 0;
  for (int c : node.est.count) present += c > 0 ? 1 : 0;
  if (present < 2) return;
  if (depth >= cfg.max_depth) return;

  std::vector<int> vnode;
  std::vector<VariableScore> scores;
  switch (cfg.method) {
    case Method::Gs:
      scores = gs_select(ds, rows, resid);
      break;
    case Method::Gi:
      scores = cfg.censored ? gi_select_censored(ds, rows, delta, ch)
                            : gi_select(ds, rows);
      break;
    case Method::Gc:
      vnode.resize(rows.size());
      for (std::size_t i = 0; i < rows.size(); ++i)
        vnode[i] = (*class_var)[rows[i]];
      scores = gc_select(ds, rows, vnode);
      break;
  }
  if (scores.empty()) return;

  TraceEntry entry;
  entry.node_id = node.id;
  entry.n = node.n_rows;
  for (const VariableScore& s : scores) entry.scores.emplace_back(s.column, s.q);
  trace->push_back(std::move(entry));

  double top = scores.front().q;
  if (cfg.gate == GateKind::Fixed && top <= fixed_gate) return;
  if (cfg.gate == GateKind::Sidak) {
    double per = 1.0 - std::pow(1.0 - cfg.gate_alpha,
                                1.0 / static_cast<double>(scores.size()));
    if (top <= chi2_upper_quantile(per, 1.0)) return;
  }

  SplitContext ctx;
  ctx.z = zv;
  ctx.n_treatment_levels = levels;
  ctx.min_node_size = std::max(1, cfg.min_node_size);
  ctx.min_level_count = cfg.min_level_count;
  if (cfg.method == Method::Gc) {
    ctx.criterion = SplitCriterion::GiniClass;
    ctx.cls = std::move(vnode);
    ctx.forbid_pure_children = true;
  } else if (cfg.censored) {
    ctx.criterion = SplitCriterion::PoissonDeviance;
    ctx.delta = std::move(delta);
    ctx.cumhaz = std::move(ch);
    ctx.cls = residual_signs(resid);
  } else {
    ctx.criterion = SplitCriterion::TreatmentMeansSSE;
    ctx.y = std::move(yv);
    ctx.cls = residual_signs(resid);
  }

  std::optional<SplitRule> rule =
      find_split_point(ds, rows, scores.front().column, ctx);
  if (!rule) return;

  node.split = *rule;
  node.left = std::make_unique<Node>();
  node.right = std::make_unique<Node>();
  node.left->id = 2 * node.id;
  node.right->id = 2 * node.id + 1;
  for (int r : rows) {
    (rule->routes_left(ds, static_cast<std::size_t>(r)) ? node.left
                                                        : node.right)
        ->rows.push_back(r);
  }
  build(*node.left, depth + 1);
  build(*node.right, depth + 1);
}

void collect_nodes(const Node* nd, std::vector<const Node*>& out) {
  if (!nd) return;
  out.push_back(nd);
  collect_nodes(nd->left.get(), out);
  collect_nodes(nd->right.get(), out);
}

// ---- cost-complexity pruning with cross-validation -------------------------

// Resubstitution cost of one node: summed SSE of the per-treatment means for
// regression methods, misclassification count of the majority class for Gc.
double training_cost(const Dataset& ds, const std::vector<int>& rows,
                     Method method, const std::vector<int>& class_var) {
  if (method == Method::Gc) {
    int n1 = 0;
    for (int r : rows) n1 += class_var[r];
    int n0 = static_cast<int>(rows.size()) - n1;
    return static_cast<double>(std::min(n0, n1));
  }
  std::vector<double> yv(rows.size());
  std::vector<int> zv(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    yv[i] = ds.y()[rows[i]];
    zv[i] = ds.z()[rows[i]];
  }
  return fit_treatment_means(yv, zv, ds.n_treatment_levels()).sse;
}

std::map<int, double> cost_map(const TreeModel& model, const Dataset& ds,
                               const std::vector<int>& class_var) {
  std::vector<const Node*> nodes;
  collect_nodes(model.root.get(), nodes);
  std::map<int, double> out;
  for (const Node* nd : nodes)
    out[nd->id] = training_cost(ds, nd->rows, model.config.method, class_var);
  return out;
}

// Nested weakest-link sequence: alphas[k] is the penalty at which the
// cumulative collapse set collapsed[k] becomes optimal; alphas[0] = 0 with
// nothing collapsed.
struct PruneSeq {
  std::vector<double> alphas;
  std::vector<std::set<int>> collapsed;
};

struct SubAgg {
  double cost = 0.0;
  int leaves = 0;
};

SubAgg link_strengths(const Node& nd, const std::set<int>& cur,
                      const std::map<int, double>& cost,
                      std::map<int, double>& g) {
  if (nd.is_leaf() || cur.count(nd.id))
    return {cost.at(nd.id), 1};
  SubAgg a = link_strengths(*nd.left, cur, cost, g);
  SubAgg b = link_strengths(*nd.right, cur, cost, g);
  SubAgg s{a.cost + b.cost, a.leaves + b.leaves};
  g[nd.id] = (cost.at(nd.id) - s.cost) / std::max(1, s.leaves - 1);
  return s;
}

PruneSeq weakest_link(const Node& root, const std::map<int, double>& cost) {
  PruneSeq seq;
  seq.alphas.push_back(0.0);
  seq.collapsed.emplace_back();
  std::set<int> cur;
  while (!root.is_leaf() && !cur.count(root.id)) {
    std::map<int, double> g;
    link_strengths(root, cur, cost, g);
    if (g.empty()) break;
    double amin = g.begin()->second;
    for (const auto& kv : g) amin = std::min(amin, kv.second);
    amin = std::max(amin, 0.0);
    for (const auto& kv : g)
      if (kv.second <= amin + 1e-12) cur.insert(kv.first);
    seq.alphas.push_back(std::max(amin, seq.alphas.back()));
    seq.collapsed.push_back(cur);
  }
  return seq;
}

bool rule_routes_left(const SplitRule& rule, const RoutingMap& map,
                      const Dataset& ds, std::size_t row) {
  int dc = map.column[rule.column];
  const Column& col = ds.col(dc);
  bool miss = !col.miss.empty() && col.miss[row];
  if (rule.kind == SplitKind::OrdinalThreshold) {
    if (miss) return rule.missing_goes_left;
    return col.num[row] <= rule.threshold;
  }
  if (miss) return rule.missing_goes_left;
  int code = col.code[row];
  if (code < 0) return rule.missing_goes_left;
  const std::vector<int>& trans = map.level[rule.column];
  int model_code = code < static_cast<int>(trans.size()) ? trans[code] : -1;
  if (model_code < 0) return rule.missing_goes_left;  // level unseen in training
  return std::binary_search(rule.left_levels.begin(), rule.left_levels.end(),
                            model_code);
}

const Node* walk_collapsed(const Node* nd, const std::set<int>& collapsed,
                           const RoutingMap& map, const Dataset& ds,
                           std::size_t row) {
  while (!nd->is_leaf() && !collapsed.count(nd->id)) {
    nd = rule_routes_left(*nd->split, map, ds, row) ? nd->left.get()
                                                    : nd->right.get();
  }
  return nd;
}

// Held-out prediction error of one row against the (possibly collapsed) leaf
// it routes to: squared error of the per-arm mean for regression methods,
// 0/1 loss against the leaf majority class for Gc.
double heldout_error(const Node* leaf, Method method, const Dataset& ds,
                     std::size_t row, const std::vector<int>& class_var_fold,
                     int class_true) {
  if (method == Method::Gc) {
    int n1 = 0;
    for (int r : leaf->rows) n1 += class_var_fold[r];
    int n0 = leaf->n() - n1;
    int majority = n1 > n0 ? 1 : 0;
    return class_true == majority ? 0.0 : 1.0;
  }
  const NodeEstimates& est = leaf->est;
  int z = ds.z()[row];
  double pred = est.mean[z];
  if (!std::isfinite(pred)) {
    double sum = 0.0;
    int cnt = 0;
    for (std::size_t l = 0; l < est.mean.size(); ++l) {
      if (est.count[l] > 0) {
        sum += est.mean[l] * est.count[l];
        cnt += est.count[l];
      }
    }
    pred = sum / cnt;
  }
  double e = ds.y()[row] - pred;
  return e * e;
}

void apply_collapse(Node& nd, const std::set<int>& collapsed) {
  if (nd.is_leaf()) return;
  if (collapsed.count(nd.id)) {
    nd.split.reset();
    nd.left.reset();
    nd.right.reset();
    return;
  }
  apply_collapse(*nd.left, collapsed);
  apply_collapse(*nd.right, collapsed);
}

void prune_cv(TreeModel& model, const Dataset& ds,
              const std::vector<int>& class_var) {
  if (model.trivial()) return;
  const GrowConfig& cfg = model.config;
  int folds = std::min<int>(cfg.cv_folds, static_cast<int>(ds.n));
  if (folds < 2) return;

  PruneSeq main_seq = weakest_link(*model.root, cost_map(model, ds, class_var));
  std::size_t k_count = main_seq.alphas.size();
  if (k_count <= 1) return;

  // Representative penalty inside each interval [alpha_k, alpha_{k+1});
  // the last interval is unbounded.
  std::vector<double> cand(k_count);
  for (std::size_t k = 0; k + 1 < k_count; ++k)
    cand[k] = std::sqrt(main_seq.alphas[k] * main_seq.alphas[k + 1]);
  cand[k_count - 1] = 2.0 * main_seq.alphas[k_count - 1] + 1.0;

  std::vector<int> fold(ds.n);
  for (std::size_t i = 0; i < ds.n; ++i)
    fold[i] = static_cast<int>(i % static_cast<std::size_t>(folds));
  std::mt19937_64 rng(mix_seed(cfg.seed, 0x0CF07DULL));
  std::shuffle(fold.begin(), fold.end(), rng);

  std::vector<double> err_sum(k_count, 0.0), err_sumsq(k_count, 0.0);

  for (int v = 0; v < folds; ++v) {
    std::vector<int> train_rows, test_rows;
    for (std::size_t i = 0; i < ds.n; ++i)
      (fold[i] == v ? test_rows : train_rows).push_back(static_cast<int>(i));
    Dataset tr = subset_rows(ds, train_rows);
    GrowConfig fcfg = cfg;
    fcfg.prune = PruneKind::None;
    TreeModel ft = grow(tr, fcfg);

    std::vector<int> class_fold;
    if (cfg.method == Method::Gc)
      class_fold = gc_class_variable(tr.y(), tr.z());
    PruneSeq fseq = weakest_link(*ft.root, cost_map(ft, tr, class_fold));
    RoutingMap rmap = make_routing(ft, ds);

    for (std::size_t k = 0; k < k_count; ++k) {
      std::size_t j = 0;
      while (j + 1 < fseq.alphas.size() && fseq.alphas[j + 1] <= cand[k]) ++j;
      const std::set<int>& coll = fseq.collapsed[j];
      for (int r : test_rows) {
        const Node* leaf = walk_collapsed(ft.root.get(), coll, rmap, ds,
                                          static_cast<std::size_t>(r));
        double e = heldout_error(leaf, cfg.method, ds,
                                 static_cast<std::size_t>(r), class_fold,
                                 class_var.empty() ? 0 : class_var[r]);
        err_sum[k] += e;
        err_sumsq[k] += e * e;
      }
    }
  }

  double n = static_cast<double>(ds.n);
  std::vector<double> mean_err(k_count);
  for (std::size_t k = 0; k < k_count; ++k) mean_err[k] = err_sum[k] / n;
  std::size_t k_min = 0;
  for (std::size_t k = 1; k < k_count; ++k)
    if (mean_err[k] <= mean_err[k_min]) k_min = k;  // ties favor smaller trees
  double var_min = std::max(
      0.0, (err_sumsq[k_min] - err_sum[k_min] * err_sum[k_min] / n) / (n - 1));
  double se_min = std::sqrt(var_min / n);
  double cut = mean_err[k_min] + cfg.cv_se_factor * se_min;
  std::size_t k_star = k_min;
  for (std::size_t k = 0; k < k_count; ++k)
    if (mean_err[k] <= cut + 1e-12) k_star = std::max(k_star, k);

  if (k_star > 0) apply_collapse(*model.root, main_seq.collapsed[k_star]);
}

// ---- serialization helpers --------------------------------------------------

json jnum(double v) { return std::isfinite(v) ? json(v) : json(); }

double num_from(const json& v) {
  return v.is_number() ? v.get<double>() : kNaN;
}

json jvec(const std::vector<double>& v) {
  json a = json::array();
  for (double x : v) a.push_back(jnum(x));
  return a;
}

std::vector<double> vec_from(const json& a) {
  std::vector<double> v;
  v.reserve(a.size());
  for (const json& x : a) v.push_back(num_from(x));
  return v;
}

const char* gate_name(GateKind g) {
  switch (g) {
    case GateKind::Off: return "off";
    case GateKind::Fixed: return "fixed";
    case GateKind::Sidak: return "sidak";
  }
  return "fixed";
}

GateKind gate_from(const std::string& s) {
  if (s == "off") return GateKind::Off;
  if (s == "fixed") return GateKind::Fixed;
  if (s == "sidak") return GateKind::Sidak;
  throw InputError("model file: unknown gate kind '" + s + "'");
}

Role role_from(const std::string& s) {
  if (s == "response") return Role::Response;
  if (s == "treatment") return Role::Treatment;
  if (s == "event") return Role::Event;
  if (s == "ordinal") return Role::Ordinal;
  if (s == "categorical") return Role::Categorical;
  if (s == "excluded") return Role::Excluded;
  throw InputError("model file: unknown column role '" + s + "'");
}

json node_to_json(const Node& nd) {
  json j;
  j["id"] = nd.id;
  j["n"] = nd.n_rows;
  json e;
  e["count"] = nd.est.count;
  e["mean"] = jvec(nd.est.mean);
  e["sd"] = jvec(nd.est.sd);
  e["beta"] = jvec(nd.est.beta);
  json ub = json::array();
  for (char u : nd.est.unbounded) ub.push_back(static_cast<bool>(u));
  e["unbounded"] = ub;
  e["events"] = jvec(nd.est.events);
  e["intercept"] = jnum(nd.est.intercept);
  e["d"] = jnum(nd.est.d);
  e["r_hat"] = jnum(nd.est.r_hat);
  e["effect_defined"] = nd.est.effect_defined;
  j["est"] = e;
  if (nd.split) {
    json s;
    s["column"] = nd.split->column;
    s["variable"] = nd.split->variable;
    s["kind"] = nd.split->kind == SplitKind::OrdinalThreshold ? "threshold"
                                                              : "subset";
    s["threshold"] = jnum(nd.split->threshold);
    s["missing_left"] = nd.split->missing_goes_left;
    s["left_levels"] = nd.split->left_levels;
    j["split"] = s;
    j["left"] = nd.left->id;
    j["right"] = nd.right->id;
  }
  return j;
}

std::unique_ptr<Node> node_from_json(const std::map<int, const json*>& by_id,
                                     int id) {
  auto it = by_id.find(id);
  if (it == by_id.end())
    throw InputError("model file: missing node " + std::to_string(id));
  const json& j = *it->second;
  auto nd = std::make_unique<Node>();
  nd->id = id;
  nd->n_rows = j.at("n").get<int>();
  const json& e = j.at("est");
  nd->est.count = e.at("count").get<std::vector<int>>();
  nd->est.mean = vec_from(e.at("mean"));
  nd->est.sd = vec_from(e.at("sd"));
  nd->est.beta = vec_from(e.at("beta"));
  for (const json& u : e.at("unbounded"))
    nd->est.unbounded.push_back(u.get<bool>() ? 1 : 0);
  nd->est.events = vec_from(e.at("events"));
  nd->est.intercept = num_from(e.at("intercept"));
  nd->est.d = num_from(e.at("d"));
  nd->est.r_hat = num_from(e.at("r_hat"));
  nd->est.effect_defined = e.at("effect_defined").get<bool>();
  if (j.contains("split")) {
    const json& s = j.at("split");
    SplitRule rule;
    rule.column = s.at("column").get<int>();
    rule.variable = s.at("variable").get<std::string>();
    rule.kind = s.at("kind").get<std::string>() == "threshold"
                    ? SplitKind::OrdinalThreshold
                    : SplitKind::CategoricalSubset;
    rule.threshold = num_from(s.at("threshold"));
    rule.missing_goes_left = s.at("missing_left").get<bool>();
    rule.left_levels = s.at("left_levels").get<std::vector<int>>();
    nd->split = rule;
    nd->left = node_from_json(by_id, j.at("left").get<int>());
    nd->right = node_from_json(by_id, j.at("right").get<int>());
  }
  return nd;
}

std::string join(const std::vector<std::string>& parts, const char* sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

std::string rule_text(const TreeModel& model, const SplitRule& rule) {
  std::string cond;
  if (rule.kind == SplitKind::OrdinalThreshold) {
    cond = rule.variable + " <= " + fmt(rule.threshold);
  } else {
    const ColumnSchema& sch = model.schema[rule.column];
    std::vector<std::string> labels;
    for (int code : rule.left_levels) labels.push_back(sch.levels[code]);
    cond = rule.variable + " in {" + join(labels, ", ") + "}";
  }
  return "left if " + cond +
         (rule.missing_goes_left ? " (NA left)" : " (NA right)");
}

std::string est_text(const TreeModel& model, const NodeEstimates& est) {
  const std::vector<std::string>& levels = model.treatment_levels;
  std::vector<std::string> parts;
  if (!model.config.censored) {
    for (std::size_t l = 0; l < levels.size(); ++l) {
      if (l < est.count.size() && est.count[l] > 0) {
        parts.push_back(levels[l] + ": n=" + std::to_string(est.count[l]) +
                        " mean=" + fmt(est.mean[l]) + " sd=" + fmt(est.sd[l]));
      }
    }
    std::string out = join(parts, "; ");
    if (std::isfinite(est.d)) out += " | d=" + fmt(est.d);
    if (std::isfinite(est.r_hat)) out += " | r=" + fmt(est.r_hat);
    return out;
  }
  for (std::size_t l = 0; l < levels.size(); ++l) {
    if (l >= est.count.size() || est.count[l] == 0) continue;
    std::string p = levels[l] + ": n=" + std::to_string(est.count[l]) +
                    " events=" + fmt(est.events[l]);
    if (l < est.beta.size() && std::isfinite(est.beta[l]))
      p += " exp(b)=" + fmt(std::exp(est.beta[l]));
    if (l < est.unbounded.size() && est.unbounded[l]) p += " (no events)";
    parts.push_back(p);
  }
  return join(parts, "; ");
}

void report_node(const TreeModel& model, const Node& nd, int indent,
                 std::ostringstream& os) {
  os << std::string(static_cast<std::size_t>(indent), ' ') << "node " << nd.id
     << " (n=" << nd.n() << "): ";
  os << (nd.split ? rule_text(model, *nd.split) : "leaf");
  std::string est = est_text(model, nd.est);
  if (!est.empty()) os << " | " << est;
  os << "\n";
  if (nd.split) {
    report_node(model, *nd.left, indent + 2, os);
    report_node(model, *nd.right, indent + 2, os);
  }
}

}  // namespace

// ---- public API -------------------------------------------------------------

Method method_from_string(const std::string& s) {
  std::string t;
  for (char c : s) t += static_cast<char>(std::tolower(c));
  if (t == "gc") return Method::Gc;
  if (t == "gs") return Method::Gs;
  if (t == "gi") return Method::Gi;
  throw InputError("unknown method '" + s + "' (expected Gc, Gs, or Gi)");
}

std::string to_string(Method m) {
  switch (m) {
    case Method::Gc: return "Gc";
    case Method::Gs: return "Gs";
    case Method::Gi: return "Gi";
  }
  return "Gs";
}

TreeModel grow(const Dataset& ds, const GrowConfig& config) {
  if (ds.n == 0) throw InputError("cannot grow a tree on an empty dataset");
  if (ds.response < 0) throw InputError("a response column is required");
  if (ds.treatment < 0) throw InputError("a treatment column is required");

  GrowConfig cfg = config;
  if (cfg.max_depth < 0) throw InputError("max_depth must be >= 0");
  if (cfg.min_node_size < 0) throw InputError("min_node_size must be >= 0");
  if (cfg.min_level_count < 0)
    throw InputError("min_level_count must be >= 0");
  if (!(cfg.gate_alpha > 0.0 && cfg.gate_alpha < 1.0))
    throw InputError("gate_alpha must lie in (0, 1)");
  if (cfg.cv_folds < 2) throw InputError("cv_folds must be >= 2");
  if (cfg.cv_se_factor < 0.0) throw InputError("cv_se_factor must be >= 0");
  if (cfg.ph_iterations < 1) throw InputError("ph_iterations must be >= 1");
  if (cfg.min_node_size == 0)
    cfg.min_node_size = std::max<int>(10, static_cast<int>(ds.n / 100));
  if (cfg.censored) {
    if (cfg.method == Method::Gc)
      throw InputError("Gc applies to uncensored binary responses");
    if (ds.event < 0)
      throw InputError("a censored fit requires an event column");
    if (cfg.prune == PruneKind::CostComplexityCV)
      throw InputError(
          "cost-complexity pruning is not supported for censored fits");
  }

  TreeModel model;
  model.config = cfg;
  model.response_name = ds.cols[ds.response].name;
  model.treatment_name = ds.cols[ds.treatment].name;
  model.event_name = ds.event >= 0 ? ds.cols[ds.event].name : "";
  model.treatment_levels = ds.cols[ds.treatment].levels;
  model.schema.resize(ds.cols.size());
  for (std::size_t j = 0; j < ds.cols.size(); ++j) {
    model.schema[j].name = ds.cols[j].name;
    model.schema[j].role = ds.cols[j].role;
    if (ds.cols[j].is_factor()) model.schema[j].levels = ds.cols[j].levels;
  }

  std::vector<int> class_var;
  bool y_binary = true;
  for (double y : ds.y())
    if (y != 0.0 && y != 1.0) {
      y_binary = false;
      break;
    }
  if (cfg.method == Method::Gc) {
    if (ds.n_treatment_levels() != 2)
      throw InputError("Gc requires a binary treatment");
    class_var = gc_class_variable(ds.y(), ds.z());
  }

  double fixed_gate = chi2_upper_quantile(cfg.gate_alpha, 1.0);

  if (!cfg.censored) {
    model.root = std::make_unique<Node>();
    model.root->rows = ds.all_rows();
    Grower grower{ds,      cfg,        nullptr,      &class_var,
                  y_binary, fixed_gate, &model.trace, nullptr};
    grower.build(*model.root, 0);
    if (cfg.prune == PruneKind::CostComplexityCV)
      prune_cv(model, ds, class_var);
    return model;
  }

  const std::vector<double>& times = ds.y();
  const std::vector<double>& events = ds.col(ds.event).num;
  std::vector<double> eta(ds.n, 0.0);
  std::vector<double> cumhaz(ds.n, 0.0);
  for (int iter = 0; iter < cfg.ph_iterations; ++iter) {
    HazardTable lambda;
    if (iter == 0) {
      lambda = nelson_aalen(times, events);
    } else {
      std::vector<double> w(ds.n);
      for (std::size_t i = 0; i < ds.n; ++i)
        w[i] = std::exp(std::clamp(eta[i], -30.0, 30.0));
      lambda = nelson_aalen(times, events, w);
    }
    if (!lambda.any_events())
      throw NumericalError("censored fit: the data contain no events");
    for (std::size_t i = 0; i < ds.n; ++i) cumhaz[i] = lambda.eval(times[i]);

    model.trace.clear();
    model.root = std::make_unique<Node>();
    model.root->rows = ds.all_rows();
    std::vector<double> root_beta;
    Grower grower{ds,    cfg,        &cumhaz,      nullptr,
                  false, fixed_gate, &model.trace, &root_beta};
    grower.build(*model.root, 0);
    model.root_beta_trace.push_back(std::move(root_beta));
    model.baseline = lambda;

    std::vector<const Node*> leaves = collect_leaves(model);
    for (const Node* leaf : leaves) {
      for (int r : leaf->rows) {
        double e = leaf->est.intercept + leaf->est.beta[ds.z()[r]];
        // Rows never at risk at any event time have no defined rate; their
        // weight is irrelevant to every baseline increment.
        eta[r] = std::isfinite(e) ? e : 0.0;
      }
    }
  }
  return model;
}

RoutingMap make_routing(const TreeModel& model, const Dataset& ds) {
  RoutingMap map;
  map.column.assign(model.schema.size(), -1);
  map.level.resize(model.schema.size());

  std::vector<const Node*> nodes;
  collect_nodes(model.root.get(), nodes);
  for (const Node* nd : nodes) {
    if (!nd->split) continue;
    int c = nd->split->column;
    if (map.column[c] >= 0) continue;
    const ColumnSchema& sch = model.schema[c];
    int dc = ds.col_index(sch.name);
    if (dc < 0)
      throw InputError("prediction data lack the column '" + sch.name + "'");
    const Column& col = ds.col(dc);
    if (nd->split->kind == SplitKind::CategoricalSubset) {
      if (!col.is_factor())
        throw InputError("column '" + sch.name +
                         "' must be categorical to match the model");
      std::map<std::string, int> model_code;
      for (std::size_t l = 0; l < sch.levels.size(); ++l)
        model_code[sch.levels[l]] = static_cast<int>(l);
      map.level[c].assign(col.levels.size(), -1);
      for (std::size_t l = 0; l < col.levels.size(); ++l) {
        auto it = model_code.find(col.levels[l]);
        if (it != model_code.end()) map.level[c][l] = it->second;
      }
    } else if (col.is_factor()) {
      throw InputError("column '" + sch.name +
                       "' must be numeric to match the model");
    }
    map.column[c] = dc;
  }
  return map;
}

const Node* predict_leaf(const TreeModel& model, const RoutingMap& map,
                         const Dataset& ds, std::size_t row) {
  static const std::set<int> kNone;
  return walk_collapsed(model.root.get(), kNone, map, ds, row);
}

const Node* predict_leaf(const TreeModel& model, const Dataset& ds,
                         std::size_t row) {
  RoutingMap map = make_routing(model, ds);
  return predict_leaf(model, map, ds, row);
}

std::vector<const Node*> collect_leaves(const TreeModel& model) {
  std::vector<const Node*> all, out;
  collect_nodes(model.root.get(), all);
  for (const Node* nd : all)
    if (nd->is_leaf()) out.push_back(nd);
  std::sort(out.begin(), out.end(),
            [](const Node* a, const Node* b) { return a->id < b->id; });
  return out;
}

std::vector<const Node*> collect_internal(const TreeModel& model) {
  std::vector<const Node*> all, out;
  collect_nodes(model.root.get(), all);
  for (const Node* nd : all)
    if (!nd->is_leaf()) out.push_back(nd);
  std::sort(out.begin(), out.end(),
            [](const Node* a, const Node* b) { return a->id < b->id; });
  return out;
}

std::string serialize(const TreeModel& model) {
  const GrowConfig& cfg = model.config;
  json j;
  j["format"] = "subtree-model";
  j["version"] = 1;
  json c;
  c["method"] = to_string(cfg.method);
  c["censored"] = cfg.censored;
  c["max_depth"] = cfg.max_depth;
  c["min_node_size"] = cfg.min_node_size;
  c["min_level_count"] = cfg.min_level_count;
  c["gate"] = gate_name(cfg.gate);
  c["gate_alpha"] = cfg.gate_alpha;
  c["prune"] = cfg.prune == PruneKind::CostComplexityCV ? "cv" : "none";
  c["cv_folds"] = cfg.cv_folds;
  c["cv_se_factor"] = cfg.cv_se_factor;
  c["seed"] = cfg.seed;
  c["ph_iterations"] = cfg.ph_iterations;
  c["threads"] = cfg.threads;
  j["config"] = c;
  j["response"] = model.response_name;
  j["treatment"] = model.treatment_name;
  j["event"] = model.event_name;
  j["treatment_levels"] = model.treatment_levels;
  json schema = json::array();
  for (const ColumnSchema& s : model.schema) {
    json e;
    e["name"] = s.name;
    e["role"] = role_name(s.role);
    e["levels"] = s.levels;
    schema.push_back(e);
  }
  j["schema"] = schema;
  json baseline;
  baseline["times"] = model.baseline.times;
  baseline["cumhaz"] = model.baseline.cumhaz;
  j["baseline"] = baseline;
  json rbt = json::array();
  for (const std::vector<double>& b : model.root_beta_trace)
    rbt.push_back(jvec(b));
  j["root_beta_trace"] = rbt;
  json trace = json::array();
  for (const TraceEntry& t : model.trace) {
    json e;
    e["node"] = t.node_id;
    e["n"] = t.n;
    json scores = json::array();
    for (const auto& s : t.scores) {
      json q;
      q["column"] = s.first;
      q["q"] = jnum(s.second);
      scores.push_back(q);
    }
    e["scores"] = scores;
    trace.push_back(e);
  }
  j["trace"] = trace;
  json nodes = json::array();
  std::vector<const Node*> all;
  collect_nodes(model.root.get(), all);
  std::sort(all.begin(), all.end(),
            [](const Node* a, const Node* b) { return a->id < b->id; });
  for (const Node* nd : all) nodes.push_back(node_to_json(*nd));
  j["nodes"] = nodes;
  return j.dump(2) + "\n";
}

TreeModel deserialize(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw InputError(std::string("model file is not valid JSON: ") + e.what());
  }
  try {
    if (!j.is_object() || j.value("format", "") != "subtree-model")
      throw InputError("not a model file (missing format tag)");
    if (j.at("version").get<int>() != 1)
      throw InputError("unsupported model file version");
    TreeModel model;
    const json& c = j.at("config");
    model.config.method = method_from_string(c.at("method").get<std::string>());
    model.config.censored = c.at("censored").get<bool>();
    model.config.max_depth = c.at("max_depth").get<int>();
    model.config.min_node_size = c.at("min_node_size").get<int>();
    model.config.min_level_count = c.at("min_level_count").get<int>();
    model.config.gate = gate_from(c.at("gate").get<std::string>());
    model.config.gate_alpha = c.at("gate_alpha").get<double>();
    model.config.prune = c.at("prune").get<std::string>() == "cv"
                             ? PruneKind::CostComplexityCV
                             : PruneKind::None;
    model.config.cv_folds = c.at("cv_folds").get<int>();
    model.config.cv_se_factor = c.at("cv_se_factor").get<double>();
    model.config.seed = c.at("seed").get<std::uint64_t>();
    model.config.ph_iterations = c.at("ph_iterations").get<int>();
    model.config.threads = c.at("threads").get<int>();
    model.response_name = j.at("response").get<std::string>();
    model.treatment_name = j.at("treatment").get<std::string>();
    model.event_name = j.at("event").get<std::string>();
    model.treatment_levels =
        j.at("treatment_levels").get<std::vector<std::string>>();
    for (const json& s : j.at("schema")) {
      ColumnSchema sch;
      sch.name = s.at("name").get<std::string>();
      sch.role = role_from(s.at("role").get<std::string>());
      sch.levels = s.at("levels").get<std::vector<std::string>>();
      model.schema.push_back(std::move(sch));
    }
    model.baseline.times =
        j.at("baseline").at("times").get<std::vector<double>>();
    model.baseline.cumhaz =
        j.at("baseline").at("cumhaz").get<std::vector<double>>();
    for (const json& b : j.at("root_beta_trace"))
      model.root_beta_trace.push_back(vec_from(b));
    for (const json& t : j.at("trace")) {
      TraceEntry e;
      e.node_id = t.at("node").get<int>();
      e.n = t.at("n").get<int>();
      for (const json& s : t.at("scores"))
        e.scores.emplace_back(s.at("column").get<int>(),
                              num_from(s.at("q")));
      model.trace.push_back(std::move(e));
    }
    std::map<int, const json*> by_id;
    for (const json& nd : j.at("nodes")) by_id[nd.at("id").get<int>()] = &nd;
    model.root = node_from_json(by_id, 1);
    return model;
  } catch (const json::exception& e) {
    throw InputError(std::string("malformed model file: ") + e.what());
  }
}

void save_model(const TreeModel& model, const std::string& path) {
  write_file_atomic(path, serialize(model));
}

TreeModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open model file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize(buf.str());
}

std::string text_report(const TreeModel& model) {
  std::ostringstream os;
  os << "method " << to_string(model.config.method)
     << (model.config.censored ? " (censored)" : "") << "; response "
     << model.response_name;
  if (model.config.censored && !model.event_name.empty())
    os << " / " << model.event_name;
  os << "; treatment " << model.treatment_name << " ["
     << join(model.treatment_levels, ", ") << "]\n";
  if (model.trivial()) os << "no subgroups found\n";
  if (model.root) report_node(model, *model.root, 0, os);
  return os.str();
}

}  // namespace subtree
