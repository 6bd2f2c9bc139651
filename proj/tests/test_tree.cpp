#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "build_dataset.hpp"
#include "subtree/tree.hpp"

using namespace subtree;
using testutil::DsBuilder;
using testutil::nan_v;

namespace {

int hw_code(double u, double p) {
  double q0 = (1 - p) * (1 - p), q1 = q0 + 2 * p * (1 - p);
  if (u < q0) return 0;
  return u < q1 ? 1 : 2;
}

// Two-arm data with a treatment effect that flips sign at x1 > 0:
//   y = 1.9 + 0.2 z - 1.8 I(x1>0) + 3.6 I(x1>0) z + noise,
// plus pure-noise predictors. x1 is binary so the node-level grouping of x1
// coincides with the effect boundary and selection has high power.
Dataset predictive_data(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> y(n), x2(n), x3(n);
  std::vector<int> z(n), x1(n), c1(n);
  for (int i = 0; i < n; ++i) {
    z[i] = unif(rng) < 0.5 ? 1 : 0;
    x1[i] = unif(rng) < 0.4 ? 0 : 1;
    c1[i] = static_cast<int>(unif(rng) * 3.0);
    x2[i] = gauss(rng);
    x3[i] = gauss(rng);
    double pos = x1[i] > 0 ? 1.0 : 0.0;
    y[i] = 1.9 + 0.2 * z[i] - 1.8 * pos + 3.6 * pos * z[i] + gauss(rng);
  }
  std::vector<double> x1d(x1.begin(), x1.end());
  return DsBuilder()
      .response(y)
      .treatment(z, 2)
      .ordinal("x1", x1d)
      .ordinal("x2", x2)
      .ordinal("x3", x3)
      .categorical("c1", c1, 3)
      .build();
}

Dataset null_data(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> y(n), x1(n), x2(n);
  std::vector<int> z(n), c1(n);
  for (int i = 0; i < n; ++i) {
    z[i] = unif(rng) < 0.5 ? 1 : 0;
    y[i] = gauss(rng);
    x1[i] = gauss(rng);
    x2[i] = unif(rng) < 0.3 ? 1.0 : 0.0;
    c1[i] = static_cast<int>(unif(rng) * 4.0);
  }
  return DsBuilder()
      .response(y)
      .treatment(z, 2)
      .ordinal("x1", x1)
      .ordinal("x2", x2)
      .categorical("c1", c1, 4)
      .build();
}

void check_partition(const Node& nd) {
  if (nd.is_leaf()) return;
  REQUIRE(nd.left != nullptr);
  REQUIRE(nd.right != nullptr);
  CHECK(nd.left->id == 2 * nd.id);
  CHECK(nd.right->id == 2 * nd.id + 1);
  std::vector<int> merged = nd.left->rows;
  merged.insert(merged.end(), nd.right->rows.begin(), nd.right->rows.end());
  std::sort(merged.begin(), merged.end());
  std::vector<int> own = nd.rows;
  std::sort(own.begin(), own.end());
  CHECK(merged == own);
  check_partition(*nd.left);
  check_partition(*nd.right);
}

double leaf_sse_sum(const TreeModel& model) {
  double total = 0.0;
  for (const Node* leaf : collect_leaves(model)) {
    const NodeEstimates& e = leaf->est;
    for (std::size_t l = 0; l < e.count.size(); ++l)
      if (e.count[l] >= 2) total += e.sd[l] * e.sd[l] * (e.count[l] - 1);
  }
  return total;
}

}  // namespace

TEST_CASE("grow recovers a sign-flipping treatment interaction") {
  Dataset ds = predictive_data(400, 20240811);
  GrowConfig cfg;
  cfg.method = Method::Gs;
  cfg.max_depth = 3;
  cfg.min_node_size = 20;

  for (Method m : {Method::Gs, Method::Gi}) {
    cfg.method = m;
    TreeModel model = grow(ds, cfg);
    CAPTURE(to_string(m));
    REQUIRE_FALSE(model.trivial());
    CHECK(model.root->split->variable == "x1");
    CHECK(model.root->split->kind == SplitKind::OrdinalThreshold);
    // x1 in {0,1,2}: the effect flips between x1 = 0 and x1 > 0.
    CHECK(model.root->split->threshold > 0.0);
    CHECK(model.root->split->threshold < 1.0);
    check_partition(*model.root);
    const Node* lo = model.root->left.get();
    const Node* hi = model.root->right.get();
    CHECK(lo->est.d == doctest::Approx(0.2).epsilon(0.45));
    CHECK(hi->est.d == doctest::Approx(3.8).epsilon(0.12));
    // Splitting never increases the training SSE.
    double root_sse = 0.0;
    for (std::size_t l = 0; l < model.root->est.count.size(); ++l)
      root_sse += model.root->est.sd[l] * model.root->est.sd[l] *
                  (model.root->est.count[l] - 1);
    CHECK(leaf_sse_sum(model) <= root_sse + 1e-9);
  }
}

TEST_CASE("training rows route to their own leaves") {
  Dataset ds = predictive_data(300, 7);
  GrowConfig cfg;
  cfg.method = Method::Gs;
  cfg.gate = GateKind::Off;
  cfg.min_node_size = 15;
  TreeModel model = grow(ds, cfg);
  REQUIRE_FALSE(model.trivial());

  RoutingMap map = make_routing(model, ds);
  int covered = 0;
  for (const Node* leaf : collect_leaves(model)) {
    for (int r : leaf->rows) {
      const Node* hit = predict_leaf(model, map, ds, r);
      CHECK(hit->id == leaf->id);
      ++covered;
    }
  }
  CHECK(covered == 300);
}

TEST_CASE("depth, node size, and per-level floors hold") {
  Dataset ds = predictive_data(500, 99);
  GrowConfig cfg;
  cfg.method = Method::Gs;
  cfg.gate = GateKind::Off;
  cfg.max_depth = 3;
  cfg.min_node_size = 25;
  cfg.min_level_count = 8;
  TreeModel model = grow(ds, cfg);
  REQUIRE_FALSE(model.trivial());

  std::vector<const Node*> internal = collect_internal(model);
  for (const Node* nd : internal) {
    CHECK(nd->id < (1 << (cfg.max_depth + 1)));  // depth limit via ids
    const Node* kids[2] = {nd->left.get(), nd->right.get()};
    for (const Node* k : kids) {
      CHECK(k->n() >= cfg.min_node_size);
      for (std::size_t l = 0; l < nd->est.count.size(); ++l)
        if (nd->est.count[l] > 0)
          CHECK(k->est.count[l] >= cfg.min_level_count);
    }
  }

  cfg.max_depth = 0;
  TreeModel stump = grow(ds, cfg);
  CHECK(stump.trivial());
  CHECK(stump.root->n() == 500);

  cfg.max_depth = 1;
  TreeModel one = grow(ds, cfg);
  CHECK(collect_internal(one).size() <= 1);
}

TEST_CASE("the selection gate keeps null trees small") {
  GrowConfig cfg;
  cfg.method = Method::Gs;
  cfg.min_node_size = 15;

  int fixed_nontrivial = 0, sidak_nontrivial = 0, open_nontrivial = 0;
  for (int rep = 0; rep < 30; ++rep) {
    Dataset ds = null_data(150, 1300 + rep);
    cfg.gate = GateKind::Fixed;
    if (!grow(ds, cfg).trivial()) ++fixed_nontrivial;
    cfg.gate = GateKind::Sidak;
    if (!grow(ds, cfg).trivial()) ++sidak_nontrivial;
    cfg.gate = GateKind::Off;
    if (!grow(ds, cfg).trivial()) ++open_nontrivial;
  }
  // Per-variable 5% gates over 3-4 scored variables.
  CHECK(fixed_nontrivial <= 10);
  CHECK(sidak_nontrivial <= 6);
  CHECK(sidak_nontrivial <= fixed_nontrivial);
  // Without a gate the best split is almost always taken.
  CHECK(open_nontrivial >= 25);
}

TEST_CASE("cost-complexity pruning removes noise splits and keeps signal") {
  GrowConfig cfg;
  cfg.method = Method::Gs;
  cfg.gate = GateKind::Off;
  cfg.prune = PruneKind::CostComplexityCV;
  cfg.min_node_size = 15;

  int trivial_count = 0;
  for (int rep = 0; rep < 10; ++rep) {
    Dataset ds = null_data(200, 7100 + rep);
    cfg.seed = 40 + rep;
    TreeModel model = grow(ds, cfg);
    if (model.trivial()) ++trivial_count;
  }
  CHECK(trivial_count >= 7);

  Dataset ds = predictive_data(300, 424242);
  cfg.seed = 11;
  TreeModel model = grow(ds, cfg);
  REQUIRE_FALSE(model.trivial());
  CHECK(model.root->split->variable == "x1");
  check_partition(*model.root);
}

TEST_CASE("grow and prune are deterministic in the seed") {
  Dataset ds = predictive_data(250, 5150);
  GrowConfig cfg;
  cfg.method = Method::Gi;
  cfg.gate = GateKind::Off;
  cfg.prune = PruneKind::CostComplexityCV;
  cfg.min_node_size = 12;
  cfg.seed = 909;
  std::string a = serialize(grow(ds, cfg));
  std::string b = serialize(grow(ds, cfg));
  CHECK(a == b);
}

TEST_CASE("Gc splits on the class-swap variable and refuses bad input") {
  int n = 400;
  std::mt19937_64 rng(31415);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<double> y(n), x2(n);
  std::vector<int> z(n), x1(n);
  for (int i = 0; i < n; ++i) {
    z[i] = unif(rng) < 0.5 ? 1 : 0;
    x1[i] = hw_code(unif(rng), 0.5);
    x2[i] = unif(rng);
    int flip = unif(rng) < 0.1 ? 1 : 0;
    int base = x1[i] > 0 ? 1 - z[i] : z[i];
    y[i] = flip ? 1 - base : base;
  }
  std::vector<double> x1d(x1.begin(), x1.end());
  Dataset ds = DsBuilder()
                   .response(y)
                   .treatment(z, 2)
                   .ordinal("x1", x1d)
                   .ordinal("x2", x2)
                   .build();
  GrowConfig cfg;
  cfg.method = Method::Gc;
  cfg.min_node_size = 20;
  TreeModel model = grow(ds, cfg);
  REQUIRE_FALSE(model.trivial());
  CHECK(model.root->split->variable == "x1");
  check_partition(*model.root);
  // Opposite-sign treatment effects on the two sides.
  CHECK(model.root->left->est.d * model.root->right->est.d < 0.0);

  // Continuous responses have no class-swap representation.
  Dataset bad = predictive_data(100, 1);
  CHECK_THROWS_AS(grow(bad, cfg), InputError);
  // Censored Gc is undefined.
  cfg.censored = true;
  CHECK_THROWS_AS(grow(ds, cfg), InputError);
}

TEST_CASE("censored growth finds the interaction and estimates rates") {
  int n = 600;
  std::mt19937_64 rng(170);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::exponential_distribution<double> texp(1.0);
  std::vector<double> time(n), delta(n), x2(n);
  std::vector<int> z(n), x1(n), c1(n);
  for (int i = 0; i < n; ++i) {
    z[i] = unif(rng) < 0.5 ? 1 : 0;
    x1[i] = unif(rng) < 0.45 ? 0 : 1;
    c1[i] = static_cast<int>(unif(rng) * 3.0);
    x2[i] = unif(rng);
    double rate = 0.4 * std::exp(1.4 * (x1[i] > 0 ? 1.0 : 0.0) * z[i]);
    double t = texp(rng) / rate;
    double cens = 0.5 + 4.5 * unif(rng);
    time[i] = std::min(t, cens);
    delta[i] = t <= cens ? 1.0 : 0.0;
  }
  std::vector<double> x1d(x1.begin(), x1.end());
  Dataset ds = DsBuilder()
                   .response(time)
                   .treatment(z, 2)
                   .event(delta)
                   .ordinal("x1", x1d)
                   .ordinal("x2", x2)
                   .categorical("c1", c1, 3)
                   .build();
  GrowConfig cfg;
  cfg.method = Method::Gs;
  cfg.censored = true;
  cfg.max_depth = 2;
  cfg.min_node_size = 30;
  TreeModel model = grow(ds, cfg);
  REQUIRE_FALSE(model.trivial());
  CHECK(model.root->split->variable == "x1");
  CHECK(model.baseline.any_events());
  CHECK(model.root_beta_trace.size() == 5);
  check_partition(*model.root);

  const Node* lo = model.root->left.get();   // x1 = 0: no treatment effect
  const Node* hi = model.root->right.get();  // x1 > 0: rate ratio e^1.4
  CHECK(std::exp(lo->est.beta[1]) > 0.55);
  CHECK(std::exp(lo->est.beta[1]) < 1.75);
  CHECK(std::exp(hi->est.beta[1]) > 2.4);
  CHECK(std::exp(hi->est.beta[1]) < 7.0);
}

TEST_CASE("baseline refinement stabilizes the root rate ratio") {
  int n = 1500;
  std::mt19937_64 rng(2718);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::exponential_distribution<double> texp(1.0);
  std::vector<double> time(n), delta(n), x1(n);
  std::vector<int> z(n);
  for (int i = 0; i < n; ++i) {
    z[i] = unif(rng) < 0.5 ? 1 : 0;
    x1[i] = unif(rng);
    double rate = 0.6 * (z[i] ? 2.0 : 1.0);
    double t = texp(rng) / rate;
    double cens = 3.0 * unif(rng) + 0.2;
    time[i] = std::min(t, cens);
    delta[i] = t <= cens ? 1.0 : 0.0;
  }
  Dataset ds = DsBuilder()
                   .response(time)
                   .treatment(z, 2)
                   .event(delta)
                   .ordinal("x1", x1)
                   .build();
  GrowConfig cfg;
  cfg.method = Method::Gs;
  cfg.censored = true;
  cfg.max_depth = 0;  // rate estimation only
  TreeModel model = grow(ds, cfg);
  CHECK(model.trivial());
  REQUIRE(model.root_beta_trace.size() == 5);
  double b4 = model.root_beta_trace[3][1];
  double b5 = model.root_beta_trace[4][1];
  CHECK(std::fabs(b4 - b5) < 1e-3);
  CHECK(std::exp(b5) > 1.75);
  CHECK(std::exp(b5) < 2.3);
}

TEST_CASE("models survive a serialization round trip") {
  Dataset ds = predictive_data(300, 6006);
  GrowConfig cfg;
  cfg.method = Method::Gs;
  cfg.gate = GateKind::Off;
  cfg.min_node_size = 15;
  cfg.seed = 5;
  TreeModel model = grow(ds, cfg);
  REQUIRE_FALSE(model.trivial());

  std::string text = serialize(model);
  TreeModel back = deserialize(text);
  CHECK(serialize(back) == text);
  CHECK(back.config.method == Method::Gs);
  CHECK(back.treatment_levels == model.treatment_levels);
  CHECK(back.trace.size() == model.trace.size());

  RoutingMap map_a = make_routing(model, ds);
  RoutingMap map_b = make_routing(back, ds);
  for (std::size_t r = 0; r < ds.n; ++r)
    CHECK(predict_leaf(model, map_a, ds, r)->id ==
          predict_leaf(back, map_b, ds, r)->id);

  CHECK_THROWS_AS(deserialize("{}"), InputError);
  CHECK_THROWS_AS(deserialize("not json"), InputError);
}

TEST_CASE("prediction remaps levels by label and handles unseen input") {
  // y rewards level 1 of c1 under treatment, so the root splits on c1.
  int n = 90;
  std::vector<double> y(n);
  std::vector<int> z(n), c1(n);
  std::mt19937_64 rng(81);
  std::normal_distribution<double> gauss(0.0, 0.05);
  for (int i = 0; i < n; ++i) {
    z[i] = i % 2;
    c1[i] = i % 3;
    y[i] = (c1[i] == 1 ? 1.0 : 0.0) * (2.0 * z[i] - 1.0) * 5.0 + gauss(rng);
  }
  Dataset ds = DsBuilder()
                   .response(y)
                   .treatment(z, 2)
                   .categorical("c1", c1, 3)
                   .build();
  GrowConfig cfg;
  cfg.method = Method::Gs;
  cfg.gate = GateKind::Off;
  cfg.max_depth = 1;
  cfg.min_node_size = 5;
  cfg.min_level_count = 1;
  TreeModel model = grow(ds, cfg);
  REQUIRE_FALSE(model.trivial());
  REQUIRE(model.root->split->kind == SplitKind::CategoricalSubset);

  // Same rows, but the prediction table carries an extra level (code 3,
  // label c1_3) the model never saw.
  std::vector<int> c1_new = c1;
  c1_new[0] = 3;
  Dataset ds2 = DsBuilder()
                    .response(y)
                    .treatment(z, 2)
                    .categorical("c1", c1_new, 4)
                    .build();
  RoutingMap map = make_routing(model, ds2);
  const Node* unseen_leaf = predict_leaf(model, map, ds2, 0);
  const Node* miss_side = model.root->split->missing_goes_left
                              ? model.root->left.get()
                              : model.root->right.get();
  CHECK(unseen_leaf->id == miss_side->id);
  // All other rows keep their training assignment.
  RoutingMap map0 = make_routing(model, ds);
  for (std::size_t r = 1; r < ds.n; ++r)
    CHECK(predict_leaf(model, map, ds2, r)->id ==
          predict_leaf(model, map0, ds, r)->id);

  // Missing column in the prediction data is a hard error.
  Dataset ds3 = DsBuilder()
                    .response(y)
                    .treatment(z, 2)
                    .categorical("other", c1, 3)
                    .build();
  CHECK_THROWS_AS(make_routing(model, ds3), InputError);
}

TEST_CASE("missing values follow the trained direction at prediction time") {
  int n = 120;
  std::mt19937_64 rng(5555);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 0.3);
  std::vector<double> y(n), x1(n);
  std::vector<int> z(n);
  for (int i = 0; i < n; ++i) {
    z[i] = i % 2;
    x1[i] = unif(rng) < 0.12 ? nan_v() : unif(rng) * 4.0;
    double pos = (!std::isnan(x1[i]) && x1[i] > 2.0) ? 1.0 : 0.0;
    y[i] = pos * (2.0 * z[i] - 1.0) * 4.0 + gauss(rng);
  }
  Dataset ds = DsBuilder().response(y).treatment(z, 2).ordinal("x1", x1).build();
  GrowConfig cfg;
  cfg.method = Method::Gs;
  cfg.gate = GateKind::Off;
  cfg.max_depth = 1;
  cfg.min_node_size = 10;
  TreeModel model = grow(ds, cfg);
  REQUIRE_FALSE(model.trivial());

  RoutingMap map = make_routing(model, ds);
  const SplitRule& rule = *model.root->split;
  for (std::size_t r = 0; r < ds.n; ++r) {
    const Node* leaf = predict_leaf(model, map, ds, r);
    bool left = rule.routes_left(ds, r);
    CHECK(leaf->id == (left ? 2 : 3));
    if (std::isnan(x1[r]))
      CHECK(left == rule.missing_goes_left);
  }
}

TEST_CASE("reports name the splits and flag trivial trees") {
  Dataset ds = predictive_data(300, 17);
  GrowConfig cfg;
  cfg.method = Method::Gs;
  cfg.min_node_size = 15;
  TreeModel model = grow(ds, cfg);
  REQUIRE_FALSE(model.trivial());
  std::string rep = text_report(model);
  CHECK(rep.find("node 1") != std::string::npos);
  CHECK(rep.find("left if x1 <= ") != std::string::npos);
  CHECK(rep.find("no subgroups found") == std::string::npos);

  cfg.max_depth = 0;
  std::string trivial = text_report(grow(ds, cfg));
  CHECK(trivial.find("no subgroups found") != std::string::npos);
}

TEST_CASE("grow validates roles and configuration") {
  Dataset ds = predictive_data(60, 3);
  GrowConfig cfg;
  cfg.method = Method::Gs;

  GrowConfig bad = cfg;
  bad.gate_alpha = 1.5;
  CHECK_THROWS_AS(grow(ds, bad), InputError);
  bad = cfg;
  bad.max_depth = -1;
  CHECK_THROWS_AS(grow(ds, bad), InputError);
  bad = cfg;
  bad.censored = true;  // no event column in ds
  CHECK_THROWS_AS(grow(ds, bad), InputError);
  bad = cfg;
  bad.ph_iterations = 0;
  CHECK_THROWS_AS(grow(ds, bad), InputError);
}
