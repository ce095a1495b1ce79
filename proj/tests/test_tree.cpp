#include <gtest/gtest.h>

#include <random>
#include <set>

#include "fusedtree/tree.hpp"
#include "test_util.hpp"

using namespace fusedtree;
using namespace testutil;

namespace {

std::vector<Index> all_rows(Index n) {
  std::vector<Index> r(static_cast<std::size_t>(n));
  std::iota(r.begin(), r.end(), Index{0});
  return r;
}

double ss(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s;
}

// Exhaustive enumeration of numeric (covariate, midpoint) splits with the squared-error
// criterion; returns (best reduction, covariate, threshold).
std::tuple<double, Index, double> brute_force_mse(const Matrix& Z, const Vector& y, Index min_node) {
  std::vector<double> all(y.data(), y.data() + y.size());
  const double parent = ss(all);
  double best = 0.0;
  Index bl = -1;
  double bt = 0.0;
  for (Index l = 0; l < Z.cols(); ++l) {
    std::set<double> vals(Z.col(l).data(), Z.col(l).data() + Z.rows());
    std::vector<double> v(vals.begin(), vals.end());
    for (std::size_t k = 0; k + 1 < v.size(); ++k) {
      const double thr = 0.5 * (v[k] + v[k + 1]);
      std::vector<double> L, R;
      for (Index i = 0; i < Z.rows(); ++i) (Z(i, l) <= thr ? L : R).push_back(y[i]);
      if (static_cast<Index>(L.size()) < min_node || static_cast<Index>(R.size()) < min_node) continue;
      const double red = parent - ss(L) - ss(R);
      if (red > best + 1e-12) {
        best = red;
        bl = l;
        bt = thr;
      }
    }
  }
  return {best, bl, bt};
}

}  // namespace

TEST(BestSplit, PerfectSeparation) {
  Matrix Z(4, 1);
  Z << 0.1, 0.2, 0.8, 0.9;
  Vector y(4);
  y << 0, 0, 10, 10;
  const auto s = best_split(Z, {ColumnKind::continuous}, Response::gaussian(y), all_rows(4), 2);
  ASSERT_TRUE(s.has_value());
  EXPECT_EQ(s->rule.covariate, 0);
  EXPECT_DOUBLE_EQ(s->rule.threshold, 0.5);
  EXPECT_DOUBLE_EQ(s->gain, 25.0);
}

TEST(BestSplit, ConstantResponseHasNoSplit) {
  std::mt19937_64 rng(1);
  const Matrix Z = randn(20, 2, rng);
  const auto s = best_split(Z, {}, Response::gaussian(Vector::Constant(20, 3.7)), all_rows(20), 2);
  EXPECT_FALSE(s.has_value());
}

TEST(BestSplit, TooFewRows) {
  Matrix Z(3, 1);
  Z << 1, 2, 3;
  Vector y(3);
  y << 0, 1, 5;
  EXPECT_FALSE(best_split(Z, {}, Response::gaussian(y), all_rows(3), 2).has_value());
}

TEST(BestSplit, AgreesWithExhaustiveEnumeration) {
  std::mt19937_64 rng(7);
  for (int rep = 0; rep < 40; ++rep) {
    const Index N = rint(rng, 20, 60), q = rint(rng, 1, 3);
    Matrix Z(N, q);
    for (Index i = 0; i < N; ++i)
      for (Index l = 0; l < q; ++l) Z(i, l) = std::round(runif(rng) * 30.0) / 30.0;
    Vector y = randn(N, rng) + 2.0 * Z.col(0);
    const Index min_node = 5;
    const auto s = best_split(Z, {}, Response::gaussian(y), all_rows(N), min_node);
    const auto [red, l, thr] = brute_force_mse(Z, y, min_node);
    if (l < 0) {
      EXPECT_FALSE(s.has_value());
      continue;
    }
    ASSERT_TRUE(s.has_value());
    EXPECT_NEAR(s->reduction, red, 1e-9);
    EXPECT_EQ(s->rule.covariate, l);
    EXPECT_DOUBLE_EQ(s->rule.threshold, thr);
  }
}

TEST(BestSplit, GiniScale) {
  Matrix Z(6, 1);
  Z << 1, 2, 3, 4, 5, 6;
  Vector y(6);
  y << 0, 0, 0, 1, 1, 1;
  const auto s = best_split(Z, {}, Response::binomial(y), all_rows(6), 2);
  ASSERT_TRUE(s.has_value());
  EXPECT_DOUBLE_EQ(s->rule.threshold, 3.5);
  // parent 2*3*3/6 = 3, children pure
  EXPECT_NEAR(s->reduction, 3.0, 1e-12);
}

TEST(BestSplit, CategoricalOrdersLevels) {
  Matrix Z(8, 1);
  Z << 0, 0, 1, 1, 2, 2, 3, 3;
  Vector y(8);
  y << 5, 5, 0, 0, 5, 5, 0, 0;
  const auto s = best_split(Z, {ColumnKind::categorical}, Response::gaussian(y), all_rows(8), 2);
  ASSERT_TRUE(s.has_value());
  EXPECT_TRUE(s->rule.categorical);
  EXPECT_EQ(s->rule.left_levels, (std::vector<double>{1, 3}));
  EXPECT_EQ(s->rule.right_levels, (std::vector<double>{0, 2}));
  EXPECT_NEAR(s->reduction, 50.0, 1e-12);
}

// Poisson deviance on root Nelson-Aalen scaled times, computed from scratch.
double ph_deviance_oracle(const Vector& t, const Vector& d, const std::vector<Index>& rows) {
  const Index N = t.size();
  double D = 0.0, T = 0.0, logs = 0.0;
  for (Index i : rows) {
    double H = 0.0;
    for (Index k = 0; k < N; ++k) {
      if (d[k] == 0.0 || t[k] > t[i]) continue;
      double risk = 0.0;
      for (Index j = 0; j < N; ++j) risk += t[j] >= t[k] ? 1.0 : 0.0;
      H += 1.0 / risk;
    }
    D += d[i];
    T += H;
    if (d[i] > 0.0) logs += std::log(H);
  }
  if (D == 0.0) return 0.0;
  return -2.0 * D * std::log(D / T) - 2.0 * logs;
}

TEST(BestSplit, SurvivalDeviance) {
  Matrix Z(8, 1);
  Z << 1, 2, 3, 4, 5, 6, 7, 8;
  Vector t(8), d(8);
  t << 1, 2, 3, 4, 9, 10, 11, 12;
  d << 1, 1, 1, 1, 1, 0, 0, 0;
  const auto s = best_split(Z, {}, Response::survival(t, d), all_rows(8), 2);
  ASSERT_TRUE(s.has_value());
  // all events left of 5.5, all censored right
  EXPECT_DOUBLE_EQ(s->rule.threshold, 5.5);
}

TEST(BestSplit, SurvivalAgreesWithExhaustiveEnumeration) {
  std::mt19937_64 rng(21);
  for (int rep = 0; rep < 15; ++rep) {
    const Index N = 40;
    Matrix Z(N, 2);
    Vector t(N), d(N);
    for (Index i = 0; i < N; ++i) {
      Z(i, 0) = runif(rng);
      Z(i, 1) = runif(rng);
      t[i] = -std::log(runif(rng)) / (Z(i, 0) > 0.5 ? 3.0 : 1.0);
      d[i] = runif(rng) < 0.75 ? 1.0 : 0.0;
    }
    const auto rows = all_rows(N);
    const double parent = ph_deviance_oracle(t, d, rows);
    double best = 0.0;
    for (Index l = 0; l < 2; ++l)
      for (Index k = 0; k < N; ++k) {
        const double thr = Z(k, l);
        std::vector<Index> L, R;
        for (Index i = 0; i < N; ++i) (Z(i, l) <= thr ? L : R).push_back(i);
        if (L.size() < 5 || R.size() < 5) continue;
        best = std::max(best, parent - ph_deviance_oracle(t, d, L) - ph_deviance_oracle(t, d, R));
      }
    const auto s = best_split(Z, {}, Response::survival(t, d), rows, 5);
    ASSERT_TRUE(s.has_value());
    EXPECT_NEAR(s->reduction, best, 1e-8);
  }
}

TEST(FitTree, ConstantResponseGivesStump) {
  std::mt19937_64 rng(2);
  const Matrix Z = randn(30, 2, rng);
  TreeConfig cfg;
  const Tree t = fit_tree(Z, {}, Response::gaussian(Vector::Constant(30, 1.0)), cfg);
  EXPECT_EQ(t.n_leaves(), 1);
  EXPECT_EQ(t.assign_leaf(Z, 3), 0);
}

TEST(FitTree, DepthAndLeafSizes) {
  std::mt19937_64 rng(3);
  const Index N = 60;
  const Matrix Z = randn(N, 3, rng);
  const Vector y = randn(N, rng);
  TreeConfig cfg;
  cfg.min_node_size = 5;
  cfg.max_depth = 2;
  cfg.kappa_grid = {0.0};
  const Tree t = fit_tree(Z, {}, Response::gaussian(y), cfg);
  EXPECT_LE(t.depth(), 2);
  Index total = 0;
  for (Index m = 0; m < t.n_leaves(); ++m) {
    EXPECT_GE(t.leaf(m).n, 5);
    total += t.leaf(m).n;
  }
  EXPECT_EQ(total, N);
  // re-routing reproduces the stored counts
  std::vector<Index> count(static_cast<std::size_t>(t.n_leaves()), 0);
  for (Index m : t.assign(Z)) ++count[static_cast<std::size_t>(m)];
  for (Index m = 0; m < t.n_leaves(); ++m) EXPECT_EQ(count[static_cast<std::size_t>(m)], t.leaf(m).n);
}

TEST(FitTree, EverySplitReducesImpurity) {
  std::mt19937_64 rng(13);
  const Index N = 300;
  Matrix Z(N, 3);
  for (Index i = 0; i < N; ++i)
    for (Index l = 0; l < 3; ++l) Z(i, l) = runif(rng);
  Vector y = randn(N, rng);
  for (Index i = 0; i < N; ++i) y[i] += Z(i, 0) > 0.5 ? 4.0 : 0.0;
  TreeConfig cfg;
  cfg.kappa_grid = {0.0};
  const Tree t = fit_tree(Z, {}, Response::gaussian(y), cfg);
  for (const auto& node : t.nodes) {
    if (node.leaf) continue;
    EXPECT_LT(t.nodes[static_cast<std::size_t>(node.left)].risk + t.nodes[static_cast<std::size_t>(node.right)].risk,
              node.risk - 1e-12);
  }
  EXPECT_EQ(t.nodes[0].rule.covariate, 0);
  EXPECT_NEAR(t.nodes[0].rule.threshold, 0.5, 0.05);
}

TEST(FitTree, RejectsBadInput) {
  TreeConfig cfg;
  EXPECT_THROW(fit_tree(Matrix(0, 2), {}, Response::gaussian(Vector()), cfg), DataError);
  Matrix Z = Matrix::Ones(40, 1);
  Z(3, 0) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(fit_tree(Z, {}, Response::gaussian(Vector::Ones(40)), cfg), DataError);
  EXPECT_THROW(fit_tree(Matrix::Ones(40, 1), {}, Response::survival(Vector::Ones(40), Vector::Zero(40)), cfg), DataError);
}

TEST(Prune, SingletonZeroGridKeepsTree) {
  std::mt19937_64 rng(5);
  const Index N = 200;
  const Matrix Z = randn(N, 2, rng);
  const Vector y = randn(N, rng);
  TreeConfig cfg;
  cfg.min_node_size = 10;
  const TreeData d = make_tree_data(Response::gaussian(y));
  const Tree full = grow_tree(Z, {ColumnKind::continuous, ColumnKind::continuous}, d, all_rows(N), cfg);
  cfg.kappa_grid = {0.0};
  const Tree p = prune(full, Z, d, cfg);
  EXPECT_EQ(p.n_leaves(), full.n_leaves());
  cfg.kappa_grid = {full.nodes[0].risk + 1.0};
  EXPECT_EQ(prune(full, Z, d, cfg).n_leaves(), 1);
}

TEST(Prune, MonotoneInKappa) {
  std::mt19937_64 rng(6);
  const Index N = 200;
  const Matrix Z = randn(N, 3, rng);
  const Vector y = randn(N, rng) + Z.col(0);
  TreeConfig cfg;
  cfg.min_node_size = 8;
  const TreeData d = make_tree_data(Response::gaussian(y));
  const Tree full = grow_tree(Z, std::vector<ColumnKind>(3, ColumnKind::continuous), d, all_rows(N), cfg);
  const auto bp = cost_complexity_breakpoints(full);
  ASSERT_FALSE(bp.empty());
  EXPECT_TRUE(std::is_sorted(bp.begin(), bp.end()));
  Index prev = full.n_leaves();
  for (double k : kappa_candidates(full)) {
    const Tree t = prune_at(full, k);
    EXPECT_LE(t.n_leaves(), prev);
    prev = t.n_leaves();
    // every pruned leaf region is a region of a node in the full tree
    for (Index m = 0; m < t.n_leaves(); ++m) {
      bool found = false;
      for (const auto& node : full.nodes) found |= node.n == t.leaf(m).n && node.risk == t.leaf(m).risk;
      EXPECT_TRUE(found);
    }
  }
  EXPECT_EQ(prune_at(full, bp.back()).n_leaves(), 1);
}

TEST(Prune, CostComplexityAgreesWithEnumeration) {
  // For each candidate kappa, the pruned tree's cost is no larger than that of any
  // subtree obtained by collapsing one further internal node or keeping the full tree.
  std::mt19937_64 rng(16);
  const Index N = 150;
  const Matrix Z = randn(N, 2, rng);
  const Vector y = randn(N, rng) + 2.0 * (Z.col(1).array() > 0).cast<double>().matrix();
  TreeConfig cfg;
  cfg.min_node_size = 10;
  const TreeData d = make_tree_data(Response::gaussian(y));
  const Tree full = grow_tree(Z, std::vector<ColumnKind>(2, ColumnKind::continuous), d, all_rows(N), cfg);
  auto cost = [](const Tree& t, double k) {
    double c = 0.0;
    for (Index m = 0; m < t.n_leaves(); ++m) c += t.leaf(m).risk + k;
    return c;
  };
  for (double k : kappa_candidates(full)) {
    const Tree best = prune_at(full, k);
    EXPECT_LE(cost(best, k), cost(full, k) + 1e-9);
    for (std::size_t v = 0; v < full.nodes.size(); ++v) {
      if (full.nodes[v].leaf) continue;
      Tree alt = full;
      alt.nodes[v].leaf = true;
      alt.renumber();
      EXPECT_LE(cost(best, k), cost(alt, k) + 1e-9);
    }
  }
}

TEST(AssignLeaf, RoutingRules) {
  Tree t;
  t.kinds = {ColumnKind::continuous};
  TreeNode root;
  root.leaf = false;
  root.rule.threshold = 0.5;
  root.left = 1;
  root.right = 2;
  TreeNode a, b;
  t.nodes = {root, a, b};
  t.renumber();
  EXPECT_EQ(t.assign_leaf(std::vector<double>{0.3}), 0);
  EXPECT_EQ(t.assign_leaf(std::vector<double>{0.7}), 1);
  EXPECT_THROW(t.assign_leaf(std::vector<double>{std::numeric_limits<double>::quiet_NaN()}), DataError);
  const Tree s = Tree::stump(1.0, 10, {ColumnKind::continuous}, Impurity::mse);
  EXPECT_EQ(s.assign_leaf(std::vector<double>{42.0}), 0);
}

TEST(AssignLeaf, UnseenLevelGoesToLargerChild) {
  SplitRule r;
  r.categorical = true;
  r.left_levels = {1};
  r.right_levels = {2, 3};
  r.unseen_left = false;
  EXPECT_TRUE(r.goes_left(1));
  EXPECT_FALSE(r.goes_left(3));
  EXPECT_FALSE(r.goes_left(99));
}

TEST(Render, ShowsSplits) {
  Matrix Z(4, 1);
  Z << 0.1, 0.2, 0.8, 0.9;
  Vector y(4);
  y << 0, 0, 10, 10;
  TreeConfig cfg;
  cfg.min_node_size = 2;
  cfg.kappa_grid = {0.0};
  const Tree t = fit_tree(Z, {}, Response::gaussian(y), cfg);
  const std::string s = t.render({"age"});
  EXPECT_NE(s.find("age <= 0.5"), std::string::npos);
  EXPECT_NE(s.find("leaf 1"), std::string::npos);
}
