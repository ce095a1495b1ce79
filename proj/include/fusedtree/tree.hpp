#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "fusedtree/errors.hpp"
#include "fusedtree/response.hpp"
#include "fusedtree/rng.hpp"
#include "fusedtree/survival.hpp"

namespace fusedtree {

enum class ColumnKind { continuous, ordinal, categorical };
enum class Impurity { mse, gini, ph_deviance };

inline Impurity default_impurity(Family f) {
  switch (f) {
    case Family::gaussian: return Impurity::mse;
    case Family::binomial: return Impurity::gini;
    case Family::cox: return Impurity::ph_deviance;
  }
  return Impurity::mse;
}

struct TreeConfig {
  Index min_node_size = 30;
  int max_depth = 6;
  std::vector<double> kappa_grid;  // empty: cost-complexity breakpoints, chosen by CV
  int cv_folds = 5;
  std::optional<Impurity> impurity;  // default follows the response family
  std::uint64_t seed = 0;

  void validate() const {
    if (min_node_size < 2) throw UsageError("min_node_size must be at least 2");
    if (max_depth < 0) throw UsageError("max_depth must be nonnegative");
    if (cv_folds < 2) throw UsageError("tree CV needs at least 2 folds");
    if (!std::is_sorted(kappa_grid.begin(), kappa_grid.end())) throw UsageError("kappa_grid must be sorted");
    for (double k : kappa_grid)
      if (!(k >= 0.0)) throw UsageError("kappa values must be nonnegative");
  }
};

/// Numeric rule z_l <= threshold, or categorical rule z_l in left_levels. Categorical levels
/// are numeric codes.
struct SplitRule {
  Index covariate = 0;
  bool categorical = false;
  double threshold = 0.0;
  std::vector<double> left_levels;
  std::vector<double> right_levels;
  bool unseen_left = true;  // routing of levels absent at fit time

  bool goes_left(double z) const {
    if (std::isnan(z)) throw DataError("missing value in split covariate " + std::to_string(covariate));
    if (!categorical) return z <= threshold;
    if (std::find(left_levels.begin(), left_levels.end(), z) != left_levels.end()) return true;
    if (std::find(right_levels.begin(), right_levels.end(), z) != right_levels.end()) return false;
    return unseen_left;
  }
};

struct TreeNode {
  bool leaf = true;
  SplitRule rule;
  int left = -1;
  int right = -1;
  Index leaf_id = -1;
  double value = 0.0;     // tree-stage constant
  Index n = 0;
  double risk = 0.0;      // summed node impurity
  double events = 0.0;    // survival: events and scaled exposure in the node
  double exposure = 0.0;
  int depth = 0;
};

class Tree {
public:
  std::vector<TreeNode> nodes;  // nodes[0] is the root
  std::vector<ColumnKind> kinds;
  Impurity impurity = Impurity::mse;
  double kappa = 0.0;

  Index n_leaves() const { return static_cast<Index>(leaf_nodes_.size()); }
  const std::vector<int>& leaf_nodes() const { return leaf_nodes_; }
  const TreeNode& leaf(Index m) const { return nodes[static_cast<std::size_t>(leaf_nodes_[static_cast<std::size_t>(m)])]; }

  /// Numbers the leaves 0..M-1 from left to right and drops unreachable nodes.
  void renumber() {
    std::vector<TreeNode> kept;
    leaf_nodes_.clear();
    if (nodes.empty()) return;
    // Pre-order copy, left child first.
    std::vector<int> stack{0};
    std::vector<int> remap(nodes.size(), -1);
    std::vector<int> order;
    while (!stack.empty()) {
      const int v = stack.back();
      stack.pop_back();
      remap[static_cast<std::size_t>(v)] = static_cast<int>(order.size());
      order.push_back(v);
      if (!nodes[static_cast<std::size_t>(v)].leaf) {
        stack.push_back(nodes[static_cast<std::size_t>(v)].right);
        stack.push_back(nodes[static_cast<std::size_t>(v)].left);
      }
    }
    for (int v : order) {
      TreeNode node = nodes[static_cast<std::size_t>(v)];
      if (!node.leaf) {
        node.left = remap[static_cast<std::size_t>(node.left)];
        node.right = remap[static_cast<std::size_t>(node.right)];
        node.leaf_id = -1;
      } else {
        node.left = node.right = -1;
        node.leaf_id = static_cast<Index>(leaf_nodes_.size());
        leaf_nodes_.push_back(static_cast<int>(kept.size()));
      }
      kept.push_back(std::move(node));
    }
    nodes = std::move(kept);
  }

  int route(std::span<const double> z) const {
    int v = 0;
    while (!nodes[static_cast<std::size_t>(v)].leaf) {
      const auto& node = nodes[static_cast<std::size_t>(v)];
      if (node.rule.covariate >= static_cast<Index>(z.size())) throw DataError("clinical row too short");
      v = node.rule.goes_left(z[static_cast<std::size_t>(node.rule.covariate)]) ? node.left : node.right;
    }
    return v;
  }

  Index assign_leaf(std::span<const double> z) const { return nodes[static_cast<std::size_t>(route(z))].leaf_id; }

  Index assign_leaf(const Matrix& Z, Index row) const {
    std::vector<double> z(static_cast<std::size_t>(Z.cols()));
    for (Index j = 0; j < Z.cols(); ++j) z[static_cast<std::size_t>(j)] = Z(row, j);
    return assign_leaf(z);
  }

  std::vector<Index> assign(const Matrix& Z) const {
    std::vector<Index> out(static_cast<std::size_t>(Z.rows()));
    for (Index i = 0; i < Z.rows(); ++i) out[static_cast<std::size_t>(i)] = assign_leaf(Z, i);
    return out;
  }

  int depth() const {
    int d = 0;
    for (const auto& n : nodes) d = std::max(d, n.depth);
    return d;
  }

  std::string render(const std::vector<std::string>& names = {}) const {
    std::ostringstream os;
    os.precision(6);
    auto name = [&](Index l) {
      return l < static_cast<Index>(names.size()) ? names[static_cast<std::size_t>(l)] : "z" + std::to_string(l + 1);
    };
    auto rec = [&](auto&& self, int v, int indent) -> void {
      const auto& node = nodes[static_cast<std::size_t>(v)];
      const std::string pad(static_cast<std::size_t>(indent) * 2, ' ');
      if (node.leaf) {
        os << pad << "leaf " << node.leaf_id << " (n=" << node.n << ", value=" << node.value << ")\n";
        return;
      }
      const auto& r = node.rule;
      if (r.categorical) {
        os << pad << name(r.covariate) << " in {";
        for (std::size_t k = 0; k < r.left_levels.size(); ++k) os << (k ? "," : "") << r.left_levels[k];
        os << "}\n";
      } else {
        os << pad << name(r.covariate) << " <= " << r.threshold << '\n';
      }
      self(self, node.left, indent + 1);
      if (r.categorical) {
        os << pad << "else\n";
      } else {
        os << pad << name(r.covariate) << " > " << r.threshold << '\n';
      }
      self(self, node.right, indent + 1);
    };
    if (!nodes.empty()) rec(rec, 0, 0);
    return os.str();
  }

  /// Root-only tree.
  static Tree stump(double value, Index n, std::vector<ColumnKind> kinds, Impurity imp) {
    Tree t;
    TreeNode root;
    root.value = value;
    root.n = n;
    t.nodes.push_back(root);
    t.kinds = std::move(kinds);
    t.impurity = imp;
    t.renumber();
    return t;
  }

private:
  std::vector<int> leaf_nodes_;
};

/// Per-row quantities the impurity needs. For survival data `scaled_time` is the root
/// Nelson-Aalen cumulative hazard at each observed time, which turns the node-level full
/// proportional hazards likelihood into a Poisson likelihood in (status, scaled_time).
struct TreeData {
  Impurity impurity = Impurity::mse;
  Vector y;            // response, or event indicator for survival
  Vector scaled_time;  // survival only
  Vector log_time;     // log(scaled_time) where status = 1, else 0
};

inline TreeData make_tree_data(const Response& r, std::optional<Impurity> imp = std::nullopt) {
  TreeData d;
  d.impurity = imp.value_or(default_impurity(r.family));
  if (d.impurity == Impurity::ph_deviance) {
    if (!r.is_survival()) throw UsageError("ph_deviance impurity requires a survival response");
    if (r.status.sum() <= 0.0) throw DataError("survival data without events");
    const BreslowFit na = breslow(Vector::Zero(r.size()), r.y, r.status);
    d.y = r.status;
    d.scaled_time = na.subject_cumhaz;
    d.log_time = Vector::Zero(r.size());
    for (Index i = 0; i < r.size(); ++i)
      if (d.y[i] > 0.0) d.log_time[i] = std::log(d.scaled_time[i]);
  } else {
    if (r.is_survival()) throw UsageError("survival response requires ph_deviance impurity");
    if (d.impurity == Impurity::gini && r.family != Family::binomial)
      throw UsageError("gini impurity requires a binary response");
    d.y = r.y;
  }
  return d;
}

namespace detail {

// Additive sufficient statistics of a set of rows. For mse, values are centered at an
// offset chosen by the caller (the parent mean) so constant responses give exact zeros.
struct NodeStats {
  double n = 0, s = 0, ss = 0, exposure = 0, logt = 0;

  void add(const TreeData& d, Index i, double offset) {
    n += 1.0;
    const double v = d.y[i] - (d.impurity == Impurity::mse ? offset : 0.0);
    s += v;
    ss += v * v;
    if (d.impurity == Impurity::ph_deviance) {
      exposure += d.scaled_time[i];
      logt += d.log_time[i];
    }
  }
  void remove(const TreeData& d, Index i, double offset) {
    n -= 1.0;
    const double v = d.y[i] - (d.impurity == Impurity::mse ? offset : 0.0);
    s -= v;
    ss -= v * v;
    if (d.impurity == Impurity::ph_deviance) {
      exposure -= d.scaled_time[i];
      logt -= d.log_time[i];
    }
  }
};

inline double node_impurity(const NodeStats& st, Impurity imp) {
  if (st.n <= 0.0) return 0.0;
  switch (imp) {
    case Impurity::mse: return std::max(0.0, st.ss - st.s * st.s / st.n);
    case Impurity::gini: return 2.0 * st.s * (st.n - st.s) / st.n;
    case Impurity::ph_deviance:
      if (st.s <= 0.0) return 0.0;
      return std::max(0.0, -2.0 * st.s * std::log(st.s / st.exposure) - 2.0 * st.logt);
  }
  return 0.0;
}

inline double node_value(const NodeStats& st, Impurity imp, double offset) {
  if (st.n <= 0.0) return 0.0;
  switch (imp) {
    case Impurity::mse: return offset + st.s / st.n;
    case Impurity::gini: return st.s / st.n;
    case Impurity::ph_deviance: return st.exposure > 0.0 ? st.s / st.exposure : 0.0;
  }
  return 0.0;
}

inline double mean_of(const TreeData& d, std::span<const Index> rows) {
  double s = 0.0;
  for (Index i : rows) s += d.y[i];
  return rows.empty() ? 0.0 : s / static_cast<double>(rows.size());
}

inline NodeStats stats_of(const TreeData& d, std::span<const Index> rows, double offset) {
  NodeStats st;
  for (Index i : rows) st.add(d, i, offset);
  return st;
}

}  // namespace detail

struct SplitCandidate {
  SplitRule rule;
  double gain = 0.0;       // (I_parent - I_left - I_right) / n_parent
  double reduction = 0.0;  // I_parent - I_left - I_right
  Index n_left = 0;
  Index n_right = 0;
};

/// Best admissible split of the node holding `rows`: both children keep at least
/// `min_node_size` rows and the summed impurity strictly decreases. Ties keep the first
/// candidate in (covariate, threshold) order.
inline std::optional<SplitCandidate> best_split(const Matrix& Z, const std::vector<ColumnKind>& kinds,
                                                const TreeData& d, std::span<const Index> rows,
                                                Index min_node_size) {
  const Index n = static_cast<Index>(rows.size());
  if (n < 2 * min_node_size) return std::nullopt;
  const double offset = detail::mean_of(d, rows);
  const detail::NodeStats parent = detail::stats_of(d, rows, offset);
  const double parent_imp = detail::node_impurity(parent, d.impurity);
  const double tol = 1e-12 * std::max(1.0, parent_imp);

  std::optional<SplitCandidate> best;
  std::vector<Index> sorted(rows.begin(), rows.end());
  std::vector<double> key(static_cast<std::size_t>(Z.rows()));

  for (Index l = 0; l < Z.cols(); ++l) {
    const bool cat = l < static_cast<Index>(kinds.size()) && kinds[static_cast<std::size_t>(l)] == ColumnKind::categorical;
    std::vector<double> levels;
    if (cat) {
      // Order levels by node statistic, then scan them as ordinal ranks.
      std::vector<std::pair<double, detail::NodeStats>> per_level;
      for (Index i : rows) {
        const double z = Z(i, l);
        auto it = std::find_if(per_level.begin(), per_level.end(), [&](const auto& p) { return p.first == z; });
        if (it == per_level.end()) {
          per_level.push_back({z, {}});
          it = per_level.end() - 1;
        }
        it->second.add(d, i, offset);
      }
      if (per_level.size() < 2) continue;
      std::sort(per_level.begin(), per_level.end(), [&](const auto& a, const auto& b) {
        const double va = detail::node_value(a.second, d.impurity, offset);
        const double vb = detail::node_value(b.second, d.impurity, offset);
        if (va != vb) return va < vb;
        return a.first < b.first;
      });
      for (const auto& p : per_level) levels.push_back(p.first);
      for (Index i : rows) {
        const double z = Z(i, l);
        key[static_cast<std::size_t>(i)] =
            static_cast<double>(std::find(levels.begin(), levels.end(), z) - levels.begin());
      }
    } else {
      for (Index i : rows) key[static_cast<std::size_t>(i)] = Z(i, l);
    }
    std::stable_sort(sorted.begin(), sorted.end(), [&](Index a, Index b) {
      return key[static_cast<std::size_t>(a)] < key[static_cast<std::size_t>(b)];
    });

    detail::NodeStats left, right = parent;
    for (Index k = 0; k + 1 < n; ++k) {
      const Index i = sorted[static_cast<std::size_t>(k)];
      left.add(d, i, offset);
      right.remove(d, i, offset);
      const double a = key[static_cast<std::size_t>(i)];
      const double b = key[static_cast<std::size_t>(sorted[static_cast<std::size_t>(k + 1)])];
      if (a == b) continue;
      if (k + 1 < min_node_size || n - k - 1 < min_node_size) continue;
      const double red = parent_imp - detail::node_impurity(left, d.impurity) - detail::node_impurity(right, d.impurity);
      if (!(red > tol)) continue;
      if (best && !(red > best->reduction)) continue;
      SplitCandidate c;
      c.rule.covariate = l;
      c.rule.categorical = cat;
      if (cat) {
        const auto cut = static_cast<std::size_t>(a) + 1;
        c.rule.left_levels.assign(levels.begin(), levels.begin() + static_cast<std::ptrdiff_t>(cut));
        c.rule.right_levels.assign(levels.begin() + static_cast<std::ptrdiff_t>(cut), levels.end());
        std::sort(c.rule.left_levels.begin(), c.rule.left_levels.end());
        std::sort(c.rule.right_levels.begin(), c.rule.right_levels.end());
      } else {
        c.rule.threshold = 0.5 * (a + b);
      }
      c.reduction = red;
      c.gain = red / static_cast<double>(n);
      c.n_left = k + 1;
      c.n_right = n - k - 1;
      c.rule.unseen_left = c.n_left >= c.n_right;
      best = std::move(c);
    }
  }
  return best;
}

inline std::optional<SplitCandidate> best_split(const Matrix& Z, const std::vector<ColumnKind>& kinds,
                                                const Response& r, std::span<const Index> rows,
                                                Index min_node_size, std::optional<Impurity> imp = std::nullopt) {
  return best_split(Z, kinds, make_tree_data(r, imp), rows, min_node_size);
}

/// Greedy recursive partitioning without pruning.
inline Tree grow_tree(const Matrix& Z, const std::vector<ColumnKind>& kinds, const TreeData& d,
                      std::span<const Index> rows, const TreeConfig& cfg) {
  Tree t;
  t.kinds = kinds;
  t.impurity = d.impurity;
  struct Pending {
    int node;
    std::vector<Index> rows;
  };
  auto make_node = [&](std::span<const Index> r, int depth) {
    TreeNode node;
    const double offset = detail::mean_of(d, r);
    const auto st = detail::stats_of(d, r, offset);
    node.n = static_cast<Index>(r.size());
    node.value = detail::node_value(st, d.impurity, offset);
    node.risk = detail::node_impurity(st, d.impurity);
    if (d.impurity == Impurity::ph_deviance) {
      node.events = st.s;
      node.exposure = st.exposure;
    }
    node.depth = depth;
    t.nodes.push_back(node);
    return static_cast<int>(t.nodes.size() - 1);
  };
  std::vector<Pending> stack;
  stack.push_back({make_node(rows, 0), std::vector<Index>(rows.begin(), rows.end())});
  while (!stack.empty()) {
    Pending p = std::move(stack.back());
    stack.pop_back();
    const int depth = t.nodes[static_cast<std::size_t>(p.node)].depth;
    if (depth >= cfg.max_depth) continue;
    auto split = best_split(Z, kinds, d, p.rows, cfg.min_node_size);
    if (!split) continue;
    std::vector<Index> lrows, rrows;
    for (Index i : p.rows) (split->rule.goes_left(Z(i, split->rule.covariate)) ? lrows : rrows).push_back(i);
    const int l = make_node(lrows, depth + 1);
    const int r = make_node(rrows, depth + 1);
    auto& node = t.nodes[static_cast<std::size_t>(p.node)];
    node.leaf = false;
    node.rule = split->rule;
    node.left = l;
    node.right = r;
    stack.push_back({r, std::move(rrows)});
    stack.push_back({l, std::move(lrows)});
  }
  t.renumber();
  return t;
}

/// Weakest-link breakpoints: the kappa values at which the cost-complexity optimal subtree
/// changes, in increasing order. The last one collapses the tree to its root.
inline std::vector<double> cost_complexity_breakpoints(const Tree& tree) {
  std::vector<double> out;
  if (tree.nodes.empty()) return out;
  const auto& nodes = tree.nodes;
  std::vector<char> collapsed(nodes.size(), 0);
  struct Link {
    int node;
    double g;
  };
  // Returns (subtree risk, leaves) and records g(t) for every internal node still present.
  auto visit = [&](auto&& self, int v, std::vector<Link>& links) -> std::pair<double, int> {
    const auto& node = nodes[static_cast<std::size_t>(v)];
    if (node.leaf || collapsed[static_cast<std::size_t>(v)]) return {node.risk, 1};
    auto [rl, nl] = self(self, node.left, links);
    auto [rr, nr] = self(self, node.right, links);
    const double r = rl + rr;
    const int leaves = nl + nr;
    links.push_back({v, (node.risk - r) / static_cast<double>(leaves - 1)});
    return {r, leaves};
  };
  while (!nodes[0].leaf && !collapsed[0]) {
    std::vector<Link> links;
    visit(visit, 0, links);
    double gmin = std::numeric_limits<double>::infinity();
    for (const auto& l : links) gmin = std::min(gmin, l.g);
    const double tol = 1e-12 * std::max(1.0, std::abs(gmin));
    for (const auto& l : links)
      if (l.g <= gmin + tol) collapsed[static_cast<std::size_t>(l.node)] = 1;
    out.push_back(std::max(gmin, 0.0));
  }
  return out;
}

/// Smallest subtree minimizing risk + kappa * leaves (collapse on ties).
inline Tree prune_at(const Tree& tree, double kappa) {
  Tree t = tree;
  auto rec = [&](auto&& self, int v) -> double {
    auto& node = t.nodes[static_cast<std::size_t>(v)];
    if (node.leaf) return node.risk + kappa;
    const double below = self(self, node.left) + self(self, node.right);
    const double here = node.risk + kappa;
    if (here <= below) {
      t.nodes[static_cast<std::size_t>(v)].leaf = true;
      return here;
    }
    return below;
  };
  if (!t.nodes.empty()) rec(rec, 0);
  t.kappa = kappa;
  t.renumber();
  return t;
}

/// Summed held-out loss of a tree's leaf constants on rows of (Z, d): squared error,
/// twice the squared error of the class probability (matching the Gini scale), or Poisson
/// deviance for survival. Survival leaf rates are shrunk toward `root_rate` with one
/// pseudo-event so held-out events in event-free leaves keep the deviance finite.
inline double heldout_tree_loss(const Tree& t, const Matrix& Z, const TreeData& d, std::span<const Index> rows,
                                double root_rate = 0.0) {
  double loss = 0.0;
  std::vector<double> z(static_cast<std::size_t>(Z.cols()));
  for (Index i : rows) {
    for (Index j = 0; j < Z.cols(); ++j) z[static_cast<std::size_t>(j)] = Z(i, j);
    const auto& node = t.nodes[static_cast<std::size_t>(t.route(z))];
    switch (d.impurity) {
      case Impurity::mse: loss += (d.y[i] - node.value) * (d.y[i] - node.value); break;
      case Impurity::gini: loss += 2.0 * (d.y[i] - node.value) * (d.y[i] - node.value); break;
      case Impurity::ph_deviance: {
        const double rate = (node.events + 1.0) / (node.exposure + 1.0 / root_rate);
        const double mu = rate * d.scaled_time[i];
        const double delta = d.y[i];
        loss += 2.0 * ((delta > 0.0 ? delta * std::log(delta / mu) : 0.0) - (delta - mu));
        break;
      }
    }
  }
  return loss;
}

namespace detail {

inline std::vector<std::vector<Index>> random_folds(Index n, int K, std::uint64_t seed) {
  std::vector<Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Index{0});
  Rng rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::vector<Index>> folds(static_cast<std::size_t>(K));
  for (std::size_t k = 0; k < perm.size(); ++k) folds[k % static_cast<std::size_t>(K)].push_back(perm[k]);
  return folds;
}

}  // namespace detail

/// Candidate kappa values for CV: 0 for the full tree, geometric midpoints between
/// consecutive breakpoints, and the final breakpoint (root only).
inline std::vector<double> kappa_candidates(const Tree& tree) {
  const auto bp = cost_complexity_breakpoints(tree);
  std::vector<double> grid{0.0};
  for (std::size_t k = 0; k + 1 < bp.size(); ++k) grid.push_back(std::sqrt(bp[k] * bp[k + 1]));
  if (!bp.empty()) grid.push_back(bp.back());
  return grid;
}

struct PruneReport {
  std::vector<double> kappa_grid;
  std::vector<double> cv_loss;  // summed held-out loss per kappa
  double kappa = 0.0;
};

/// Selects kappa by K-fold CV (minimum held-out loss, ties to the larger kappa) and
/// returns the full tree pruned at it. A singleton grid skips CV.
inline Tree prune(const Tree& full, const Matrix& Z, const TreeData& d, const TreeConfig& cfg,
                  PruneReport* report = nullptr) {
  const Index N = Z.rows();
  std::vector<double> grid = cfg.kappa_grid.empty() ? kappa_candidates(full) : cfg.kappa_grid;
  PruneReport rep;
  rep.kappa_grid = grid;
  rep.cv_loss.assign(grid.size(), 0.0);
  if (grid.size() == 1) {
    rep.kappa = grid[0];
  } else {
    const int K = static_cast<int>(std::min<Index>(cfg.cv_folds, N));
    const auto folds = detail::random_folds(N, K, derive_seed(cfg.seed, "prune-folds"));
    double root_rate = 0.0;
    if (d.impurity == Impurity::ph_deviance) root_rate = d.y.sum() / d.scaled_time.sum();
    for (int k = 0; k < K; ++k) {
      std::vector<char> in_test(static_cast<std::size_t>(N), 0);
      for (Index i : folds[static_cast<std::size_t>(k)]) in_test[static_cast<std::size_t>(i)] = 1;
      std::vector<Index> train;
      for (Index i = 0; i < N; ++i)
        if (!in_test[static_cast<std::size_t>(i)]) train.push_back(i);
      if (static_cast<Index>(train.size()) < cfg.min_node_size) continue;
      const Tree t = grow_tree(Z, full.kinds, d, train, cfg);
      for (std::size_t g = 0; g < grid.size(); ++g)
        rep.cv_loss[g] += heldout_tree_loss(prune_at(t, grid[g]), Z, d, folds[static_cast<std::size_t>(k)], root_rate);
    }
    std::size_t best = 0;
    for (std::size_t g = 1; g < grid.size(); ++g)
      if (rep.cv_loss[g] <= rep.cv_loss[best]) best = g;
    rep.kappa = grid[best];
  }
  if (report) *report = rep;
  return prune_at(full, rep.kappa);
}

/// Grows and prunes a tree on all rows.
inline Tree fit_tree(const Matrix& Z, const std::vector<ColumnKind>& kinds, const Response& r,
                     const TreeConfig& cfg, PruneReport* report = nullptr) {
  cfg.validate();
  if (Z.rows() == 0) throw DataError("cannot fit a tree to empty data");
  if (Z.rows() != r.size()) throw DataError("clinical rows and response length differ");
  if (Z.rows() < cfg.min_node_size) throw DataError("fewer rows than min_node_size");
  if (!kinds.empty() && static_cast<Index>(kinds.size()) != Z.cols()) throw DataError("column kinds do not match Z");
  for (Index i = 0; i < Z.rows(); ++i)
    for (Index j = 0; j < Z.cols(); ++j)
      if (std::isnan(Z(i, j))) throw DataError("missing clinical value at row " + std::to_string(i));
  const TreeData d = make_tree_data(r, cfg.impurity);
  std::vector<Index> rows(static_cast<std::size_t>(Z.rows()));
  std::iota(rows.begin(), rows.end(), Index{0});
  const std::vector<ColumnKind> k = kinds.empty() ? std::vector<ColumnKind>(static_cast<std::size_t>(Z.cols()), ColumnKind::continuous) : kinds;
  const Tree full = grow_tree(Z, k, d, rows, cfg);
  return prune(full, Z, d, cfg, report);
}

}  // namespace fusedtree
