#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "fusedtree/errors.hpp"
#include "fusedtree/metrics.hpp"
#include "fusedtree/model.hpp"
#include "fusedtree/pipeline.hpp"
#include "fusedtree/response.hpp"
#include "fusedtree/rng.hpp"
#include "fusedtree/survival.hpp"

namespace fusedtree {

struct GlobalTestResult {
  Index leaf = 0;
  double statistic = 0.0;
  double p_value = 1.0;
  int permutations = 0;
};

/// Null residuals of an intercept-only model: centered response for continuous and binary
/// data, martingale residuals delta_i - H0(t_i) (Nelson-Aalen) for survival data.
inline Vector null_residuals(const Response& r) {
  if (r.family == Family::cox) {
    const BreslowFit bf = breslow(Vector::Zero(r.size()), r.y, r.status);
    return r.status - bf.subject_cumhaz;
  }
  return (r.y.array() - r.y.mean()).matrix();
}

namespace detail {

// |X' r|^2 / (n * mean square of r)
inline double score_statistic(const Matrix& X, const Vector& r, double ss) {
  return (X.transpose() * r).squaredNorm() / ss;
}

}  // namespace detail

/// Permutation score test of "no omics effect" within one leaf. The statistic is
/// |X' r|^2 / (n s^2) with r the null residuals and s^2 their mean square; its
/// permutation p-value is (1 + #{S_b >= S}) / (1 + B). Permutation b draws from its own
/// derived stream, so the p-value does not depend on `threads`.
inline GlobalTestResult global_test(const Matrix& X, const Response& r, int B, std::uint64_t seed, Index leaf = 0,
                                    int threads = 1) {
  if (X.rows() != r.size()) throw DataError("global test: omics rows and response length differ");
  if (B < 1) throw UsageError("global test needs at least one permutation");
  GlobalTestResult out;
  out.leaf = leaf;
  out.permutations = B;
  const Index n = X.rows();
  std::vector<Index> cols;
  for (Index j = 0; j < X.cols(); ++j) {
    const double m = X.col(j).mean();
    if ((X.col(j).array() - m).abs().maxCoeff() > 1e-12 * std::max(1.0, std::abs(m))) cols.push_back(j);
  }
  const Vector res = null_residuals(r);
  const double ss = res.squaredNorm();
  if (n < 2 || cols.empty() || !(ss > 1e-24 * std::max(1.0, r.y.squaredNorm()))) return out;

  Matrix Xc(n, static_cast<Index>(cols.size()));
  for (std::size_t k = 0; k < cols.size(); ++k) Xc.col(static_cast<Index>(k)) = X.col(cols[k]);
  // The residuals sum to zero, so centering X would not change X' r.
  out.statistic = detail::score_statistic(Xc, res, ss);
  const double observed = out.statistic;
  const std::uint64_t leaf_seed = derive_seed(seed, "perm-leaf", static_cast<std::uint64_t>(leaf));

  std::vector<char> exceed(static_cast<std::size_t>(B), 0);
  auto work = [&](int lo, int hi) {
    Vector perm(n);
    std::vector<Index> idx(static_cast<std::size_t>(n));
    for (int b = lo; b < hi; ++b) {
      std::iota(idx.begin(), idx.end(), Index{0});
      Rng rng = make_rng(leaf_seed, "perm", static_cast<std::uint64_t>(b));
      std::shuffle(idx.begin(), idx.end(), rng);
      for (Index i = 0; i < n; ++i) perm[i] = res[idx[static_cast<std::size_t>(i)]];
      const double s = detail::score_statistic(Xc, perm, ss);
      exceed[static_cast<std::size_t>(b)] = s >= observed * (1.0 - 1e-12);
    }
  };
  const int T = std::clamp(threads, 1, B);
  if (T == 1) {
    work(0, B);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < T; ++t) pool.emplace_back(work, B * t / T, B * (t + 1) / T);
    for (auto& th : pool) th.join();
  }
  const double count = static_cast<double>(std::count(exceed.begin(), exceed.end(), 1));
  out.p_value = (1.0 + count) / (1.0 + static_cast<double>(B));
  return out;
}

/// Global test for every leaf of a fitted model on (training) data.
inline std::vector<GlobalTestResult> leaf_tests(const FusedTreeModel& model, const Dataset& data, int B,
                                                std::uint64_t seed, int threads = 1) {
  const Matrix Xs = model.omics.apply(data.X.cols() == 0 ? Matrix(data.size(), 0) : data.X);
  const auto leaves = model.tree.assign(data.Z);
  std::vector<GlobalTestResult> out;
  for (Index m = 0; m < model.n_leaves(); ++m) {
    std::vector<Index> rows;
    for (std::size_t i = 0; i < leaves.size(); ++i)
      if (leaves[i] == m) rows.push_back(static_cast<Index>(i));
    const Response rm = data.response.subset(rows);
    if (rows.size() < 3) {
      warn("leaf " + std::to_string(m) + " has fewer than 3 rows; global test skipped (p = 1)");
      out.push_back({m, 0.0, 1.0, 0});
      continue;
    }
    out.push_back(global_test(select_rows(Xs, rows), rm, B, seed, m, threads));
  }
  return out;
}

/// Test-set performance: PMSE (gaussian), mean deviance (binomial) or IPCW concordance
/// (survival).
inline MetricValue evaluate(const FusedTreeModel& model, const Dataset& test) {
  const Matrix X = test.X.cols() == 0 ? Matrix(test.size(), 0) : test.X;
  switch (model.family) {
    case Family::gaussian:
      return {MetricKind::pmse, pmse(test.response.y, model.predict(test.Z, X, PredictType::response)), std::nullopt};
    case Family::binomial:
      return {MetricKind::deviance, binomial_deviance(test.response.y, model.predict(test.Z, X, PredictType::response)),
              std::nullopt};
    case Family::cox:
      return {MetricKind::ipcw_c, ipcw_c(model.predict(test.Z, X, PredictType::link), test.response.y, test.response.status),
              std::nullopt};
  }
  throw UsageError("unknown family");
}

/// Index of the simplest model (largest index) whose performance is within `tolerance`
/// (relative) of the best one.
inline std::size_t select_model(const std::vector<double>& performance, bool higher_is_better,
                                double tolerance = 0.02) {
  if (performance.empty()) throw DataError("select_model: empty path");
  double best = higher_is_better ? -std::numeric_limits<double>::infinity() : std::numeric_limits<double>::infinity();
  for (double v : performance)
    if (std::isfinite(v)) best = higher_is_better ? std::max(best, v) : std::min(best, v);
  if (!std::isfinite(best)) return 0;
  const double bound = higher_is_better ? best - tolerance * std::abs(best) : best + tolerance * std::abs(best);
  std::size_t pick = 0;
  for (std::size_t k = 0; k < performance.size(); ++k) {
    const double v = performance[k];
    if (!std::isfinite(v)) continue;
    if (higher_is_better ? v >= bound : v <= bound) pick = k;
  }
  return pick;
}

struct RemovalStep {
  std::vector<Index> removed;  // leaves without omics block, in removal order
  FusedTreeModel model;
  MetricValue performance;
  bool partial = false;  // the test set misses at least one leaf
};

struct RemovalPath {
  std::vector<GlobalTestResult> tests;  // per leaf
  std::vector<Index> order;             // leaves by decreasing p-value
  std::vector<RemovalStep> steps;       // M + 1 nested models
  std::size_t selected = 0;
};

struct RemovalOptions {
  int permutations = 1999;
  std::uint64_t seed = 0;
  double tolerance = 0.02;
  int threads = 1;
  FitOptions fit;  // tree/given_tree/removed/penalties are overridden per step
};

/// Backward node removal: leaves are ordered by decreasing global-test p-value and their
/// omics blocks removed one at a time, re-tuning each reduced model with the same folds.
/// The full model is `model` itself.
inline RemovalPath removal_path(const FusedTreeModel& model, const Dataset& train, const Dataset& test,
                                const RemovalOptions& opt) {
  RemovalPath path;
  path.tests = leaf_tests(model, train, opt.permutations, derive_seed(opt.seed, "nodetest"), opt.threads);
  const Index M = model.n_leaves();
  path.order.resize(static_cast<std::size_t>(M));
  std::iota(path.order.begin(), path.order.end(), Index{0});
  std::stable_sort(path.order.begin(), path.order.end(), [&](Index a, Index b) {
    return path.tests[static_cast<std::size_t>(a)].p_value > path.tests[static_cast<std::size_t>(b)].p_value;
  });

  std::vector<char> present(static_cast<std::size_t>(M), 0);
  for (Index m : model.tree.assign(test.Z)) present[static_cast<std::size_t>(m)] = 1;
  const bool partial = std::find(present.begin(), present.end(), 0) != present.end();
  if (partial) warn("test set has no rows in some leaves; removal-path performance is partial");

  FusedTreeModel current = model;
  for (Index k = 0; k <= M; ++k) {
    RemovalStep step;
    step.removed.assign(path.order.begin(), path.order.begin() + k);
    if (k > 0) {
      FitOptions fo = opt.fit;
      fo.variant = model.variant;
      fo.seed = model.seed;
      fo.folds = model.folds > 1 ? model.folds : opt.fit.folds;
      fo.given_tree = model.tree;
      fo.removed = step.removed;
      fo.linear_clinical = !model.linear_columns.empty();
      fo.lambda.reset();
      fo.alpha.reset();
      fo.tune.log_lambda0 = std::log(current.lambda);
      if (std::isfinite(current.alpha) && current.alpha > 0.0) fo.tune.log_alpha0 = std::log(current.alpha);
      current = fit_model(train, fo).model;
    }
    step.model = current;
    step.performance = evaluate(current, test);
    step.partial = partial;
    path.steps.push_back(std::move(step));
  }
  std::vector<double> perf;
  for (const auto& s : path.steps) perf.push_back(s.performance.value);
  path.selected = select_model(perf, path.steps.front().performance.higher_is_better(), opt.tolerance);
  return path;
}

}  // namespace fusedtree
