#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "fusedtree/errors.hpp"
#include "fusedtree/estimator.hpp"
#include "fusedtree/model.hpp"
#include "fusedtree/penalty.hpp"
#include "fusedtree/response.hpp"
#include "fusedtree/rng.hpp"
#include "fusedtree/tree.hpp"
#include "fusedtree/tuning.hpp"

namespace fusedtree {

/// Clinical covariates, omics covariates and outcome of the same N subjects.
struct Dataset {
  Matrix Z;
  std::vector<ColumnKind> kinds;  // empty: all continuous
  std::vector<std::string> clinical_names;
  Matrix X;
  std::vector<std::string> omics_names;
  Response response;

  Index size() const { return response.size(); }

  std::vector<ColumnKind> column_kinds() const {
    return kinds.empty() ? std::vector<ColumnKind>(static_cast<std::size_t>(Z.cols()), ColumnKind::continuous) : kinds;
  }

  void validate() const {
    const Index N = size();
    if (N == 0) throw DataError("empty dataset");
    if (Z.rows() != N) throw DataError("clinical matrix has " + std::to_string(Z.rows()) + " rows, response has " + std::to_string(N));
    if (X.rows() != N && !(X.cols() == 0)) throw DataError("omics matrix has " + std::to_string(X.rows()) + " rows, response has " + std::to_string(N));
    if (!kinds.empty() && static_cast<Index>(kinds.size()) != Z.cols()) throw DataError("column kinds do not match the clinical matrix");
    if (!Z.allFinite()) throw DataError("clinical matrix contains missing or non-finite values");
    if (!X.allFinite()) throw DataError("omics matrix contains missing or non-finite values");
    if (!response.y.allFinite()) throw DataError("response contains missing or non-finite values");
  }

  Dataset subset(std::span<const Index> rows) const {
    Dataset d{select_rows(Z, rows), kinds, clinical_names, Matrix(), omics_names, response.subset(rows)};
    d.X = X.rows() == Z.rows() ? select_rows(X, rows) : Matrix(static_cast<Index>(rows.size()), 0);
    return d;
  }
};

struct FitOptions {
  TreeConfig tree;
  int folds = 5;
  std::uint64_t seed = 0;
  Variant variant = Variant::fusedtree;
  std::optional<double> lambda;  // fixed penalties skip tuning
  std::optional<double> alpha;
  bool linear_clinical = true;  // continuous clinical columns enter linearly (centered)
  TuneOptions tune;
  IrlsOptions irls;
  std::vector<Index> removed;     // leaves fitted without an omics block
  std::optional<Tree> given_tree;  // skip tree fitting (oracle, refits)
};

struct FitReport {
  PruneReport prune;
  std::optional<TuneResult> tuning;
  std::vector<Index> leaf_sizes;
  double cv_objective = std::numeric_limits<double>::quiet_NaN();
  double train_loss = 0.0;  // MSE, mean binomial deviance, or minus mean Cox log-likelihood
  int iterations = 0;
  bool converged = true;
};

struct FitResult {
  FusedTreeModel model;
  FitReport report;
};

namespace detail {

inline double fixed_alpha_of(Variant v) {
  switch (v) {
    case Variant::zerofus:
    case Variant::ridge: return 0.0;
    case Variant::fulfus: return std::numeric_limits<double>::infinity();
    default: return std::numeric_limits<double>::quiet_NaN();
  }
}

inline double training_loss(const Response& r, const Vector& eta) {
  const double n = static_cast<double>(r.size());
  switch (r.family) {
    case Family::gaussian: return (r.y - eta).squaredNorm() / n;
    case Family::binomial: return -2.0 * binomial_loglik(eta, r.y) / n;
    case Family::cox: return -cox_loglik(eta, r.y, r.status) / n;
  }
  return 0.0;
}

}  // namespace detail

/// Design of `data` under a fitted model's tree, standardization, linear clinical columns
/// and removed leaves.
inline BlockDesign model_design(const FusedTreeModel& model, const Dataset& data) {
  const Matrix Xs = model.omics.apply(data.X.cols() == 0 ? Matrix(data.size(), 0) : data.X);
  const Matrix L = model.linear_design(data.Z);
  const auto leaves = model.tree.assign(data.Z);
  return build_block_design(Xs, leaves, model.n_leaves(), &L, model.removed);
}

/// Full pipeline: tree (grow + prune), design with linear clinical terms, stratified folds,
/// penalty tuning and the final fit.
inline FitResult fit_model(const Dataset& data, const FitOptions& opt) {
  data.validate();
  const Response& r = data.response;
  const Index N = data.size();
  const auto kinds = data.column_kinds();
  if (opt.folds < 2) throw UsageError("at least 2 folds are required");
  if (r.family == Family::cox && r.status.sum() <= 0.0) throw DataError("survival data without events");

  FitResult out;
  FusedTreeModel& model = out.model;
  model.family = r.family;
  model.variant = opt.variant;
  model.seed = opt.seed;
  model.clinical_names = data.clinical_names;
  model.omics_names = data.omics_names;

  // Tree.
  const Impurity imp = opt.tree.impurity.value_or(default_impurity(r.family));
  if (opt.given_tree) {
    model.tree = *opt.given_tree;
  } else if (opt.variant == Variant::ridge) {
    model.tree = Tree::stump(r.family == Family::cox ? r.status.mean() : r.y.mean(), N, kinds, imp);
  } else {
    TreeConfig cfg = opt.tree;
    cfg.seed = opt.seed;
    model.tree = fit_tree(data.Z, kinds, r, cfg, &out.report.prune);
  }
  const Index M = model.tree.n_leaves();
  const auto leaves = model.tree.assign(data.Z);
  out.report.leaf_sizes.assign(static_cast<std::size_t>(M), 0);
  for (Index m : leaves) ++out.report.leaf_sizes[static_cast<std::size_t>(m)];

  // Omics standardization and linear clinical terms.
  model.omics = Standardization::fit(data.X.rows() == N ? data.X : Matrix(N, 0));
  if (opt.linear_clinical) {
    std::vector<double> centers;
    for (Index l = 0; l < data.Z.cols(); ++l) {
      if (kinds[static_cast<std::size_t>(l)] != ColumnKind::continuous) continue;
      const double mean = data.Z.col(l).mean();
      if ((data.Z.col(l).array() - mean).abs().maxCoeff() <= 1e-12 * std::max(1.0, std::abs(mean))) continue;
      model.linear_columns.push_back(l);
      centers.push_back(mean);
    }
    model.linear_centers = Eigen::Map<Vector>(centers.data(), static_cast<Index>(centers.size()));
  }
  model.removed = opt.removed;
  std::sort(model.removed.begin(), model.removed.end());
  model.removed.erase(std::unique(model.removed.begin(), model.removed.end()), model.removed.end());

  Dataset fit_data{data.Z, data.kinds, {}, data.X.rows() == N ? data.X : Matrix(N, 0), {}, r};
  const BlockDesign design = model_design(model, fit_data);
  const FusionKernel kernel(design);

  // Tuning.
  const int K = static_cast<int>(std::min<Index>(opt.folds, N));
  model.folds = K;
  const FoldAssignment folds = make_folds(N, K, design.leaf, r, derive_seed(opt.seed, "tune-folds"));
  const double variant_alpha = detail::fixed_alpha_of(opt.variant);
  const bool fixed_variant = !std::isnan(variant_alpha);
  double lambda = opt.lambda.value_or(std::numeric_limits<double>::quiet_NaN());
  double alpha = fixed_variant ? variant_alpha : opt.alpha.value_or(std::numeric_limits<double>::quiet_NaN());
  {
    const CvContext ctx(design, r, folds, opt.irls);
    if (!opt.lambda) {
      TuneOptions to = opt.tune;
      if (fixed_variant) to.fixed_alpha = variant_alpha;
      else if (opt.alpha) to.fixed_alpha = *opt.alpha;
      TuneResult tr = tune(ctx, design.n_omics(), design.n_slots(), to);
      lambda = tr.lambda;
      if (!to.fixed_alpha) alpha = tr.alpha;
      else alpha = *to.fixed_alpha;
      out.report.cv_objective = tr.objective;
      out.report.tuning = std::move(tr);
    } else {
      if (std::isnan(alpha)) throw UsageError("a fixed lambda needs a fixed alpha for this variant");
      check_penalties(lambda, alpha);
      try {
        out.report.cv_objective = ctx.objective(lambda, alpha);
      } catch (const NumericalError&) {
        out.report.cv_objective = std::numeric_limits<double>::infinity();
      }
    }
  }
  model.cv_objective = out.report.cv_objective;

  // Final fit.
  const Coefficients coef = std::isinf(alpha) && r.family == Family::gaussian
                                ? fit_alpha_limit(design, r, lambda, opt.irls)
                                : fit(design, r, lambda, alpha, opt.irls, &kernel);
  model.c = coef.c;
  model.beta = coef.beta;
  model.lambda = lambda;
  model.alpha = alpha;
  if (r.family == Family::cox) {
    model.baseline = coef.breslow->baseline;
    model.horizon = model.baseline.times.size() ? model.baseline.times[model.baseline.times.size() - 1] : 0.0;
  }
  // Through the stored coefficients, so the report agrees with predict() on training data.
  out.report.train_loss = detail::training_loss(r, model.linear_predictor(data.Z, fit_data.X));
  out.report.iterations = coef.iterations;
  out.report.converged = coef.converged;
  model.validate();
  return out;
}

/// Refit of a model's design at fixed penalties (same tree, standardization and removed
/// leaves as `model`).
inline FusedTreeModel refit(const FusedTreeModel& model, const Dataset& data, double lambda, double alpha,
                            const IrlsOptions& irls = {}) {
  const BlockDesign design = model_design(model, data);
  const Coefficients coef = std::isinf(alpha) ? fit_alpha_limit(design, data.response, lambda, irls)
                                              : fit(design, data.response, lambda, alpha, irls);
  FusedTreeModel out = model;
  out.c = coef.c;
  out.beta = coef.beta;
  out.lambda = lambda;
  out.alpha = alpha;
  if (model.family == Family::cox) out.baseline = coef.breslow->baseline;
  return out;
}

struct PathPoint {
  double alpha = 0.0;
  Vector c;
  Vector beta;  // canonical ordering, as in the model
};

/// Coefficients of `model`'s tree and design refitted at fixed lambda over a grid of fusion
/// penalties (infinite alpha gives the fully fused fit).
inline std::vector<PathPoint> regularization_path(const FusedTreeModel& model, const Dataset& data, double lambda,
                                                  const std::vector<double>& alphas, const IrlsOptions& irls = {}) {
  const BlockDesign design = model_design(model, data);
  std::vector<PathPoint> out;
  for (double a : alphas) {
    const Coefficients coef = std::isinf(a) ? fit_alpha_limit(design, data.response, lambda, irls)
                                            : fit(design, data.response, lambda, a, irls);
    out.push_back({a, coef.c, coef.beta});
  }
  return out;
}

/// Default fusion grid for regularization paths: 0, then 9 log-spaced values over eight
/// decades starting at s / 100 with s = max(lambda, rows per omics leaf). Fusion acts on the
/// scale of the per-leaf Gram matrices, so a grid tied to lambda alone stalls when the tuned
/// lambda is tiny.
inline std::vector<double> default_alpha_grid(double lambda, Index n_rows, Index n_slots) {
  const double s = std::max(lambda, static_cast<double>(n_rows) / static_cast<double>(std::max<Index>(n_slots, 1)));
  std::vector<double> out{0.0};
  for (int k = -2; k <= 6; ++k) out.push_back(s * std::pow(10.0, k));
  return out;
}

/// Per-covariate variance of the coefficients across the S leaves carrying omics.
inline Vector cross_leaf_variance(const Vector& beta, Index p, Index S) {
  if (beta.size() != p * S) throw DataError("cross_leaf_variance: coefficient length is not p * S");
  Vector v = Vector::Zero(p);
  if (S < 2) return v;
  for (Index j = 0; j < p; ++j) {
    const auto block = beta.segment(j * S, S);
    v[j] = (block.array() - block.mean()).square().sum() / static_cast<double>(S - 1);
  }
  return v;
}

}  // namespace fusedtree
