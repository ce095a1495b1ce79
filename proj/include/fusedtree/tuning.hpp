#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fusedtree/errors.hpp"
#include "fusedtree/estimator.hpp"
#include "fusedtree/penalty.hpp"
#include "fusedtree/response.hpp"
#include "fusedtree/rng.hpp"
#include "fusedtree/survival.hpp"

namespace fusedtree {

struct FoldAssignment {
  int K = 0;
  std::vector<int> fold_of;             // 0-based fold of each row
  std::vector<std::vector<Index>> leaf_counts;   // [leaf][fold]
  std::vector<std::vector<Index>> class_counts;  // [class][fold], binary/survival only

  std::vector<Index> test_rows(int k) const {
    std::vector<Index> out;
    for (std::size_t i = 0; i < fold_of.size(); ++i)
      if (fold_of[i] == k) out.push_back(static_cast<Index>(i));
    return out;
  }
  std::vector<Index> train_rows(int k) const {
    std::vector<Index> out;
    for (std::size_t i = 0; i < fold_of.size(); ++i)
      if (fold_of[i] != k) out.push_back(static_cast<Index>(i));
    return out;
  }
};

/// K-fold partition balanced within every leaf and, for binary and survival responses,
/// within every class (event indicator for survival).
///
/// Rows are laid out leaf by leaf and dealt to folds cyclically, so fold totals and
/// per-leaf fold counts differ by at most one. The class-1 rows form a second cyclic
/// chain: inside each leaf's run they take the positions whose fold matches the next links
/// of that chain, so class-1 fold counts also differ by at most one. The chain start is
/// chosen so that the folds with an extra class-1 row are a subset (or superset) of the
/// folds with an extra row overall, which balances class 0 too. Exact balance needs each
/// leaf's run to offer the required folds; otherwise a warning is issued and the affected
/// leaf's class-1 rows go to the closest available folds. Fold labels are permuted at
/// random at the end.
inline FoldAssignment make_folds(Index N, int K, std::span<const Index> leaf, const Response& r,
                                 std::uint64_t seed) {
  if (K < 2) throw UsageError("at least 2 folds are required");
  if (static_cast<Index>(K) > N) throw UsageError("more folds than observations");
  if (static_cast<Index>(leaf.size()) != N || r.size() != N) throw DataError("make_folds: length mismatch");
  Index M = 0;
  for (Index m : leaf) M = std::max(M, m + 1);
  const bool stratified = r.family != Family::gaussian;
  Rng rng(seed);

  // rows[m][class], shuffled
  std::vector<std::array<std::vector<Index>, 2>> rows(static_cast<std::size_t>(M));
  for (Index i = 0; i < N; ++i) {
    const int cls = stratified ? r.stratum(i) : 0;
    rows[static_cast<std::size_t>(leaf[static_cast<std::size_t>(i)])][static_cast<std::size_t>(cls)].push_back(i);
  }
  for (auto& lr : rows)
    for (auto& g : lr) std::shuffle(g.begin(), g.end(), rng);

  Index n1_total = 0;
  for (const auto& lr : rows) n1_total += static_cast<Index>(lr[1].size());
  const Index chain_start = ((N % K) - (n1_total % K) + K) % K;

  FoldAssignment out;
  out.K = K;
  out.fold_of.assign(static_cast<std::size_t>(N), 0);
  const auto uK = static_cast<std::size_t>(K);
  Index pos = 0, chain = chain_start;
  bool misaligned = false;
  for (Index m = 0; m < M; ++m) {
    const auto& g0 = rows[static_cast<std::size_t>(m)][0];
    const auto& g1 = rows[static_cast<std::size_t>(m)][1];
    const Index n0 = static_cast<Index>(g0.size()), n1 = static_cast<Index>(g1.size());
    const Index n = n0 + n1;
    if (n > 0 && n < K) warn("leaf " + std::to_string(m) + " has fewer rows than folds");
    std::vector<Index> demand(uK, 0), supply(uK, 0);
    for (Index t = 0; t < n1; ++t) ++demand[static_cast<std::size_t>((chain + t) % K)];
    for (Index t = 0; t < n; ++t) ++supply[static_cast<std::size_t>((pos + t) % K)];
    Index shortfall = 0;
    for (std::size_t k = 0; k < uK; ++k) shortfall += std::max<Index>(0, demand[k] - supply[k]);
    if (shortfall > 0) misaligned = true;
    // Positions of the run that take class-1 rows: matching folds first, then (only when
    // short) the earliest remaining positions.
    std::vector<char> is_one(static_cast<std::size_t>(n), 0);
    Index placed = 0;
    for (Index t = 0; t < n && placed < n1; ++t) {
      auto& dmd = demand[static_cast<std::size_t>((pos + t) % K)];
      if (dmd > 0) {
        --dmd;
        is_one[static_cast<std::size_t>(t)] = 1;
        ++placed;
      }
    }
    for (Index t = 0; t < n && placed < n1; ++t)
      if (!is_one[static_cast<std::size_t>(t)]) {
        is_one[static_cast<std::size_t>(t)] = 1;
        ++placed;
      }
    std::size_t k0 = 0, k1 = 0;
    for (Index t = 0; t < n; ++t) {
      const Index row = is_one[static_cast<std::size_t>(t)] ? g1[k1++] : g0[k0++];
      out.fold_of[static_cast<std::size_t>(row)] = static_cast<int>((pos + t) % K);
    }
    pos += n;
    chain += n1;
  }
  if (misaligned) warn("fold assignment: class counts could not be balanced exactly in every fold");

  std::vector<int> relabel(static_cast<std::size_t>(K));
  std::iota(relabel.begin(), relabel.end(), 0);
  std::shuffle(relabel.begin(), relabel.end(), rng);
  for (auto& f : out.fold_of) f = relabel[static_cast<std::size_t>(f)];

  out.leaf_counts.assign(static_cast<std::size_t>(M), std::vector<Index>(static_cast<std::size_t>(K), 0));
  for (Index i = 0; i < N; ++i)
    ++out.leaf_counts[static_cast<std::size_t>(leaf[static_cast<std::size_t>(i)])][static_cast<std::size_t>(out.fold_of[static_cast<std::size_t>(i)])];
  if (stratified) {
    out.class_counts.assign(2, std::vector<Index>(static_cast<std::size_t>(K), 0));
    for (Index i = 0; i < N; ++i)
      ++out.class_counts[static_cast<std::size_t>(r.stratum(i))][static_cast<std::size_t>(out.fold_of[static_cast<std::size_t>(i)])];
  }
  return out;
}

/// Held-out linear predictors, split into the unpenalized part U c and the omics part
/// X-tilde beta, each row predicted from the fit on the other folds.
struct CvPredictions {
  Vector clinical;
  Vector omics;
  std::vector<BaselineHazard> baselines;  // survival: training-fold baseline per fold
  bool converged = true;

  Vector eta() const { return clinical + omics; }
};

/// Everything the cross-validated objective needs that does not depend on (lambda, alpha):
/// fold index sets and the fold blocks of the two penalty-free Gram matrices. Each
/// evaluation then only touches matrices of dimension N - |fold|.
class CvContext {
public:
  CvContext(const BlockDesign& d, Response r, const FoldAssignment& folds, IrlsOptions opt = {})
      : response_(std::move(r)), n_leaves_(d.n_leaves), opt_(opt) {
    if (response_.size() != d.rows()) throw DataError("response length differs from design rows");
    opt_.throw_on_failure = false;
    const FusionKernel kernel(d);
    const Matrix& shared = kernel.shared();
    const Matrix& contrast = kernel.contrast();
    empty_ = kernel.empty();
    for (int k = 0; k < folds.K; ++k) {
      Fold f;
      f.test = folds.test_rows(k);
      f.train = folds.train_rows(k);
      if (f.test.empty()) continue;
      f.U_train = select_rows(d.U, f.train);
      f.U_test = select_rows(d.U, f.test);
      for (Index m = 0; m < d.n_leaves; ++m)
        if (f.U_train.col(m).sum() == 0.0)
          throw DataError("a training fold contains no rows of leaf " + std::to_string(m));
      f.shared_tt = block(shared, f.train, f.train);
      f.contrast_tt = block(contrast, f.train, f.train);
      f.shared_vt = block(shared, f.test, f.train);
      f.contrast_vt = block(contrast, f.test, f.train);
      f.response = response_.subset(f.train);
      folds_.push_back(std::move(f));
    }
  }

  const Response& response() const { return response_; }
  Index size() const { return response_.size(); }

  CvPredictions predictions(double lambda, double alpha) const {
    check_penalties(lambda, alpha);
    const Index N = response_.size();
    CvPredictions out{Vector::Zero(N), Vector::Zero(N), {}, true};
    const double w0 = 1.0 / lambda;
    const double w1 = std::isinf(alpha) ? 0.0 : 1.0 / (lambda + alpha);
    for (const auto& f : folds_) {
      const Matrix Ktt = w0 * f.shared_tt + w1 * f.contrast_tt;
      const KernelFit kf = fit_fold(f, Ktt, lambda, alpha);
      out.converged = out.converged && kf.converged;
      const Vector uc = f.U_test * kf.c;
      const Vector xb = (w0 * f.shared_vt + w1 * f.contrast_vt) * kf.v;
      for (std::size_t k = 0; k < f.test.size(); ++k) {
        out.clinical[f.test[k]] = uc[static_cast<Index>(k)];
        out.omics[f.test[k]] = xb[static_cast<Index>(k)];
      }
      if (kf.breslow) out.baselines.push_back(kf.breslow->baseline);
    }
    return out;
  }

  /// Mean held-out squared error (gaussian) or minus the mean held-out log-likelihood.
  double objective(double lambda, double alpha) const {
    const CvPredictions p = predictions(lambda, alpha);
    const Vector eta = p.eta();
    const Index N = response_.size();
    double total = 0.0;
    switch (response_.family) {
      case Family::gaussian: total = (response_.y - eta).squaredNorm(); break;
      case Family::binomial: total = -detail::binomial_loglik(eta, response_.y); break;
      case Family::cox: {
        std::size_t k = 0;
        for (const auto& f : folds_) {
          const BaselineHazard& h = p.baselines[k++];
          for (Index i : f.test) {
            const double t = response_.y[i];
            total += std::exp(eta[i]) * h.smooth_at(t);
            if (response_.status[i] > 0.0) total -= std::log(h.smooth_density(t)) + eta[i];
          }
        }
        break;
      }
    }
    const double v = total / static_cast<double>(N);
    return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
  }

  bool omics_free() const { return empty_; }

private:
  struct Fold {
    std::vector<Index> train, test;
    Matrix U_train, U_test;
    Matrix shared_tt, contrast_tt, shared_vt, contrast_vt;
    Response response;
    // gaussian, single-kernel evaluations: eigendecomposition of the training Gram matrix
    mutable std::optional<std::pair<double, Eigen::SelfAdjointEigenSolver<Matrix>>> eig;
  };

  static Matrix block(const Matrix& A, const std::vector<Index>& rows, const std::vector<Index>& cols) {
    Matrix out(static_cast<Index>(rows.size()), static_cast<Index>(cols.size()));
    for (std::size_t c = 0; c < cols.size(); ++c)
      for (std::size_t r = 0; r < rows.size(); ++r) out(static_cast<Index>(r), static_cast<Index>(c)) = A(rows[r], cols[c]);
    return out;
  }

  KernelFit fit_fold(const Fold& f, const Matrix& Ktt, double lambda, double alpha) const {
    if (response_.family == Family::gaussian && (alpha == 0.0 || std::isinf(alpha) || empty_))
      return fit_fold_spectral(f, lambda, alpha);
    return kernel_fit(Ktt, f.U_train, f.response, n_leaves_, opt_);
  }

  // Along alpha = 0 or alpha = inf the training kernel is G / lambda for a fixed G; one
  // eigendecomposition per fold then serves every lambda.
  KernelFit fit_fold_spectral(const Fold& f, double lambda, double alpha) const {
    const double tag = std::isinf(alpha) ? 1.0 : 0.0;
    if (!f.eig || f.eig->first != tag) {
      const Matrix G = std::isinf(alpha) ? f.shared_tt : Matrix(f.shared_tt + f.contrast_tt);
      f.eig.emplace(tag, Eigen::SelfAdjointEigenSolver<Matrix>(G));
    }
    const auto& es = f.eig->second;
    const Matrix& V = es.eigenvectors();
    const Vector inv = (es.eigenvalues().array().max(0.0) / lambda + 1.0).inverse().matrix();
    auto solve = [&](const Matrix& B) -> Matrix { return V * (inv.asDiagonal() * (V.transpose() * B)); };
    const Matrix WU = solve(f.U_train);
    const Vector Wy = solve(f.response.y);
    KernelFit kf;
    kf.c = f.U_train.cols() > 0 ? detail::gls(f.U_train, WU, Wy) : Vector();
    kf.v = f.U_train.cols() > 0 ? Vector(Wy - WU * kf.c) : Wy;
    kf.eta = f.response.y - kf.v;
    return kf;
  }

  Response response_;
  Index n_leaves_;
  IrlsOptions opt_;
  bool empty_ = false;
  std::vector<Fold> folds_;
};

inline CvPredictions cv_linear_predictors(const BlockDesign& d, const Response& r, double lambda, double alpha,
                                          const FoldAssignment& folds) {
  return CvContext(d, r, folds).predictions(lambda, alpha);
}

inline double cv_objective(double lambda, double alpha, const BlockDesign& d, const Response& r,
                           const FoldAssignment& folds) {
  return CvContext(d, r, folds).objective(lambda, alpha);
}

struct NelderMeadResult {
  Vector x;
  double value = std::numeric_limits<double>::infinity();
  int iterations = 0;
  bool converged = false;
  std::vector<std::vector<Vector>> simplex_history;
  std::vector<double> best_history;
};

struct NelderMeadOptions {
  double reflection = 1.0;
  double expansion = 2.0;
  double contraction = 0.5;
  double shrink = 0.5;
  double initial_step = 1.0;
  double tol = 1e-6;  // on the spread of vertex values
  int max_iter = 200;
};

inline NelderMeadResult nelder_mead(const std::function<double(const Vector&)>& f, const Vector& x0,
                                    const NelderMeadOptions& o = {}) {
  const Index d = x0.size();
  std::vector<Vector> xs;
  std::vector<double> fs;
  xs.push_back(x0);
  for (Index k = 0; k < d; ++k) {
    Vector x = x0;
    x[k] += o.initial_step;
    xs.push_back(x);
  }
  for (const auto& x : xs) fs.push_back(f(x));
  NelderMeadResult res;
  std::vector<std::size_t> idx(xs.size());
  auto sort_simplex = [&] {
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return fs[a] < fs[b]; });
    std::vector<Vector> x2;
    std::vector<double> f2;
    for (auto i : idx) {
      x2.push_back(xs[i]);
      f2.push_back(fs[i]);
    }
    xs = std::move(x2);
    fs = std::move(f2);
  };
  sort_simplex();
  for (int it = 0; it < o.max_iter; ++it) {
    res.simplex_history.push_back(xs);
    res.best_history.push_back(fs.front());
    const double spread = fs.back() - fs.front();
    if (std::isfinite(fs.back()) && spread < o.tol) {
      res.converged = true;
      break;
    }
    res.iterations = it + 1;
    Vector centroid = Vector::Zero(d);
    for (Index k = 0; k < d; ++k) centroid += xs[static_cast<std::size_t>(k)];
    centroid /= static_cast<double>(d);
    const Vector& worst = xs.back();
    const Vector xr = centroid + o.reflection * (centroid - worst);
    const double fr = f(xr);
    if (fr < fs.front()) {
      const Vector xe = centroid + o.expansion * (xr - centroid);
      const double fe = f(xe);
      if (fe < fr) {
        xs.back() = xe;
        fs.back() = fe;
      } else {
        xs.back() = xr;
        fs.back() = fr;
      }
    } else if (fr < fs[fs.size() - 2]) {
      xs.back() = xr;
      fs.back() = fr;
    } else {
      const bool outside = fr < fs.back();
      const Vector xc = outside ? Vector(centroid + o.contraction * (xr - centroid))
                                : Vector(centroid + o.contraction * (worst - centroid));
      const double fc = f(xc);
      if (fc < (outside ? fr : fs.back())) {
        xs.back() = xc;
        fs.back() = fc;
      } else {
        for (std::size_t k = 1; k < xs.size(); ++k) {
          xs[k] = xs.front() + o.shrink * (xs[k] - xs.front());
          fs[k] = f(xs[k]);
        }
      }
    }
    sort_simplex();
  }
  res.x = xs.front();
  res.value = fs.front();
  return res;
}

struct TuneOptions {
  std::optional<double> log_lambda0;  // default log(p)
  double log_alpha0 = 0.0;
  int restarts = 3;
  std::optional<double> fixed_alpha;  // tune lambda only (alpha = 0 or inf for the variants)
  double log_min = -15.0;
  double log_max = 30.0;
  NelderMeadOptions nm;
};

struct TuneResult {
  double lambda = 1.0;
  double alpha = 1.0;
  double objective = std::numeric_limits<double>::infinity();
  bool converged = false;
  std::vector<Vector> starts;
  std::vector<NelderMeadResult> runs;  // one per start, log-scale coordinates
};

/// Nelder-Mead on (log lambda, log alpha), or on log lambda alone when alpha is fixed or
/// fewer than two leaves carry omics (alpha then has no effect). Returns the best vertex
/// over all starts.
inline TuneResult tune(const CvContext& ctx, Index n_omics, Index n_fused, const TuneOptions& o = {}) {
  const double l0 = o.log_lambda0.value_or(std::log(std::max<double>(1.0, static_cast<double>(n_omics))));
  const bool one_d = o.fixed_alpha.has_value() || n_fused <= 1;
  const double alpha_fixed = o.fixed_alpha.value_or(std::exp(o.log_alpha0));
  TuneResult out;
  out.alpha = alpha_fixed;
  out.lambda = std::exp(l0);
  if (ctx.omics_free() || n_omics == 0) {
    out.objective = ctx.objective(out.lambda, out.alpha);
    out.converged = true;
    return out;
  }
  auto clamp = [&](double x) { return std::clamp(x, o.log_min, o.log_max); };
  auto f = [&](const Vector& x) {
    const double lam = std::exp(clamp(x[0]));
    const double al = one_d ? alpha_fixed : std::exp(clamp(x[1]));
    try {
      return ctx.objective(lam, al);
    } catch (const NumericalError&) {
      return std::numeric_limits<double>::infinity();
    }
  };
  static const std::array<std::array<double, 2>, 5> offsets{{{0, 0}, {2, 2}, {-2, -2}, {2, -2}, {-2, 2}}};
  static const std::array<double, 5> offsets1{0, 2, -2, 4, -4};
  const int n_starts = std::min(1 + std::max(0, o.restarts), 5);
  for (int s = 0; s < n_starts; ++s) {
    Vector x0 = one_d ? Vector(1) : Vector(2);
    if (one_d) {
      x0[0] = l0 + offsets1[static_cast<std::size_t>(s)];
    } else {
      x0[0] = l0 + offsets[static_cast<std::size_t>(s)][0];
      x0[1] = o.log_alpha0 + offsets[static_cast<std::size_t>(s)][1];
    }
    out.starts.push_back(x0);
    NelderMeadResult r = nelder_mead(f, x0, o.nm);
    if (r.value < out.objective) {
      out.objective = r.value;
      out.lambda = std::exp(clamp(r.x[0]));
      if (!one_d) out.alpha = std::exp(clamp(r.x[1]));
      out.converged = r.converged;
    }
    out.runs.push_back(std::move(r));
  }
  if (!std::isfinite(out.objective)) throw NumericalError("tuning failed: no finite cross-validated objective");
  return out;
}

}  // namespace fusedtree
