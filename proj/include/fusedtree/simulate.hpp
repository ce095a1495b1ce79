#pragma once

#include <Eigen/Dense>
#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "fusedtree/errors.hpp"
#include "fusedtree/metrics.hpp"
#include "fusedtree/model.hpp"
#include "fusedtree/pipeline.hpp"
#include "fusedtree/response.hpp"
#include "fusedtree/rng.hpp"
#include "fusedtree/tree.hpp"

namespace fusedtree {

enum class Experiment { interaction, full_fusion, linear, regpath };

inline std::string to_string(Experiment e) {
  switch (e) {
    case Experiment::interaction: return "interaction";
    case Experiment::full_fusion: return "full_fusion";
    case Experiment::linear: return "linear";
    case Experiment::regpath: return "regpath";
  }
  return "?";
}

inline Experiment experiment_from_string(std::string_view s) {
  if (s == "interaction") return Experiment::interaction;
  if (s == "full_fusion") return Experiment::full_fusion;
  if (s == "linear") return Experiment::linear;
  if (s == "regpath") return Experiment::regpath;
  throw UsageError("unknown experiment '" + std::string(s) + "'");
}

enum class CovarianceKind { identity, ar1, block, general };

inline CovarianceKind covariance_from_string(std::string_view s) {
  if (s == "identity") return CovarianceKind::identity;
  if (s == "ar1") return CovarianceKind::ar1;
  if (s == "block") return CovarianceKind::block;
  if (s == "general") return CovarianceKind::general;
  throw UsageError("unknown covariance '" + std::string(s) + "'");
}

/// Omics covariance. `general` takes an explicit matrix which is rescaled to a correlation
/// matrix, so every column has unit variance in the population.
struct CovarianceSpec {
  CovarianceKind kind = CovarianceKind::ar1;
  double rho = 0.5;
  Index block_size = 10;
  Matrix sigma;
};

struct SimConfig {
  Experiment experiment = Experiment::interaction;
  Index n = 300;
  Index p = 500;
  Index q = 5;
  std::optional<double> laplace_scale;  // default depends on the experiment
  double noise_sd = 1.0;
  CovarianceSpec covariance;
  int replications = 50;
  Index n_test = 5000;
  std::uint64_t seed = 1;
  int threads = 1;
  TreeConfig tree;
  int folds = 5;
  std::vector<Variant> models;  // empty: the experiment's default set

  void validate() const {
    if (n < 10) throw UsageError("simulation needs N >= 10");
    if (p < 1 && experiment != Experiment::regpath) throw UsageError("simulation needs p >= 1");
    if (q < 5) throw UsageError("the simulation designs use 5 clinical covariates");
    if (laplace_scale && !(*laplace_scale > 0.0)) throw UsageError("laplace scale must be positive");
    if (!(noise_sd > 0.0)) throw UsageError("noise sd must be positive");
    if (replications < 1) throw UsageError("at least one replication");
    if (n_test < 1) throw UsageError("test set must be nonempty");
    if (threads < 1) throw UsageError("threads must be positive");
  }

  double omics_scale() const {
    const double pd = static_cast<double>(p);
    if (laplace_scale) return *laplace_scale;
    switch (experiment) {
      case Experiment::interaction: return 10.0 / pd;
      case Experiment::full_fusion: return 75.0 / pd;
      case Experiment::linear: return 35.0 / pd;
      case Experiment::regpath: return 0.0;
    }
    return 1.0;
  }

  std::vector<Variant> model_set() const {
    if (!models.empty()) return models;
    std::vector<Variant> v{Variant::fusedtree, Variant::zerofus, Variant::fulfus, Variant::ridge};
    if (experiment == Experiment::interaction || experiment == Experiment::regpath) v.insert(v.begin() + 1, Variant::oracle);
    return v;
  }
};

struct SimReplicate {
  Dataset train;
  Dataset test;
  Vector f_train;  // noiseless signal
  Vector f_test;
  Vector beta;            // true omics effects
  Vector clinical_coef;   // linear experiment only
  std::optional<Tree> true_tree;
  std::uint64_t seed = 0;
};

namespace detail {

inline Matrix covariance_factor(const CovarianceSpec& c, Index p) {
  Matrix S = c.sigma;
  if (S.rows() != p || S.cols() != p) throw DataError("covariance matrix must be p x p");
  if (!S.isApprox(S.transpose(), 1e-10)) throw DataError("covariance matrix is not symmetric");
  const Vector d = S.diagonal();
  if ((d.array() <= 0.0).any()) throw DataError("covariance matrix has a nonpositive diagonal");
  const Vector inv = d.cwiseSqrt().cwiseInverse();
  S = inv.asDiagonal() * S * inv.asDiagonal();
  Eigen::SelfAdjointEigenSolver<Matrix> es(S);
  const double top = std::max(es.eigenvalues().maxCoeff(), 1.0);
  if (es.eigenvalues().minCoeff() < -1e-10 * top) throw DataError("covariance matrix is not positive semidefinite");
  return es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

}  // namespace detail

/// Clinical covariates Unif(0,1)^q and omics covariates N(0, Sigma), drawn row by row from
/// `rng`.
inline std::pair<Matrix, Matrix> gen_covariates(Index N, Index p, Index q, const CovarianceSpec& cov, Rng& rng) {
  Matrix Z(N, q), X(N, p);
  const double rho = cov.rho;
  if ((cov.kind == CovarianceKind::ar1 && !(std::abs(rho) < 1.0)) ||
      (cov.kind == CovarianceKind::block && !(rho >= 0.0 && rho <= 1.0)))
    throw DataError("covariance parameter rho out of range");
  std::optional<Matrix> factor;
  if (cov.kind == CovarianceKind::general) factor = detail::covariance_factor(cov, p);
  const double innov = std::sqrt(1.0 - rho * rho);
  Vector e(p);
  for (Index i = 0; i < N; ++i) {
    for (Index l = 0; l < q; ++l) Z(i, l) = uniform01(rng);
    for (Index j = 0; j < p; ++j) e[j] = standard_normal(rng);
    switch (cov.kind) {
      case CovarianceKind::identity: X.row(i) = e.transpose(); break;
      case CovarianceKind::ar1: {
        double prev = 0.0;
        for (Index j = 0; j < p; ++j) {
          prev = j == 0 ? e[0] : rho * prev + innov * e[j];
          X(i, j) = prev;
        }
        break;
      }
      case CovarianceKind::block: {
        const Index b = std::max<Index>(cov.block_size, 1);
        for (Index start = 0; start < p; start += b) {
          const double shared = standard_normal(rng);
          for (Index j = start; j < std::min(p, start + b); ++j)
            X(i, j) = std::sqrt(rho) * shared + std::sqrt(1.0 - rho) * e[j];
        }
        break;
      }
      case CovarianceKind::general: X.row(i) = (*factor * e).transpose(); break;
    }
  }
  return {std::move(Z), std::move(X)};
}

/// Tree z1 <= 1/2, then z2 <= 1/2 (left) and z4 <= 1/2 (right). Leaves are numbered left to
/// right; `values` are the leaf constants.
inline Tree interaction_tree(const std::array<double, 4>& values) {
  Tree t;
  auto split = [](Index l, int left, int right, int depth) {
    TreeNode n;
    n.leaf = false;
    n.rule.covariate = l;
    n.rule.threshold = 0.5;
    n.left = left;
    n.right = right;
    n.depth = depth;
    return n;
  };
  auto leaf = [](double v) {
    TreeNode n;
    n.value = v;
    n.depth = 2;
    return n;
  };
  t.nodes = {split(0, 1, 4, 0), split(1, 2, 3, 1), leaf(values[0]), leaf(values[1]),
             split(3, 5, 6, 1), leaf(values[2]), leaf(values[3])};
  t.kinds.assign(5, ColumnKind::continuous);
  t.impurity = Impurity::mse;
  t.renumber();
  return t;
}

namespace detail {

struct LeafEffect {
  double intercept;
  double multiplier;
};

inline Index interaction_leaf(const Matrix& Z, Index i) {
  if (Z(i, 0) <= 0.5) return Z(i, 1) <= 0.5 ? 0 : 1;
  return Z(i, 3) <= 0.5 ? 2 : 3;
}

inline Dataset make_dataset(Matrix Z, Matrix X, const Vector& f, double sd, Rng& rng) {
  Vector y = f;
  for (Index i = 0; i < y.size(); ++i) y[i] += sd * standard_normal(rng);
  Dataset d;
  d.Z = std::move(Z);
  d.X = std::move(X);
  d.kinds.assign(static_cast<std::size_t>(d.Z.cols()), ColumnKind::continuous);
  for (Index l = 0; l < d.Z.cols(); ++l) d.clinical_names.push_back("z" + std::to_string(l + 1));
  for (Index j = 0; j < d.X.cols(); ++j) d.omics_names.push_back("x" + std::to_string(j + 1));
  d.response = Response::gaussian(std::move(y));
  return d;
}

// Train and test sets share the coefficients and draw covariates and noise from separate
// streams of the replicate seed.
template <class Signal>
SimReplicate assemble(const SimConfig& cfg, Index N, Index p, const CovarianceSpec& cov, std::uint64_t seed,
                      Signal&& signal) {
  SimReplicate rep;
  rep.seed = seed;
  for (int part = 0; part < 2; ++part) {
    const Index n = part == 0 ? N : cfg.n_test;
    Rng rng = make_rng(seed, part == 0 ? "train" : "test");
    auto [Z, X] = gen_covariates(n, p, cfg.q, cov, rng);
    Vector f(n);
    for (Index i = 0; i < n; ++i) f[i] = signal(Z, X, i);
    Rng noise = make_rng(seed, part == 0 ? "train-noise" : "test-noise");
    Dataset d = make_dataset(std::move(Z), std::move(X), f, cfg.noise_sd, noise);
    if (part == 0) {
      rep.train = std::move(d);
      rep.f_train = std::move(f);
    } else {
      rep.test = std::move(d);
      rep.f_test = std::move(f);
    }
  }
  return rep;
}

inline Vector laplace_vector(Index n, double scale, Rng& rng) {
  Vector v(n);
  for (Index j = 0; j < n; ++j) v[j] = laplace(rng, scale);
  return v;
}

}  // namespace detail

/// Interaction design: four leaves on z1, z2, z4 at 1/2 with intercepts (-10, -5, 5, 10);
/// the first quarter of the omics effects is multiplied by (8, 2, 1/2, 1/8) in the
/// respective leaf, the rest is shared; plus 3 z3.
inline SimReplicate gen_interaction(const SimConfig& cfg, std::uint64_t seed) {
  const Index p = cfg.p;
  const Index p_int = (p + 2) / 4;  // 125 of 500
  Rng brng = make_rng(seed, "beta");
  const Vector beta = detail::laplace_vector(p, cfg.omics_scale(), brng);
  static constexpr std::array<detail::LeafEffect, 4> eff{{{-10.0, 8.0}, {-5.0, 2.0}, {5.0, 0.5}, {10.0, 0.125}}};
  auto signal = [&](const Matrix& Z, const Matrix& X, Index i) {
    const auto& e = eff[static_cast<std::size_t>(detail::interaction_leaf(Z, i))];
    const double inter = X.row(i).head(p_int).dot(beta.head(p_int));
    const double rest = X.row(i).tail(p - p_int).dot(beta.tail(p - p_int));
    return e.intercept + e.multiplier * inter + rest + 3.0 * Z(i, 2);
  };
  SimReplicate rep = detail::assemble(cfg, cfg.n, p, cfg.covariance, seed, signal);
  rep.beta = beta;
  rep.true_tree = interaction_tree({-10.0, -5.0, 5.0, 10.0});
  return rep;
}

/// 15 sin(pi z1 z2) + 10 (z3 - 1/2)^2 + 2 exp(z4) + 2 z5 + x' beta.
inline double full_fusion_clinical(double z1, double z2, double z3, double z4, double z5) {
  return 15.0 * std::sin(std::numbers::pi * z1 * z2) + 10.0 * (z3 - 0.5) * (z3 - 0.5) + 2.0 * std::exp(z4) + 2.0 * z5;
}

inline SimReplicate gen_full_fusion(const SimConfig& cfg, std::uint64_t seed) {
  Rng brng = make_rng(seed, "beta");
  const Vector beta = detail::laplace_vector(cfg.p, cfg.omics_scale(), brng);
  auto signal = [&](const Matrix& Z, const Matrix& X, Index i) {
    return full_fusion_clinical(Z(i, 0), Z(i, 1), Z(i, 2), Z(i, 3), Z(i, 4)) + X.row(i).dot(beta);
  };
  SimReplicate rep = detail::assemble(cfg, cfg.n, cfg.p, cfg.covariance, seed, signal);
  rep.beta = beta;
  return rep;
}

/// z' c + x' beta with c_l ~ Laplace(75/p) and beta_j ~ Laplace(35/p) (the latter
/// overridable through laplace_scale).
inline SimReplicate gen_linear(const SimConfig& cfg, std::uint64_t seed) {
  Rng brng = make_rng(seed, "beta");
  const Vector beta = detail::laplace_vector(cfg.p, cfg.omics_scale(), brng);
  Rng crng = make_rng(seed, "clinical-coef");
  const Vector c = detail::laplace_vector(cfg.q, 75.0 / static_cast<double>(cfg.p), crng);
  auto signal = [&](const Matrix& Z, const Matrix& X, Index i) { return Z.row(i).dot(c) + X.row(i).dot(beta); };
  SimReplicate rep = detail::assemble(cfg, cfg.n, cfg.p, cfg.covariance, seed, signal);
  rep.beta = beta;
  rep.clinical_coef = c;
  return rep;
}

/// Regularization-path design: N = 500 (cfg.n), p = 10, identity covariance, beta_j ~
/// N(0, 5/p); the effects of x1 and x2 are multiplied by (6, 3, 1/2, 1/5) in the four
/// leaves of the interaction tree, x3..x10 act identically everywhere.
inline SimReplicate gen_regpath(const SimConfig& cfg, std::uint64_t seed) {
  constexpr Index p = 10;
  Rng brng = make_rng(seed, "beta");
  Vector beta(p);
  for (Index j = 0; j < p; ++j) beta[j] = std::sqrt(5.0 / static_cast<double>(p)) * standard_normal(brng);
  static constexpr std::array<detail::LeafEffect, 4> eff{{{-10.0, 6.0}, {-5.0, 3.0}, {5.0, 0.5}, {10.0, 0.2}}};
  auto signal = [&](const Matrix& Z, const Matrix& X, Index i) {
    const auto& e = eff[static_cast<std::size_t>(detail::interaction_leaf(Z, i))];
    return e.intercept + e.multiplier * X.row(i).head(2).dot(beta.head(2)) + X.row(i).tail(p - 2).dot(beta.tail(p - 2));
  };
  CovarianceSpec iid;
  iid.kind = CovarianceKind::identity;
  SimReplicate rep = detail::assemble(cfg, cfg.n, p, iid, seed, signal);
  rep.beta = beta;
  rep.true_tree = interaction_tree({-10.0, -5.0, 5.0, 10.0});
  return rep;
}

inline SimReplicate generate(const SimConfig& cfg, std::uint64_t seed) {
  switch (cfg.experiment) {
    case Experiment::interaction: return gen_interaction(cfg, seed);
    case Experiment::full_fusion: return gen_full_fusion(cfg, seed);
    case Experiment::linear: return gen_linear(cfg, seed);
    case Experiment::regpath: return gen_regpath(cfg, seed);
  }
  throw UsageError("unknown experiment");
}

/// Default settings of the regularization-path design.
inline SimConfig regpath_config(std::uint64_t seed = 1) {
  SimConfig c;
  c.experiment = Experiment::regpath;
  c.n = 500;
  c.p = 10;
  c.seed = seed;
  return c;
}

struct SimRow {
  int replication = 0;
  Variant model = Variant::fusedtree;
  double pmse = std::numeric_limits<double>::quiet_NaN();
  double lambda = std::numeric_limits<double>::quiet_NaN();
  double alpha = std::numeric_limits<double>::quiet_NaN();
  Index n_leaves = 0;
  std::string error;  // empty on success
};

struct ModelSummary {
  Variant model = Variant::fusedtree;
  int n_ok = 0;
  double mean_pmse = std::numeric_limits<double>::quiet_NaN();
  double sd_pmse = std::numeric_limits<double>::quiet_NaN();
};

struct PairedTest {
  Variant better;  // hypothesized lower PMSE
  Variant worse;
  int n = 0;
  double mean_difference = 0.0;  // worse - better
  double t = 0.0;
  double p_value = 1.0;  // one-sided
};

struct SimResults {
  SimConfig config;
  std::vector<SimRow> rows;  // replication-major, models in config order
  std::vector<ModelSummary> summary;

  std::vector<double> pmse_of(Variant v) const {
    std::vector<double> out;
    for (const auto& r : rows)
      if (r.model == v) out.push_back(r.pmse);
    return out;
  }
};

/// One-sided paired t test of H1: E[b - a] > 0 over pairs where both are finite.
inline PairedTest paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw DataError("paired test: lengths differ");
  std::vector<double> d;
  for (std::size_t k = 0; k < a.size(); ++k)
    if (std::isfinite(a[k]) && std::isfinite(b[k])) d.push_back(b[k] - a[k]);
  PairedTest out{};
  out.n = static_cast<int>(d.size());
  if (d.size() < 2) return out;
  const double n = static_cast<double>(d.size());
  double mean = 0.0;
  for (double x : d) mean += x;
  mean /= n;
  double ss = 0.0;
  for (double x : d) ss += (x - mean) * (x - mean);
  const double se = std::sqrt(ss / (n - 1.0) / n);
  out.mean_difference = mean;
  if (!(se > 0.0)) {
    out.t = mean > 0.0 ? std::numeric_limits<double>::infinity() : (mean < 0.0 ? -std::numeric_limits<double>::infinity() : 0.0);
    out.p_value = mean > 0.0 ? 0.0 : 1.0;
    return out;
  }
  out.t = mean / se;
  const boost::math::students_t dist(n - 1.0);
  out.p_value = boost::math::cdf(boost::math::complement(dist, out.t));
  return out;
}

/// Fits one variant to a replicate and returns its test PMSE row.
inline SimRow run_model(const SimConfig& cfg, const SimReplicate& rep, Variant v, int replication) {
  SimRow row;
  row.replication = replication;
  row.model = v;
  try {
    FitOptions fo;
    fo.tree = cfg.tree;
    fo.folds = cfg.folds;
    fo.seed = derive_seed(rep.seed, "fit");
    fo.variant = v;
    if (v == Variant::oracle) {
      if (!rep.true_tree) throw UsageError("oracle model needs a known tree");
      fo.given_tree = rep.true_tree;
    }
    const FitResult fr = fit_model(rep.train, fo);
    const Vector pred = fr.model.predict(rep.test.Z, rep.test.X, PredictType::response);
    row.pmse = pmse(rep.test.response.y, pred);
    row.lambda = fr.model.lambda;
    row.alpha = fr.model.alpha;
    row.n_leaves = fr.model.n_leaves();
  } catch (const std::exception& e) {
    row.error = e.what();
  }
  return row;
}

inline std::vector<ModelSummary> summarize(const SimConfig& cfg, const std::vector<SimRow>& rows) {
  std::vector<ModelSummary> out;
  for (Variant v : cfg.model_set()) {
    ModelSummary s;
    s.model = v;
    double sum = 0.0, sq = 0.0;
    for (const auto& r : rows) {
      if (r.model != v || !r.error.empty() || !std::isfinite(r.pmse)) continue;
      ++s.n_ok;
      sum += r.pmse;
    }
    if (s.n_ok > 0) {
      s.mean_pmse = sum / s.n_ok;
      for (const auto& r : rows)
        if (r.model == v && r.error.empty() && std::isfinite(r.pmse)) sq += (r.pmse - s.mean_pmse) * (r.pmse - s.mean_pmse);
      s.sd_pmse = s.n_ok > 1 ? std::sqrt(sq / (s.n_ok - 1)) : 0.0;
    }
    out.push_back(s);
  }
  return out;
}

/// All replications of an experiment. Replication r uses the seed derived from (seed,
/// "replication", r), so the table does not depend on the number of worker threads; rows
/// are stored in replication order.
inline SimResults run_experiment(const SimConfig& cfg) {
  cfg.validate();
  const auto models = cfg.model_set();
  const std::size_t R = static_cast<std::size_t>(cfg.replications);
  std::vector<std::vector<SimRow>> per_rep(R);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t r = next++; r < R; r = next++) {
      const std::uint64_t s = derive_seed(cfg.seed, "replication", r);
      std::vector<SimRow> rows;
      try {
        const SimReplicate rep = generate(cfg, s);
        for (Variant v : models) rows.push_back(run_model(cfg, rep, v, static_cast<int>(r)));
      } catch (const std::exception& e) {
        rows.clear();
        for (Variant v : models) {
          SimRow row;
          row.replication = static_cast<int>(r);
          row.model = v;
          row.error = e.what();
          rows.push_back(row);
        }
      }
      per_rep[r] = std::move(rows);
    }
  };
  const int T = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(cfg.threads), R));
  if (T <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < T; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  SimResults out;
  out.config = cfg;
  for (auto& rows : per_rep)
    for (auto& row : rows) out.rows.push_back(std::move(row));
  out.summary = summarize(cfg, out.rows);
  return out;
}

namespace detail {

inline std::string fmt(double x) {
  if (std::isnan(x)) return "NA";
  if (std::isinf(x)) return x > 0 ? "Inf" : "-Inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

}  // namespace detail

/// Per-replication table: replication,model,pmse,lambda,alpha,n_leaves,error.
inline std::string results_table(const SimResults& res) {
  std::ostringstream os;
  os << "replication,model,pmse,lambda,alpha,n_leaves,error\n";
  for (const auto& r : res.rows)
    os << r.replication << ',' << to_string(r.model) << ',' << detail::fmt(r.pmse) << ',' << detail::fmt(r.lambda) << ','
       << detail::fmt(r.alpha) << ',' << r.n_leaves << ',' << detail::csv_field(r.error) << '\n';
  return os.str();
}

/// Summary block: model,n_ok,mean_pmse,sd_pmse.
inline std::string summary_table(const SimResults& res) {
  std::ostringstream os;
  os << "model,n_ok,mean_pmse,sd_pmse\n";
  for (const auto& s : res.summary)
    os << to_string(s.model) << ',' << s.n_ok << ',' << detail::fmt(s.mean_pmse) << ',' << detail::fmt(s.sd_pmse) << '\n';
  return os.str();
}

}  // namespace fusedtree
