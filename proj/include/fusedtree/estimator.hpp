#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "fusedtree/errors.hpp"
#include "fusedtree/penalty.hpp"
#include "fusedtree/response.hpp"
#include "fusedtree/survival.hpp"

namespace fusedtree {

// Estimation works in the N-dimensional dual space. With K = X-tilde Lambda^{-1} X-tilde'
// (see FusionKernel) the omics coefficients are beta = Lambda^{-1} X-tilde' v for a dual
// vector v, the omics part of the linear predictor is K v and the ridge/fusion penalty
// beta' Lambda beta equals v' K v. No Mp-dimensional system is ever solved.

struct IrlsOptions {
  double tol = 1e-10;
  int max_iter = 100;
  bool throw_on_failure = true;
  double intercept_cap = 20.0;  // binomial: bound on leaf intercepts (link scale)
};

/// Coefficients in the dual parameterization plus the training linear predictor.
struct KernelFit {
  Vector c;    // unpenalized coefficients (leaf intercepts, then linear clinical effects)
  Vector v;    // dual vector
  Vector eta;  // U c + K v
  std::vector<double> trace;  // penalized objective per iteration (IRLS only)
  int iterations = 0;
  bool converged = true;
  std::optional<BreslowFit> breslow;  // cox only
};

namespace detail {

inline Vector gls(const Matrix& U, const Matrix& SU, const Vector& Sz) {
  const Matrix G = U.transpose() * SU;
  Eigen::LDLT<Matrix> ldlt(G);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
    throw DataError("unpenalized design is rank deficient");
  const double scale = G.diagonal().cwiseAbs().maxCoeff();
  if (ldlt.vectorD().minCoeff() <= 1e-12 * std::max(scale, 1e-300))
    throw DataError("unpenalized design is rank deficient (duplicate or constant clinical columns?)");
  return ldlt.solve(U.transpose() * Sz);
}

// One penalized weighted least-squares solve in dual form:
// minimize (z - U c - X b)' W (z - U c - X b) + b' Lambda b.
inline void weighted_dual_solve(const Matrix& K, const Matrix& U, const Vector& w, const Vector& z,
                                Vector& c, Vector& v) {
  const Index n = K.rows();
  const Vector s = w.cwiseSqrt();
  Matrix B = s.asDiagonal() * K * s.asDiagonal();
  B.diagonal().array() += 1.0;
  Eigen::LLT<Matrix> llt(B);
  if (llt.info() != Eigen::Success) throw NumericalError("weighted kernel system is not positive definite");
  const Matrix SU = s.asDiagonal() * llt.solve(s.asDiagonal() * U);
  const Vector Sz = s.asDiagonal() * llt.solve(s.cwiseProduct(z));
  c = U.cols() > 0 ? gls(U, SU, Sz) : Vector();
  v = U.cols() > 0 ? Vector(Sz - SU * c) : Sz;
  (void)n;
}

inline double logistic(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

inline double log1pexp(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

inline double binomial_loglik(const Vector& eta, const Vector& y) {
  double ll = 0.0;
  for (Index i = 0; i < eta.size(); ++i) ll += y[i] * eta[i] - log1pexp(eta[i]);
  return ll;
}

}  // namespace detail

/// Gaussian fit given the kernel: W = (K + I)^{-1}, c = (U'WU)^{-1} U'W y, v = W (y - U c).
inline KernelFit kernel_fit_gaussian(const Matrix& K, const Matrix& U, const Vector& y) {
  const Index n = y.size();
  Matrix A = K;
  A.diagonal().array() += 1.0;
  Eigen::LLT<Matrix> llt(A);
  if (llt.info() != Eigen::Success) throw NumericalError("kernel system is not positive definite");
  const Matrix WU = llt.solve(U);
  const Vector Wy = llt.solve(y);
  KernelFit f;
  f.c = U.cols() > 0 ? detail::gls(U, WU, Wy) : Vector();
  f.v = U.cols() > 0 ? Vector(Wy - WU * f.c) : Wy;
  // (K + I) v = y - U c
  f.eta = y - f.v;
  (void)n;
  return f;
}

/// Penalized binomial IRLS in dual form. Maximizes loglik - (1/2) beta' Lambda beta, with
/// step-halving so the objective never decreases.
inline KernelFit kernel_fit_binomial(const Matrix& K, const Matrix& U, const Vector& y, Index n_leaves,
                                     const IrlsOptions& opt = {}) {
  const Index n = y.size();
  if (y.sum() <= 0.0 || y.sum() >= static_cast<double>(n)) throw DataError("binary response needs both classes");
  KernelFit f;
  f.c = Vector::Zero(U.cols());
  for (Index m = 0; m < n_leaves; ++m) {
    const double cnt = U.col(m).sum();
    const double p = cnt > 0 ? std::clamp(U.col(m).dot(y) / cnt, 0.01, 0.99) : 0.5;
    f.c[m] = std::log(p / (1.0 - p));
  }
  f.v = Vector::Zero(n);
  f.eta = U * f.c;
  auto objective = [&](const Vector& eta, const Vector& v) { return detail::binomial_loglik(eta, y) - 0.5 * v.dot(K * v); };
  double obj = objective(f.eta, f.v);
  f.trace.push_back(obj);
  f.converged = false;
  bool capped = false;
  for (int it = 1; it <= opt.max_iter; ++it) {
    Vector w(n), z(n);
    for (Index i = 0; i < n; ++i) {
      const double mu = detail::logistic(f.eta[i]);
      w[i] = std::max(mu * (1.0 - mu), 1e-10);
      z[i] = f.eta[i] + (y[i] - mu) / w[i];
    }
    Vector c_new, v_new;
    detail::weighted_dual_solve(K, U, w, z, c_new, v_new);
    for (Index m = 0; m < n_leaves; ++m) {
      if (std::abs(c_new[m]) > opt.intercept_cap) {
        c_new[m] = std::clamp(c_new[m], -opt.intercept_cap, opt.intercept_cap);
        capped = true;
      }
    }
    Vector dc = c_new - f.c, dv = v_new - f.v;
    double step = 1.0, new_obj = 0.0;
    Vector eta_new;
    for (int h = 0; h < 40; ++h) {
      eta_new = U * (f.c + step * dc) + K * (f.v + step * dv);
      new_obj = objective(eta_new, f.v + step * dv);
      if (new_obj >= obj) break;
      step *= 0.5;
    }
    f.iterations = it;
    if (!(new_obj >= obj)) {
      // No ascent left at working precision.
      f.converged = std::abs(new_obj - obj) < 1e-8 * (1.0 + std::abs(obj));
      break;
    }
    f.c += step * dc;
    f.v += step * dv;
    f.eta = eta_new;
    const double delta = new_obj - obj;
    obj = new_obj;
    f.trace.push_back(obj);
    if (std::abs(delta) < opt.tol) {
      f.converged = true;
      break;
    }
  }
  if (capped) warn("binary fit: leaf intercept reached the cap of " + std::to_string(opt.intercept_cap) + " (separated leaf)");
  if (!f.converged && opt.throw_on_failure)
    throw NumericalError("binary IRLS did not converge in " + std::to_string(opt.max_iter) + " iterations");
  return f;
}

/// Penalized Cox IRLS in dual form with the Breslow baseline re-estimated each iteration.
/// Weights H0(t_i) exp(eta_i), working residual delta_i - weight. Leaf intercepts are only
/// identified up to a common shift (absorbed by the baseline); after every step they are
/// shifted so their row-weighted mean is zero.
inline KernelFit kernel_fit_cox(const Matrix& K, const Matrix& U, const Vector& time, const Vector& status,
                                Index n_leaves, const IrlsOptions& opt = {}) {
  const Index n = time.size();
  if (status.sum() <= 0.0) throw DataError("survival data without events");
  KernelFit f;
  f.c = Vector::Zero(U.cols());
  f.v = Vector::Zero(n);
  f.eta = Vector::Zero(n);
  auto recenter = [&](Vector& c, Vector& eta) {
    if (n_leaves == 0) return;
    const double shift = (U.leftCols(n_leaves) * c.head(n_leaves)).mean();
    c.head(n_leaves).array() -= shift;
    eta.array() -= shift;
  };
  BreslowFit bf = breslow(f.eta, time, status);
  auto objective = [&](const Vector& eta, const Vector& v, BreslowFit& out) {
    out = breslow(eta, time, status);
    return cox_loglik(eta, out, status) - 0.5 * v.dot(K * v);
  };
  double obj = objective(f.eta, f.v, bf);
  f.trace.push_back(obj);
  f.converged = false;
  for (int it = 1; it <= opt.max_iter; ++it) {
    Vector w(n), z(n);
    for (Index i = 0; i < n; ++i) {
      const double wi = std::max(bf.subject_cumhaz[i] * std::exp(f.eta[i]), 1e-12);
      w[i] = wi;
      z[i] = f.eta[i] + (status[i] - wi) / wi;
    }
    Vector c_new, v_new;
    detail::weighted_dual_solve(K, U, w, z, c_new, v_new);
    const Vector dc = c_new - f.c, dv = v_new - f.v;
    double step = 1.0, new_obj = 0.0;
    Vector eta_new, c_try;
    BreslowFit bf_new;
    for (int h = 0; h < 40; ++h) {
      c_try = f.c + step * dc;
      eta_new = U * c_try + K * (f.v + step * dv);
      recenter(c_try, eta_new);
      new_obj = objective(eta_new, f.v + step * dv, bf_new);
      if (new_obj >= obj) break;
      step *= 0.5;
    }
    f.iterations = it;
    if (!(new_obj >= obj)) {
      f.converged = std::abs(new_obj - obj) < 1e-8 * (1.0 + std::abs(obj));
      break;
    }
    f.c = c_try;
    f.v += step * dv;
    f.eta = eta_new;
    bf = std::move(bf_new);
    const double delta = new_obj - obj;
    obj = new_obj;
    f.trace.push_back(obj);
    if (std::abs(delta) < opt.tol) {
      f.converged = true;
      break;
    }
  }
  f.breslow = bf;
  if (!f.converged && opt.throw_on_failure)
    throw NumericalError("Cox IRLS did not converge in " + std::to_string(opt.max_iter) + " iterations");
  return f;
}

inline KernelFit kernel_fit(const Matrix& K, const Matrix& U, const Response& r, Index n_leaves,
                            const IrlsOptions& opt = {}) {
  switch (r.family) {
    case Family::gaussian: return kernel_fit_gaussian(K, U, r.y);
    case Family::binomial: return kernel_fit_binomial(K, U, r.y, n_leaves, opt);
    case Family::cox: return kernel_fit_cox(K, U, r.y, r.status, n_leaves, opt);
  }
  throw UsageError("unknown family");
}

/// Fitted coefficients in the original parameterization.
struct Coefficients {
  Vector c;     // leaf intercepts (all M leaves), then linear clinical effects
  Vector beta;  // canonical ordering over the retained leaves
  Vector eta;   // training linear predictor
  double lambda = 1.0;
  double alpha = 0.0;
  std::optional<BreslowFit> breslow;
  std::vector<double> trace;
  int iterations = 0;
  bool converged = true;
};

inline void check_penalties(double lambda, double alpha) {
  if (!(lambda > 0.0) || !std::isfinite(lambda)) throw NumericalError("lambda must be positive and finite");
  if (!(alpha >= 0.0)) throw NumericalError("alpha must be nonnegative");
}

inline Coefficients fit(const BlockDesign& d, const Response& r, double lambda, double alpha,
                        const IrlsOptions& opt = {}, const FusionKernel* kernel = nullptr) {
  check_penalties(lambda, alpha);
  if (r.size() != d.rows()) throw DataError("response length differs from design rows");
  std::optional<FusionKernel> own;
  if (!kernel) kernel = &own.emplace(d);
  const Matrix K = (*kernel)(lambda, alpha);
  KernelFit kf = kernel_fit(K, d.U, r, d.n_leaves, opt);
  Coefficients out;
  out.c = std::move(kf.c);
  out.beta = recover_beta(d, kf.v, lambda, alpha);
  out.eta = std::move(kf.eta);
  out.lambda = lambda;
  out.alpha = alpha;
  out.breslow = std::move(kf.breslow);
  out.trace = std::move(kf.trace);
  out.iterations = kf.iterations;
  out.converged = kf.converged;
  return out;
}

inline Coefficients fit_gaussian(const BlockDesign& d, const Vector& y, double lambda, double alpha,
                                 const FusionKernel* kernel = nullptr) {
  return fit(d, Response::gaussian(y), lambda, alpha, {}, kernel);
}

inline Coefficients fit_binary(const BlockDesign& d, const Vector& y, double lambda, double alpha,
                               const IrlsOptions& opt = {}, const FusionKernel* kernel = nullptr) {
  return fit(d, Response::binomial(y), lambda, alpha, opt, kernel);
}

inline Coefficients fit_cox(const BlockDesign& d, const Vector& time, const Vector& status, double lambda,
                            double alpha, const IrlsOptions& opt = {}, const FusionKernel* kernel = nullptr) {
  return fit(d, Response::survival(time, status), lambda, alpha, opt, kernel);
}

/// The alpha -> infinity limit: one ridge regression with penalty lambda * M' on the
/// unblocked omics matrix (rows of removed leaves zeroed) plus the unpenalized design,
/// solved in primal form; the shared coefficients are copied into every retained leaf.
inline Coefficients fit_alpha_limit(const BlockDesign& d, const Response& r, double lambda,
                                    const IrlsOptions& opt = {}) {
  check_penalties(lambda, 0.0);
  const double inf = std::numeric_limits<double>::infinity();
  if (r.family != Family::gaussian) return fit(d, r, lambda, inf, opt);
  const Index S = d.n_slots(), p = d.n_omics(), q = d.U.cols();
  Matrix X = d.X;
  for (Index i = 0; i < d.rows(); ++i)
    if (d.slot(i) < 0) X.row(i).setZero();
  if (S == 0) X.resize(d.rows(), 0);
  const Index pe = X.cols();
  Matrix D(d.rows(), q + pe);
  D << d.U, X;
  Matrix A = D.transpose() * D;
  A.diagonal().tail(pe).array() += lambda * static_cast<double>(S);
  // Rank is judged on the unpenalized block alone: with a large lambda the penalized
  // diagonal would dominate any threshold relative to the whole matrix.
  const Matrix G = A.topLeftCorner(q, q);
  Eigen::LDLT<Matrix> gl(G);
  if (q > 0 && (gl.info() != Eigen::Success || !gl.isPositive() ||
                gl.vectorD().minCoeff() <= 1e-12 * G.diagonal().cwiseAbs().maxCoeff()))
    throw DataError("unpenalized design is rank deficient");
  Eigen::LDLT<Matrix> ldlt(A);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) throw DataError("unpenalized design is rank deficient");
  const Vector theta = ldlt.solve(D.transpose() * r.y);
  Coefficients out;
  out.c = theta.head(q);
  out.beta = Vector::Zero(S * p);
  for (Index j = 0; j < pe; ++j)
    for (Index s = 0; s < S; ++s) out.beta[j * S + s] = theta[q + j];
  out.eta = D * theta;
  out.lambda = lambda;
  out.alpha = inf;
  return out;
}

/// Penalized objective in the original parameterization: the Gaussian residual sum of
/// squares plus beta' Lambda beta, or minus (loglik - beta' Lambda beta / 2) for the
/// other families (so smaller is better for all three).
inline double penalized_objective(const BlockDesign& d, const Response& r, const Vector& c, const Vector& beta,
                                  double lambda, double alpha) {
  const Vector eta = d.U * c + omics_linear_predictor(d, beta);
  const Index S = std::max<Index>(d.n_slots(), 1);
  const double pen = lambda * beta.squaredNorm() + (std::isinf(alpha) ? 0.0 : fusion_quadratic(beta, alpha, S, d.n_omics()));
  switch (r.family) {
    case Family::gaussian: return (r.y - eta).squaredNorm() + pen;
    case Family::binomial: return -(detail::binomial_loglik(eta, r.y) - 0.5 * pen);
    case Family::cox: return -(cox_loglik(eta, r.y, r.status) - 0.5 * pen);
  }
  return 0.0;
}

}  // namespace fusedtree
