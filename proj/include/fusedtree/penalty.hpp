#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "fusedtree/errors.hpp"
#include "fusedtree/response.hpp"

namespace fusedtree {

// Coefficient vectors over the omics blocks use covariate-major ordering with the leaf
// index running fastest: beta[j * M + m] is the effect of covariate j in leaf slot m. In
// this ordering the fusion matrix is literally I_p (x) (I_M - 11'/M).

/// Ridge strength `lambda`, fusion strength `alpha` (may be +inf for the fully fused
/// limit), number of fused leaves and number of omics covariates.
struct PenaltyStructure {
  double lambda = 1.0;
  double alpha = 0.0;
  Index n_leaves = 1;
  Index n_omics = 0;

  void validate() const {
    if (!(lambda > 0.0) || !std::isfinite(lambda))
      throw NumericalError("lambda must be positive and finite");
    if (!(alpha >= 0.0)) throw NumericalError("alpha must be nonnegative");
    if (n_leaves < 1) throw DataError("at least one leaf is required");
    if (n_omics < 0) throw DataError("negative omics dimension");
  }

  bool fully_fused() const { return std::isinf(alpha); }
};

/// Eigendecomposition of the centering matrix A = I_M - 11'/M.
struct FusionEigen {
  Matrix basis;   // columns are orthonormal eigenvectors
  Vector values;  // one 0 (first) followed by M - 1 ones
};

/// Closed-form eigendecomposition of the centering matrix. The zero eigenvalue pairs with
/// the normalized all-ones vector; the remaining columns are Helmert contrasts, so the
/// basis is identical on every platform.
inline FusionEigen fusion_eigen(Index M) {
  if (M < 1) throw DataError("fusion_eigen requires M >= 1");
  FusionEigen out{Matrix::Zero(M, M), Vector::Ones(M)};
  out.values[0] = 0.0;
  out.basis.col(0).setConstant(1.0 / std::sqrt(static_cast<double>(M)));
  for (Index k = 1; k < M; ++k) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(k * (k + 1)));
    for (Index i = 0; i < k; ++i) out.basis(i, k) = scale;
    out.basis(k, k) = -static_cast<double>(k) * scale;
  }
  return out;
}

/// Dense A = I_M - 11'/M.
inline Matrix centering_matrix(Index M) {
  return Matrix::Identity(M, M) - Matrix::Constant(M, M, 1.0 / static_cast<double>(M));
}

/// alpha * sum_j sum_m (beta_(m)j - mean_m beta_(m)j)^2, i.e. alpha * beta' Omega beta.
inline double fusion_quadratic(const Vector& beta, double alpha, Index M, Index p) {
  if (beta.size() != M * p)
    throw DataError("coefficient length " + std::to_string(beta.size()) + " does not match M*p = " +
                    std::to_string(M * p));
  double total = 0.0;
  for (Index j = 0; j < p; ++j) {
    const auto block = beta.segment(j * M, M);
    const double mean = block.mean();
    total += (block.array() - mean).square().sum();
  }
  return alpha * total;
}

/// Entries of (lambda I + alpha A)^{-1}: every diagonal element equals `diagonal`, every
/// off-diagonal element equals `off_diagonal`.
struct FusionInverse {
  double diagonal;
  double off_diagonal;
};

inline FusionInverse fusion_inverse(double lambda, double alpha, Index M) {
  const double m = static_cast<double>(M);
  if (std::isinf(alpha)) return {1.0 / (lambda * m), 1.0 / (lambda * m)};
  const double a = 1.0 / lambda - alpha * (1.0 - 1.0 / m) / (lambda * lambda + lambda * alpha);
  const double b = alpha / (lambda * lambda * m + lambda * alpha * m);
  return {a, b};
}

/// Tree-induced design. Rows carry their leaf; the omics block of a row sits in the slot of
/// its leaf, and leaves without an omics block (removed leaves) contribute zero rows to
/// X-tilde.
struct BlockDesign {
  Matrix X;                          // N x p omics (standardized)
  Matrix U;                          // N x (M + q_c): leaf indicators, then linear clinical terms
  std::vector<Index> leaf;           // 0-based leaf of each row
  Index n_leaves = 1;                // M
  std::vector<Index> slot_of_leaf;   // slot in the omics blocks, -1 when removed
  std::vector<Index> fused_leaves;   // leaves in slot order

  Index rows() const { return X.rows(); }
  Index n_omics() const { return X.cols(); }
  Index n_slots() const { return static_cast<Index>(fused_leaves.size()); }
  Index n_linear() const { return U.cols() - n_leaves; }
  Index slot(Index row) const { return slot_of_leaf[static_cast<std::size_t>(leaf[static_cast<std::size_t>(row)])]; }

  /// Materialized X-tilde, N x (slots * p), canonical ordering.
  Matrix x_tilde() const {
    const Index S = n_slots();
    Matrix out = Matrix::Zero(rows(), S * n_omics());
    for (Index i = 0; i < rows(); ++i) {
      const Index s = slot(i);
      if (s < 0) continue;
      for (Index j = 0; j < n_omics(); ++j) out(i, j * S + s) = X(i, j);
    }
    return out;
  }

  Matrix indicator() const { return U.leftCols(n_leaves); }

  PenaltyStructure penalties(double lambda, double alpha) const {
    return {lambda, alpha, std::max<Index>(n_slots(), 1), n_omics()};
  }
};

inline BlockDesign build_block_design(const Matrix& X, std::span<const Index> leaf, Index M,
                                      const Matrix* clinical_linear = nullptr,
                                      std::span<const Index> removed = {}) {
  const Index N = X.rows();
  if (static_cast<Index>(leaf.size()) != N) throw DataError("leaf assignment length differs from N");
  if (M < 1) throw DataError("at least one leaf is required");
  if (clinical_linear && clinical_linear->rows() != N)
    throw DataError("linear clinical matrix has the wrong number of rows");

  BlockDesign d;
  d.X = X;
  d.n_leaves = M;
  d.leaf.assign(leaf.begin(), leaf.end());
  std::vector<Index> count(static_cast<std::size_t>(M), 0);
  for (Index m : d.leaf) {
    if (m < 0 || m >= M) throw DataError("leaf index " + std::to_string(m) + " out of range");
    ++count[static_cast<std::size_t>(m)];
  }
  for (Index m = 0; m < M; ++m)
    if (count[static_cast<std::size_t>(m)] == 0) throw DataError("leaf " + std::to_string(m) + " is empty");

  d.slot_of_leaf.assign(static_cast<std::size_t>(M), 0);
  for (Index m : removed) {
    if (m < 0 || m >= M) throw DataError("removed leaf " + std::to_string(m) + " out of range");
    d.slot_of_leaf[static_cast<std::size_t>(m)] = -1;
  }
  for (Index m = 0; m < M; ++m) {
    if (d.slot_of_leaf[static_cast<std::size_t>(m)] < 0) continue;
    d.slot_of_leaf[static_cast<std::size_t>(m)] = static_cast<Index>(d.fused_leaves.size());
    d.fused_leaves.push_back(m);
  }

  const Index qc = clinical_linear ? clinical_linear->cols() : 0;
  d.U = Matrix::Zero(N, M + qc);
  for (Index i = 0; i < N; ++i) d.U(i, d.leaf[static_cast<std::size_t>(i)]) = 1.0;
  if (qc > 0) d.U.rightCols(qc) = *clinical_linear;
  return d;
}

/// X-check = X-tilde V_Omega (lambda I + alpha D_Omega)^{-1/2}, built per covariate block
/// (one M x M product per row and covariate) without forming any Mp x Mp matrix. Satisfies
/// X-check X-check' = X-tilde (lambda I + alpha Omega)^{-1} X-tilde'.
inline Matrix transform_design(const BlockDesign& d, const FusionEigen& eig, double lambda, double alpha) {
  if (!(lambda > 0.0)) throw NumericalError("lambda must be positive");
  const Index S = d.n_slots();
  const Index p = d.n_omics();
  if (S == 0 || p == 0) return Matrix::Zero(d.rows(), 0);
  if (eig.basis.rows() != S) throw DataError("eigenbasis size differs from the number of fused leaves");

  Vector scale(S);
  for (Index k = 0; k < S; ++k) {
    const double denom = std::isinf(alpha) ? (eig.values[k] > 0.5 ? std::numeric_limits<double>::infinity()
                                                                   : lambda)
                                           : lambda + alpha * eig.values[k];
    scale[k] = 1.0 / std::sqrt(denom);
  }
  Matrix out = Matrix::Zero(d.rows(), S * p);
  for (Index i = 0; i < d.rows(); ++i) {
    const Index s = d.slot(i);
    if (s < 0) continue;
    const auto vrow = eig.basis.row(s);
    for (Index j = 0; j < p; ++j) {
      const double x = d.X(i, j);
      for (Index k = 0; k < S; ++k) out(i, j * S + k) = x * vrow[k] * scale[k];
    }
  }
  return out;
}

/// The N x N kernel X-check X-check' for any (lambda, alpha), assembled from two
/// penalty-free Gram matrices: the part spanned by the zero-eigenvalue direction of the
/// fusion matrix (scaled by 1/lambda) and the remainder (scaled by 1/(lambda + alpha)).
/// Building it costs one O(N^2 p) product; every evaluation afterwards is O(N^2).
class FusionKernel {
public:
  FusionKernel() = default;

  explicit FusionKernel(const BlockDesign& d) {
    const Index N = d.rows();
    const Index S = d.n_slots();
    shared_ = Matrix::Zero(N, N);
    contrast_ = Matrix::Zero(N, N);
    if (S == 0 || d.n_omics() == 0) {
      empty_ = true;
      return;
    }
    Matrix Xr = d.X;
    for (Index i = 0; i < N; ++i)
      if (d.slot(i) < 0) Xr.row(i).setZero();
    const Matrix gram = Xr * Xr.transpose();
    const double inv_s = 1.0 / static_cast<double>(S);
    for (Index k = 0; k < N; ++k) {
      for (Index i = 0; i < N; ++i) {
        const double shared = gram(i, k) * inv_s;
        shared_(i, k) = shared;
        const bool same = d.slot(i) >= 0 && d.slot(i) == d.slot(k);
        contrast_(i, k) = (same ? gram(i, k) : 0.0) - shared;
      }
    }
  }

  Index size() const { return shared_.rows(); }
  bool empty() const { return empty_; }
  const Matrix& shared() const { return shared_; }
  const Matrix& contrast() const { return contrast_; }

  Matrix operator()(double lambda, double alpha) const {
    if (std::isinf(alpha)) return shared_ / lambda;
    return shared_ / lambda + contrast_ / (lambda + alpha);
  }

  /// Kernel restricted to the given rows and columns.
  Matrix block(std::span<const Index> rows, std::span<const Index> cols, double lambda, double alpha) const {
    const double w0 = 1.0 / lambda;
    const double w1 = std::isinf(alpha) ? 0.0 : 1.0 / (lambda + alpha);
    Matrix out(static_cast<Index>(rows.size()), static_cast<Index>(cols.size()));
    for (std::size_t c = 0; c < cols.size(); ++c)
      for (std::size_t r = 0; r < rows.size(); ++r)
        out(static_cast<Index>(r), static_cast<Index>(c)) =
            w0 * shared_(rows[r], cols[c]) + w1 * contrast_(rows[r], cols[c]);
    return out;
  }

private:
  Matrix shared_;
  Matrix contrast_;
  bool empty_ = false;
};

/// Omics coefficients from the dual vector v: beta = Lambda^{-1} X-tilde' v, using the
/// closed-form inverse of the penalty matrix.
inline Vector recover_beta(const BlockDesign& d, const Vector& v, double lambda, double alpha) {
  const Index S = d.n_slots();
  const Index p = d.n_omics();
  Vector beta = Vector::Zero(S * p);
  if (S == 0 || p == 0) return beta;
  Matrix proj = Matrix::Zero(p, S);  // column s holds X_(s)' v_(s)
  for (Index i = 0; i < d.rows(); ++i) {
    const Index s = d.slot(i);
    if (s >= 0) proj.col(s).noalias() += v[i] * d.X.row(i).transpose();
  }
  const FusionInverse inv = fusion_inverse(lambda, alpha, S);
  const double diff = inv.diagonal - inv.off_diagonal;
  for (Index j = 0; j < p; ++j) {
    const double total = proj.row(j).sum();
    for (Index s = 0; s < S; ++s) beta[j * S + s] = diff * proj(j, s) + inv.off_diagonal * total;
  }
  return beta;
}

/// X-tilde beta for rows of `d` (canonical coefficient ordering).
inline Vector omics_linear_predictor(const BlockDesign& d, const Vector& beta) {
  const Index S = d.n_slots();
  const Index p = d.n_omics();
  Vector out = Vector::Zero(d.rows());
  if (S == 0 || p == 0) return out;
  for (Index i = 0; i < d.rows(); ++i) {
    const Index s = d.slot(i);
    if (s < 0) continue;
    double acc = 0.0;
    for (Index j = 0; j < p; ++j) acc += d.X(i, j) * beta[j * S + s];
    out[i] = acc;
  }
  return out;
}

}  // namespace fusedtree
