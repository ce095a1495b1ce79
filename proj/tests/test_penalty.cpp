#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include <random>

#include "fusedtree/penalty.hpp"
#include "test_util.hpp"

using namespace fusedtree;
using namespace testutil;

TEST(FusionEigen, SingleLeaf) {
  const auto e = fusion_eigen(1);
  EXPECT_EQ(e.values.size(), 1);
  EXPECT_EQ(e.values[0], 0.0);
  EXPECT_DOUBLE_EQ(e.basis(0, 0), 1.0);
}

TEST(FusionEigen, TwoLeaves) {
  const auto e = fusion_eigen(2);
  EXPECT_EQ(e.values[0], 0.0);
  EXPECT_EQ(e.values[1], 1.0);
  EXPECT_NEAR(e.basis(0, 0), 1.0 / std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(e.basis(1, 0), 1.0 / std::sqrt(2.0), 1e-15);
}

TEST(FusionEigen, ReconstructsCenteringMatrix) {
  for (Index M = 1; M <= 9; ++M) {
    const auto e = fusion_eigen(M);
    const Matrix A = centering_matrix(M);
    EXPECT_LT((e.basis * e.values.asDiagonal() * e.basis.transpose() - A).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((e.basis.transpose() * e.basis - Matrix::Identity(M, M)).cwiseAbs().maxCoeff(), 1e-12);
    // spectrum agrees with a generic symmetric eigensolver
    Eigen::SelfAdjointEigenSolver<Matrix> es(A);
    Vector sorted = e.values;
    std::sort(sorted.data(), sorted.data() + M);
    EXPECT_LT((es.eigenvalues() - sorted).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_EQ(e.values[0], 0.0);
    for (Index k = 1; k < M; ++k) EXPECT_EQ(e.values[k], 1.0);
  }
}

TEST(FusionQuadratic, HandExample) {
  Vector b(2);
  b << 1, 3;
  EXPECT_DOUBLE_EQ(fusion_quadratic(b, 1.0, 2, 1), 2.0);
}

TEST(FusionQuadratic, FusedCoefficientsAreFree) {
  Vector b(6);
  b << 1, 1, 1, -2, -2, -2;
  EXPECT_EQ(fusion_quadratic(b, 5.0, 3, 2), 0.0);
}

TEST(FusionQuadratic, LengthMismatchThrows) {
  EXPECT_THROW(fusion_quadratic(Vector::Zero(5), 1.0, 2, 3), DataError);
}

TEST(FusionQuadratic, MatchesDenseQuadraticForm) {
  std::mt19937_64 rng(11);
  for (int rep = 0; rep < 100; ++rep) {
    const Index M = rint(rng, 1, 5), p = rint(rng, 1, 10);
    const double alpha = runif(rng, 0.0, 3.0);
    const Vector b = randn(M * p, rng);
    const double dense = alpha * b.dot(dense_omega(M, p) * b);
    const double fast = fusion_quadratic(b, alpha, M, p);
    EXPECT_NEAR(fast, dense, 1e-10 * std::max(1.0, dense));
    EXPECT_GE(fast, 0.0);
  }
}

TEST(FusionInverse, MatchesDenseInverse) {
  std::mt19937_64 rng(5);
  for (int rep = 0; rep < 200; ++rep) {
    const Index M = rint(rng, 1, 6);
    const double lambda = std::exp(runif(rng, -3, 3)), alpha = std::exp(runif(rng, -3, 5));
    const Matrix inv = (lambda * Matrix::Identity(M, M) + alpha * centering_matrix(M)).inverse();
    const auto cf = fusion_inverse(lambda, alpha, M);
    for (Index i = 0; i < M; ++i)
      for (Index k = 0; k < M; ++k)
        EXPECT_NEAR(inv(i, k), i == k ? cf.diagonal : cf.off_diagonal, 1e-10);
  }
}

TEST(FusionInverse, InfiniteAlphaIsAveraging) {
  const auto cf = fusion_inverse(2.0, std::numeric_limits<double>::infinity(), 4);
  EXPECT_DOUBLE_EQ(cf.diagonal, 1.0 / 8.0);
  EXPECT_DOUBLE_EQ(cf.off_diagonal, 1.0 / 8.0);
}

TEST(BlockDesign, SingleLeaf) {
  std::mt19937_64 rng(1);
  const Matrix X = randn(5, 3, rng);
  std::vector<Index> leaf(5, 0);
  const auto d = build_block_design(X, leaf, 1);
  EXPECT_EQ(d.x_tilde(), X);
  EXPECT_EQ(d.U, Matrix::Ones(5, 1));
}

TEST(BlockDesign, TwoRowsByDefinition) {
  Matrix X(2, 1);
  X << 5, 7;
  const auto d = build_block_design(X, std::vector<Index>{0, 1}, 2);
  Matrix expect(2, 2);
  expect << 5, 0, 0, 7;
  EXPECT_EQ(d.x_tilde(), expect);
  EXPECT_EQ(d.U, Matrix::Identity(2, 2));
}

TEST(BlockDesign, Errors) {
  const Matrix X = Matrix::Ones(3, 2);
  EXPECT_THROW(build_block_design(X, std::vector<Index>{0, 0, 0}, 2), DataError);
  EXPECT_THROW(build_block_design(X, std::vector<Index>{0, 1, 2}, 2), DataError);
}

TEST(BlockDesign, FaceSplittingIdentities) {
  std::mt19937_64 rng(3);
  const Index N = 6, p = 3, M = 2;
  const Matrix X = randn(N, p, rng);
  const auto leaf = random_leaves(N, M, rng);
  const auto d = build_block_design(X, leaf, M);
  const Matrix Xt = d.x_tilde();
  EXPECT_LT((Xt - dense_x_tilde(X, leaf, M)).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_EQ(d.U * Matrix::Ones(M, M) * d.U.transpose(), Matrix::Ones(N, N));
  // In the fully fused limit the penalized kernel is (1 / (lambda M)) X X'.
  const double lambda = 1.7;
  Matrix avg = Matrix::Zero(M * p, M * p);
  for (Index j = 0; j < p; ++j) avg.block(j * M, j * M, M, M).setConstant(1.0 / (lambda * M));
  EXPECT_LT((Xt * avg * Xt.transpose() - X * X.transpose() / (lambda * M)).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(TransformDesign, MatchesDensePenaltyInverse) {
  std::mt19937_64 rng(9);
  for (int rep = 0; rep < 30; ++rep) {
    const Index N = rint(rng, 3, 12), p = rint(rng, 1, 4), M = rint(rng, 1, std::min<Index>(N, 4));
    const double lambda = std::exp(runif(rng, -2, 2)), alpha = std::exp(runif(rng, -2, 4));
    const Matrix X = randn(N, p, rng);
    const auto leaf = random_leaves(N, M, rng);
    const auto d = build_block_design(X, leaf, M);
    const Matrix Xc = transform_design(d, fusion_eigen(M), lambda, alpha);
    const Matrix Xt = dense_x_tilde(X, leaf, M);
    const Matrix dense = Xt * (lambda * Matrix::Identity(M * p, M * p) + alpha * dense_omega(M, p)).inverse() * Xt.transpose();
    EXPECT_LT((Xc * Xc.transpose() - dense).cwiseAbs().maxCoeff(), 1e-9);
    FusionKernel K(d);
    EXPECT_LT((K(lambda, alpha) - dense).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(TransformDesign, FixedCase) {
  std::mt19937_64 rng(2);
  const Index N = 5, p = 2, M = 3;
  const Matrix X = randn(N, p, rng);
  const auto leaf = random_leaves(N, M, rng);
  const auto d = build_block_design(X, leaf, M);
  const Matrix Xc = transform_design(d, fusion_eigen(M), 2.0, 1.5);
  const Matrix Xt = dense_x_tilde(X, leaf, M);
  const Matrix dense = Xt * (2.0 * Matrix::Identity(6, 6) + 1.5 * dense_omega(M, p)).inverse() * Xt.transpose();
  EXPECT_LT((Xc * Xc.transpose() - dense).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(TransformDesign, ZeroAlphaAndSingleLeaf) {
  std::mt19937_64 rng(4);
  const Matrix X = randn(7, 3, rng);
  const auto leaf = random_leaves(7, 3, rng);
  const auto d = build_block_design(X, leaf, 3);
  const Matrix Xc = transform_design(d, fusion_eigen(3), 2.5, 0.0);
  const Matrix Xt = d.x_tilde();
  EXPECT_LT((Xc * Xc.transpose() - Xt * Xt.transpose() / 2.5).cwiseAbs().maxCoeff(), 1e-12);

  const auto d1 = build_block_design(X, std::vector<Index>(7, 0), 1);
  const Matrix X1 = transform_design(d1, fusion_eigen(1), 4.0, 123.0);
  EXPECT_LT((X1 - X / 2.0).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(TransformDesign, RejectsNonpositiveLambda) {
  const auto d = build_block_design(Matrix::Ones(2, 1), std::vector<Index>{0, 0}, 1);
  EXPECT_THROW(transform_design(d, fusion_eigen(1), 0.0, 1.0), NumericalError);
}

TEST(FusionKernel, InfiniteAlphaLimit) {
  std::mt19937_64 rng(6);
  const Matrix X = randn(8, 3, rng);
  const auto leaf = random_leaves(8, 3, rng);
  const auto d = build_block_design(X, leaf, 3);
  FusionKernel K(d);
  const Matrix lim = K(1.3, std::numeric_limits<double>::infinity());
  EXPECT_LT((lim - X * X.transpose() / (1.3 * 3)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((K(1.3, 1e12) - lim).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(FusionKernel, RemovedLeavesDropTheirRows) {
  std::mt19937_64 rng(8);
  const Index N = 10, p = 2, M = 3;
  const Matrix X = randn(N, p, rng);
  const auto leaf = random_leaves(N, M, rng);
  const std::vector<Index> removed{1};
  const auto d = build_block_design(X, leaf, M, nullptr, removed);
  EXPECT_EQ(d.n_slots(), 2);
  const Matrix Xt = d.x_tilde();
  EXPECT_EQ(Xt.cols(), 2 * p);
  for (Index i = 0; i < N; ++i)
    if (leaf[static_cast<std::size_t>(i)] == 1) EXPECT_EQ(Xt.row(i).norm(), 0.0);
  const Matrix dense = Xt * (0.8 * Matrix::Identity(4, 4) + 2.0 * dense_omega(2, p)).inverse() * Xt.transpose();
  EXPECT_LT((FusionKernel(d)(0.8, 2.0) - dense).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(RecoverBeta, MatchesDenseFormula) {
  std::mt19937_64 rng(12);
  for (int rep = 0; rep < 20; ++rep) {
    const Index N = 9, p = 3, M = rint(rng, 1, 3);
    const double lambda = std::exp(runif(rng, -1, 1)), alpha = std::exp(runif(rng, -1, 3));
    const Matrix X = randn(N, p, rng);
    const auto leaf = random_leaves(N, M, rng);
    const auto d = build_block_design(X, leaf, M);
    const Vector v = randn(N, rng);
    const Matrix Xt = dense_x_tilde(X, leaf, M);
    const Vector dense = (lambda * Matrix::Identity(M * p, M * p) + alpha * dense_omega(M, p)).inverse() * Xt.transpose() * v;
    EXPECT_LT((recover_beta(d, v, lambda, alpha) - dense).cwiseAbs().maxCoeff(), 1e-10);
  }
}
