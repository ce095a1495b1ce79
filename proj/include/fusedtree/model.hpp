#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fusedtree/errors.hpp"
#include "fusedtree/penalty.hpp"
#include "fusedtree/response.hpp"
#include "fusedtree/survival.hpp"
#include "fusedtree/tree.hpp"

namespace fusedtree {

/// Per-column centering and scaling of the omics matrix, estimated on training data.
/// Columns with zero variance are dropped.
struct Standardization {
  Index n_raw = 0;
  std::vector<Index> kept;  // raw column of each retained column
  Vector mean;
  Vector sd;

  static Standardization fit(const Matrix& X) {
    Standardization s;
    s.n_raw = X.cols();
    const Index n = X.rows();
    std::vector<double> means, sds;
    std::vector<Index> dropped;
    for (Index j = 0; j < X.cols(); ++j) {
      const double m = n > 0 ? X.col(j).mean() : 0.0;
      const double ss = (X.col(j).array() - m).square().sum();
      const double sd = n > 1 ? std::sqrt(ss / static_cast<double>(n - 1)) : 0.0;
      if (!(sd > 1e-12 * std::max(1.0, std::abs(m))) || !std::isfinite(sd)) {
        dropped.push_back(j);
        continue;
      }
      s.kept.push_back(j);
      means.push_back(m);
      sds.push_back(sd);
    }
    if (!dropped.empty())
      warn(std::to_string(dropped.size()) + " omics column(s) with zero variance dropped (first: column " +
           std::to_string(dropped.front()) + ")");
    s.mean = Eigen::Map<Vector>(means.data(), static_cast<Index>(means.size()));
    s.sd = Eigen::Map<Vector>(sds.data(), static_cast<Index>(sds.size()));
    return s;
  }

  Index size() const { return static_cast<Index>(kept.size()); }

  Matrix apply(const Matrix& X) const {
    if (X.cols() != n_raw)
      throw DataError("omics matrix has " + std::to_string(X.cols()) + " columns, model expects " + std::to_string(n_raw));
    Matrix out(X.rows(), size());
    for (Index k = 0; k < size(); ++k)
      out.col(k) = (X.col(kept[static_cast<std::size_t>(k)]).array() - mean[k]) / sd[k];
    return out;
  }
};

enum class Variant { fusedtree, zerofus, fulfus, oracle, ridge };

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::fusedtree: return "fusedtree";
    case Variant::zerofus: return "zerofus";
    case Variant::fulfus: return "fulfus";
    case Variant::oracle: return "oracle";
    case Variant::ridge: return "ridge";
  }
  return "?";
}

inline Variant variant_from_string(std::string_view s) {
  if (s == "fusedtree") return Variant::fusedtree;
  if (s == "zerofus") return Variant::zerofus;
  if (s == "fulfus") return Variant::fulfus;
  if (s == "oracle") return Variant::oracle;
  if (s == "ridge") return Variant::ridge;
  throw UsageError("unknown model variant '" + std::string(s) + "'");
}

enum class PredictType { link, response, cumhaz, survival };

inline PredictType predict_type_from_string(std::string_view s) {
  if (s == "link") return PredictType::link;
  if (s == "response") return PredictType::response;
  if (s == "cumhaz") return PredictType::cumhaz;
  if (s == "survival") return PredictType::survival;
  throw UsageError("unknown prediction type '" + std::string(s) + "'");
}

/// A fitted model: tree, coefficients and everything needed to predict from raw inputs.
struct FusedTreeModel {
  Family family = Family::gaussian;
  Variant variant = Variant::fusedtree;
  Tree tree;
  Standardization omics;
  std::vector<Index> linear_columns;  // clinical columns entering linearly
  Vector linear_centers;
  Vector c;     // M leaf intercepts, then linear clinical effects
  Vector beta;  // canonical ordering over the retained leaves
  double lambda = 1.0;
  double alpha = 0.0;  // +inf for the fully fused variant
  std::vector<Index> removed;  // leaves without an omics block, ascending
  BaselineHazard baseline;     // cox only
  double horizon = 0.0;        // default survival horizon

  std::vector<std::string> clinical_names;
  std::vector<std::string> omics_names;     // raw omics columns (before dropping constant ones)
  std::vector<std::string> response_names;  // response column, or time and status columns

  std::uint64_t seed = 0;
  int folds = 0;
  double cv_objective = std::numeric_limits<double>::quiet_NaN();

  Index n_leaves() const { return tree.n_leaves(); }
  Index n_omics() const { return omics.size(); }

  std::vector<Index> slot_of_leaf() const {
    std::vector<Index> slot(static_cast<std::size_t>(n_leaves()), 0);
    for (Index m : removed) slot[static_cast<std::size_t>(m)] = -1;
    Index s = 0;
    for (auto& v : slot)
      if (v >= 0) v = s++;
    return slot;
  }

  Index n_slots() const { return n_leaves() - static_cast<Index>(removed.size()); }

  /// Centered linear clinical columns of Z.
  Matrix linear_design(const Matrix& Z) const {
    Matrix L(Z.rows(), static_cast<Index>(linear_columns.size()));
    for (std::size_t k = 0; k < linear_columns.size(); ++k) {
      if (linear_columns[k] >= Z.cols()) throw DataError("clinical matrix has too few columns");
      L.col(static_cast<Index>(k)) = Z.col(linear_columns[k]).array() - linear_centers[static_cast<Index>(k)];
    }
    return L;
  }

  /// Consistency of the stored pieces; throws DataError on mismatch.
  void validate() const {
    const Index M = n_leaves();
    if (M < 1) throw DataError("model has no leaves");
    if (c.size() != M + static_cast<Index>(linear_columns.size()))
      throw DataError("intercept vector length does not match the tree");
    if (linear_centers.size() != static_cast<Index>(linear_columns.size()))
      throw DataError("linear clinical centers do not match the linear columns");
    for (std::size_t k = 0; k < removed.size(); ++k) {
      if (removed[k] < 0 || removed[k] >= M) throw DataError("removed leaf out of range");
      if (k > 0 && removed[k] <= removed[k - 1]) throw DataError("removed leaves must be ascending");
    }
    if (beta.size() != n_slots() * n_omics()) throw DataError("omics coefficient length does not match (M - removed) * p");
    if (family == Family::cox && baseline.empty()) throw DataError("survival model without baseline hazard");
  }

  Vector linear_predictor(const Matrix& Z, const Matrix& X) const {
    if (Z.rows() != X.rows()) throw DataError("clinical and omics inputs have different row counts");
    const Index S = n_slots(), p = n_omics();
    const Matrix Xs = omics.apply(X);
    const Matrix L = linear_design(Z);
    const auto leaves = tree.assign(Z);
    const auto slot = slot_of_leaf();
    const Index M = n_leaves();
    Vector eta(Z.rows());
    for (Index i = 0; i < Z.rows(); ++i) {
      const Index m = leaves[static_cast<std::size_t>(i)];
      double e = c[m];
      for (Index k = 0; k < L.cols(); ++k) e += L(i, k) * c[M + k];
      const Index s = slot[static_cast<std::size_t>(m)];
      if (s >= 0)
        for (Index j = 0; j < p; ++j) e += Xs(i, j) * beta[j * S + s];
      eta[i] = e;
    }
    return eta;
  }

  /// link: the linear predictor. response: mean (gaussian), probability (binomial) or
  /// relative risk exp(eta) (cox). cumhaz / survival: cox only, at `t` (default horizon).
  Vector predict(const Matrix& Z, const Matrix& X, PredictType type = PredictType::response,
                 std::optional<double> t = std::nullopt) const {
    Vector eta = linear_predictor(Z, X);
    switch (type) {
      case PredictType::link: return eta;
      case PredictType::response:
        if (family == Family::binomial)
          for (Index i = 0; i < eta.size(); ++i) eta[i] = 1.0 / (1.0 + std::exp(-eta[i]));
        else if (family == Family::cox)
          eta = eta.array().exp().matrix();
        return eta;
      case PredictType::cumhaz:
      case PredictType::survival: {
        if (family != Family::cox) throw UsageError("cumulative hazard and survival predictions need a survival model");
        const double h0 = baseline.at(t.value_or(horizon));
        for (Index i = 0; i < eta.size(); ++i) {
          const double H = std::exp(eta[i]) * h0;
          eta[i] = type == PredictType::cumhaz ? H : std::exp(-H);
        }
        return eta;
      }
    }
    return eta;
  }
};

}  // namespace fusedtree
