#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <span>
#include <string>
#include <string_view>

#include "fusedtree/errors.hpp"

namespace fusedtree {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

enum class Family { gaussian, binomial, cox };

inline std::string to_string(Family f) {
  switch (f) {
    case Family::gaussian: return "gaussian";
    case Family::binomial: return "binomial";
    case Family::cox: return "cox";
  }
  return "?";
}

inline Family family_from_string(std::string_view s) {
  if (s == "gaussian") return Family::gaussian;
  if (s == "binomial") return Family::binomial;
  if (s == "cox") return Family::cox;
  throw UsageError("unknown response family '" + std::string(s) + "'");
}

/// Outcome vector of one of the three supported families. For survival data `y` holds the
/// observed times and `status` the event indicators; `status` is empty otherwise.
struct Response {
  Family family = Family::gaussian;
  Vector y;
  Vector status;

  static Response gaussian(Vector y) { return {Family::gaussian, std::move(y), Vector()}; }

  static Response binomial(Vector y) {
    for (Index i = 0; i < y.size(); ++i)
      if (y[i] != 0.0 && y[i] != 1.0) throw DataError("binary response must be coded 0/1");
    return {Family::binomial, std::move(y), Vector()};
  }

  static Response survival(Vector time, Vector status) {
    if (time.size() != status.size()) throw DataError("time and status lengths differ");
    for (Index i = 0; i < time.size(); ++i) {
      if (!(time[i] > 0.0) || !std::isfinite(time[i]))
        throw DataError("survival times must be positive and finite");
      if (status[i] != 0.0 && status[i] != 1.0) throw DataError("status must be coded 0/1");
    }
    return {Family::cox, std::move(time), std::move(status)};
  }

  Index size() const { return y.size(); }
  bool is_survival() const { return family == Family::cox; }

  Response subset(std::span<const Index> rows) const {
    Response out{family, Vector(static_cast<Index>(rows.size())), Vector()};
    if (is_survival()) out.status.resize(out.y.size());
    for (std::size_t k = 0; k < rows.size(); ++k) {
      out.y[static_cast<Index>(k)] = y[rows[k]];
      if (is_survival()) out.status[static_cast<Index>(k)] = status[rows[k]];
    }
    return out;
  }

  /// Class label used for fold stratification: y for binary data, the event indicator for
  /// survival data, none (-1) for continuous data.
  int stratum(Index i) const {
    if (family == Family::binomial) return static_cast<int>(y[i]);
    if (family == Family::cox) return static_cast<int>(status[i]);
    return -1;
  }
};

inline Matrix select_rows(const Matrix& m, std::span<const Index> rows) {
  Matrix out(static_cast<Index>(rows.size()), m.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) out.row(static_cast<Index>(k)) = m.row(rows[k]);
  return out;
}

inline Vector select(const Vector& v, std::span<const Index> rows) {
  Vector out(static_cast<Index>(rows.size()));
  for (std::size_t k = 0; k < rows.size(); ++k) out[static_cast<Index>(k)] = v[rows[k]];
  return out;
}

}  // namespace fusedtree
