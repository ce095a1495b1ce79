#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "fusedtree/errors.hpp"
#include "fusedtree/response.hpp"
#include "fusedtree/survival.hpp"

namespace fusedtree {

enum class MetricKind { pmse, harrell_c, ipcw_c, td_auc, loglik, deviance };

inline std::string to_string(MetricKind k) {
  switch (k) {
    case MetricKind::pmse: return "pmse";
    case MetricKind::harrell_c: return "harrell_c";
    case MetricKind::ipcw_c: return "ipcw_c";
    case MetricKind::td_auc: return "td_auc";
    case MetricKind::loglik: return "loglik";
    case MetricKind::deviance: return "deviance";
  }
  return "?";
}

struct MetricValue {
  MetricKind kind = MetricKind::pmse;
  double value = 0.0;
  std::optional<double> horizon;

  bool higher_is_better() const {
    return kind == MetricKind::harrell_c || kind == MetricKind::ipcw_c || kind == MetricKind::td_auc ||
           kind == MetricKind::loglik;
  }
};

inline double pmse(const Vector& y, const Vector& y_hat) {
  if (y.size() != y_hat.size()) throw DataError("pmse: lengths differ");
  if (y.size() == 0) throw DataError("pmse: empty input");
  return (y - y_hat).squaredNorm() / static_cast<double>(y.size());
}

/// Mean binomial deviance of probabilities `prob` (clipped away from 0 and 1).
inline double binomial_deviance(const Vector& y, const Vector& prob) {
  if (y.size() != prob.size()) throw DataError("deviance: lengths differ");
  if (y.size() == 0) throw DataError("deviance: empty input");
  double total = 0.0;
  for (Index i = 0; i < y.size(); ++i) {
    const double p = std::clamp(prob[i], 1e-15, 1.0 - 1e-15);
    total -= 2.0 * (y[i] * std::log(p) + (1.0 - y[i]) * std::log1p(-p));
  }
  return total / static_cast<double>(y.size());
}

namespace detail {

inline double pair_score(double a, double b) { return a > b ? 1.0 : (a == b ? 0.5 : 0.0); }

// Subject i (an event) is comparable with j when j is known to outlive it: t_j > t_i, or
// t_j = t_i with j censored.
inline bool comparable(const Vector& time, const Vector& status, Index i, Index j) {
  if (i == j || status[i] <= 0.0) return false;
  return time[j] > time[i] || (time[j] == time[i] && status[j] <= 0.0);
}

inline void check_survival_inputs(const Vector& eta, const Vector& time, const Vector& status) {
  if (eta.size() != time.size() || time.size() != status.size()) throw DataError("concordance: lengths differ");
}

}  // namespace detail

/// Harrell's concordance: among comparable pairs, the share in which the earlier event has
/// the higher risk score. Ties in the score count one half.
inline double harrell_c(const Vector& eta, const Vector& time, const Vector& status) {
  detail::check_survival_inputs(eta, time, status);
  double num = 0.0, den = 0.0;
  for (Index i = 0; i < eta.size(); ++i) {
    if (status[i] <= 0.0) continue;
    for (Index j = 0; j < eta.size(); ++j) {
      if (!detail::comparable(time, status, i, j)) continue;
      num += detail::pair_score(eta[i], eta[j]);
      den += 1.0;
    }
  }
  if (den == 0.0) throw DataError("concordance: no comparable pairs");
  return num / den;
}

/// Uno-type concordance: comparable pairs with the earlier event at or before `tau`, each
/// weighted by G(t_i-)^{-2} with G the Kaplan-Meier estimate of the censoring survival.
/// `tau` defaults to the largest event time.
inline double ipcw_c(const Vector& eta, const Vector& time, const Vector& status,
                     std::optional<double> tau = std::nullopt) {
  detail::check_survival_inputs(eta, time, status);
  const KaplanMeier G = censoring_km(time, status);
  double t_max = -std::numeric_limits<double>::infinity();
  for (Index i = 0; i < time.size(); ++i)
    if (status[i] > 0.0) t_max = std::max(t_max, time[i]);
  const double limit = tau.value_or(t_max);
  double num = 0.0, den = 0.0;
  for (Index i = 0; i < eta.size(); ++i) {
    if (status[i] <= 0.0 || time[i] > limit) continue;
    const double g = G.before(time[i]);
    if (!(g > 0.0)) continue;
    const double w = 1.0 / (g * g);
    for (Index j = 0; j < eta.size(); ++j) {
      if (!detail::comparable(time, status, i, j)) continue;
      num += w * detail::pair_score(eta[i], eta[j]);
      den += w;
    }
  }
  if (den == 0.0) throw DataError("concordance: no comparable pairs");
  return num / den;
}

/// Cumulative/dynamic time-dependent AUC at `horizon`: cases are events at or before the
/// horizon (weight 1/G(t_i-)), controls are subjects still at risk after it (weight
/// 1/G(horizon)).
inline double td_auc(const Vector& eta, const Vector& time, const Vector& status, double horizon) {
  detail::check_survival_inputs(eta, time, status);
  const KaplanMeier G = censoring_km(time, status);
  std::vector<Index> cases, controls;
  for (Index i = 0; i < time.size(); ++i) {
    if (time[i] <= horizon && status[i] > 0.0) cases.push_back(i);
    else if (time[i] > horizon) controls.push_back(i);
  }
  if (cases.empty()) throw DataError("td_auc: no cases before the horizon");
  if (controls.empty()) throw DataError("td_auc: no controls beyond the horizon");
  // Control weights are all equal and cancel.
  double num = 0.0, den = 0.0;
  for (Index i : cases) {
    const double g = G.before(time[i]);
    if (!(g > 0.0)) continue;
    const double w = 1.0 / g;
    double s = 0.0;
    for (Index j : controls) s += detail::pair_score(eta[i], eta[j]);
    num += w * s;
    den += w * static_cast<double>(controls.size());
  }
  if (den == 0.0) throw DataError("td_auc: all case weights vanish");
  return num / den;
}

inline double concordance(const Vector& eta, const Vector& time, const Vector& status, bool ipcw,
                          std::optional<double> tau = std::nullopt) {
  return ipcw ? ipcw_c(eta, time, status, tau) : harrell_c(eta, time, status);
}

}  // namespace fusedtree
