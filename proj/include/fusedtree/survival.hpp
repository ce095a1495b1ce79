#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "fusedtree/errors.hpp"
#include "fusedtree/response.hpp"

namespace fusedtree {

/// Cumulative baseline hazard as a right-continuous step function over the distinct event
/// times.
struct BaselineHazard {
  Vector times;   // sorted distinct event times
  Vector cumhaz;  // H0 at each of `times`

  bool empty() const { return times.size() == 0; }

  /// Step-function value H0(t) = sum of jumps at event times <= t.
  double at(double t) const {
    const auto* begin = times.data();
    const auto* end = begin + times.size();
    const auto k = std::upper_bound(begin, end, t) - begin;
    return k == 0 ? 0.0 : cumhaz[k - 1];
  }

  /// Piecewise-linear interpolation through (0, 0) and the event points, extended beyond
  /// the last event with the last slope. Used where a held-out time needs a hazard density.
  double smooth_at(double t) const {
    if (empty() || t <= 0.0) return 0.0;
    const Index n = times.size();
    Index k = std::upper_bound(times.data(), times.data() + n, t) - times.data();
    if (k >= n) k = n - 1;
    const double t0 = k == 0 ? 0.0 : times[k - 1];
    const double h0 = k == 0 ? 0.0 : cumhaz[k - 1];
    const double slope = (cumhaz[k] - h0) / (times[k] - t0);
    return h0 + slope * (t - t0);
  }

  /// Derivative of smooth_at.
  double smooth_density(double t) const {
    if (empty()) return 0.0;
    const Index n = times.size();
    Index k = t <= 0.0 ? 0 : std::upper_bound(times.data(), times.data() + n, t) - times.data();
    if (k >= n) k = n - 1;
    // A time equal to an event time uses the segment ending at it.
    if (k > 0 && t == times[k - 1]) --k;
    const double t0 = k == 0 ? 0.0 : times[k - 1];
    const double h0 = k == 0 ? 0.0 : cumhaz[k - 1];
    return (cumhaz[k] - h0) / (times[k] - t0);
  }
};

/// Breslow fit at a given linear predictor, with the per-subject quantities the Cox
/// likelihood needs.
struct BreslowFit {
  BaselineHazard baseline;
  Vector subject_cumhaz;  // H0(t_i)
  Vector subject_jump;    // dH0 at t_i (only meaningful for events)
};

inline std::vector<Index> order_by_time(const Vector& time) {
  std::vector<Index> order(static_cast<std::size_t>(time.size()));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return time[a] < time[b]; });
  return order;
}

/// H0(t) = sum_{i: t_i <= t} delta_i / sum_{j: t_j >= t_i} exp(eta_j); tied times share a
/// risk set.
inline BreslowFit breslow(const Vector& eta, const Vector& time, const Vector& status) {
  const Index N = time.size();
  if (eta.size() != N || status.size() != N) throw DataError("breslow: length mismatch");
  const auto order = order_by_time(time);

  BreslowFit out;
  out.subject_cumhaz = Vector::Zero(N);
  out.subject_jump = Vector::Zero(N);

  const double shift = N > 0 ? eta.maxCoeff() : 0.0;
  // tail[k]: sum of exp(eta - shift) over positions k.. of the time order
  std::vector<double> tail(order.size() + 1, 0.0);
  for (std::size_t k = order.size(); k-- > 0;) tail[k] = tail[k + 1] + std::exp(eta[order[k]] - shift);

  std::vector<double> ev_times, ev_cum;
  double cum = 0.0;
  std::size_t k = 0;
  while (k < order.size()) {
    const double t = time[order[k]];
    std::size_t e = k;
    double deaths = 0.0;
    while (e < order.size() && time[order[e]] == t) {
      deaths += status[order[e]];
      ++e;
    }
    double jump = 0.0;
    if (deaths > 0.0) {
      jump = deaths / tail[k] * std::exp(-shift);
      cum += jump;
      ev_times.push_back(t);
      ev_cum.push_back(cum);
    }
    for (std::size_t j = k; j < e; ++j) {
      out.subject_cumhaz[order[j]] = cum;
      out.subject_jump[order[j]] = jump;
    }
    k = e;
  }
  out.baseline.times = Eigen::Map<Vector>(ev_times.data(), static_cast<Index>(ev_times.size()));
  out.baseline.cumhaz = Eigen::Map<Vector>(ev_cum.data(), static_cast<Index>(ev_cum.size()));
  return out;
}

inline BreslowFit breslow(const Vector& eta, const Response& r) { return breslow(eta, r.y, r.status); }

/// Full (Breslow-profiled) Cox log-likelihood:
/// sum_i delta_i (log dH0(t_i) + eta_i) - exp(eta_i) H0(t_i).
inline double cox_loglik(const Vector& eta, const BreslowFit& fit, const Vector& status) {
  double ll = 0.0;
  for (Index i = 0; i < eta.size(); ++i) {
    ll -= std::exp(eta[i]) * fit.subject_cumhaz[i];
    if (status[i] > 0.0) ll += std::log(fit.subject_jump[i]) + eta[i];
  }
  return ll;
}

inline double cox_loglik(const Vector& eta, const Vector& time, const Vector& status) {
  return cox_loglik(eta, breslow(eta, time, status), status);
}

/// Kaplan-Meier survival curve as a right-continuous step function.
struct KaplanMeier {
  Vector times;     // distinct times with at least one event
  Vector survival;  // S(t) just after each of `times`

  double at(double t) const {
    const auto k = std::upper_bound(times.data(), times.data() + times.size(), t) - times.data();
    return k == 0 ? 1.0 : survival[k - 1];
  }

  /// Left limit S(t-).
  double before(double t) const {
    const auto k = std::lower_bound(times.data(), times.data() + times.size(), t) - times.data();
    return k == 0 ? 1.0 : survival[k - 1];
  }
};

inline KaplanMeier kaplan_meier(const Vector& time, const Vector& status) {
  const auto order = order_by_time(time);
  KaplanMeier km;
  std::vector<double> ts, ss;
  double s = 1.0;
  double at_risk = static_cast<double>(time.size());
  std::size_t k = 0;
  while (k < order.size()) {
    const double t = time[order[k]];
    std::size_t e = k;
    double d = 0.0;
    while (e < order.size() && time[order[e]] == t) {
      d += status[order[e]];
      ++e;
    }
    if (d > 0.0) {
      s *= 1.0 - d / at_risk;
      ts.push_back(t);
      ss.push_back(s);
    }
    at_risk -= static_cast<double>(e - k);
    k = e;
  }
  km.times = Eigen::Map<Vector>(ts.data(), static_cast<Index>(ts.size()));
  km.survival = Eigen::Map<Vector>(ss.data(), static_cast<Index>(ss.size()));
  return km;
}

/// Kaplan-Meier estimate of the censoring distribution (status flipped).
inline KaplanMeier censoring_km(const Vector& time, const Vector& status) {
  return kaplan_meier(time, (1.0 - status.array()).matrix());
}

}  // namespace fusedtree
