#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fusedtree/metrics.hpp"
#include "test_util.hpp"

using namespace fusedtree;
using namespace testutil;

namespace {

struct Surv {
  Vector eta, time, status;
};

Surv random_surv(std::mt19937_64& rng, Index n, bool ties = false, bool censor = true) {
  Surv s{randn(n, rng), Vector(n), Vector(n)};
  for (Index i = 0; i < n; ++i) {
    double t = -std::log(runif(rng)) * std::exp(-0.7 * s.eta[i]);
    if (ties) t = std::ceil(t * 4.0) / 4.0;
    s.time[i] = t;
    s.status[i] = censor ? (runif(rng) < 0.7 ? 1.0 : 0.0) : 1.0;
  }
  return s;
}

// Concordance straight from the pair definition.
double brute_harrell(const Surv& s) {
  double num = 0, den = 0;
  for (Index i = 0; i < s.eta.size(); ++i)
    for (Index j = 0; j < s.eta.size(); ++j) {
      if (i == j || s.status[i] != 1.0) continue;
      const bool usable = s.time[i] < s.time[j] || (s.time[i] == s.time[j] && s.status[j] == 0.0);
      if (!usable) continue;
      den += 1;
      num += s.eta[i] > s.eta[j] ? 1.0 : (s.eta[i] == s.eta[j] ? 0.5 : 0.0);
    }
  return num / den;
}

// Censoring survival G(t-): product limit over censoring times strictly before t, with
// everyone whose time is >= u at risk at u.
double censoring_before(const Surv& s, double t) {
  std::vector<double> times;
  for (Index i = 0; i < s.time.size(); ++i)
    if (s.status[i] == 0.0 && s.time[i] < t) times.push_back(s.time[i]);
  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end()), times.end());
  double g = 1.0;
  for (double u : times) {
    double at_risk = 0, cens = 0;
    for (Index i = 0; i < s.time.size(); ++i) {
      if (s.time[i] >= u) at_risk += 1;
      if (s.time[i] == u && s.status[i] == 0.0) cens += 1;
    }
    g *= 1.0 - cens / at_risk;
  }
  return g;
}

double brute_uno(const Surv& s, double tau) {
  double num = 0, den = 0;
  for (Index i = 0; i < s.eta.size(); ++i) {
    if (s.status[i] != 1.0 || s.time[i] > tau) continue;
    const double g = censoring_before(s, s.time[i]);
    for (Index j = 0; j < s.eta.size(); ++j) {
      if (i == j) continue;
      const bool usable = s.time[i] < s.time[j] || (s.time[i] == s.time[j] && s.status[j] == 0.0);
      if (!usable) continue;
      den += 1 / (g * g);
      num += (s.eta[i] > s.eta[j] ? 1.0 : (s.eta[i] == s.eta[j] ? 0.5 : 0.0)) / (g * g);
    }
  }
  return num / den;
}

}  // namespace

TEST(Metrics, PmseHandValue) {
  Vector y(3), yh(3);
  y << 1, 2, 3;
  yh << 1, 3, 5;
  EXPECT_DOUBLE_EQ(pmse(y, yh), 5.0 / 3.0);
  EXPECT_THROW(pmse(Vector(0), Vector(0)), DataError);
  EXPECT_THROW(pmse(y, Vector(2)), DataError);
}

TEST(Metrics, PmseTranslationInvariant) {
  std::mt19937_64 rng(11);
  const Vector y = randn(50, rng), yh = randn(50, rng);
  EXPECT_NEAR(pmse((y.array() + 7.3).matrix(), (yh.array() + 7.3).matrix()), pmse(y, yh), 1e-12);
}

TEST(Metrics, HarrellMatchesPairEnumeration) {
  std::mt19937_64 rng(1);
  for (int rep = 0; rep < 20; ++rep) {
    const Surv s = random_surv(rng, 40, rep % 2 == 0);
    EXPECT_NEAR(harrell_c(s.eta, s.time, s.status), brute_harrell(s), 1e-14);
  }
}

TEST(Metrics, UnoMatchesPairEnumeration) {
  std::mt19937_64 rng(2);
  for (int rep = 0; rep < 20; ++rep) {
    const Surv s = random_surv(rng, 40, rep % 2 == 0);
    double tau = 0;
    for (Index i = 0; i < s.time.size(); ++i)
      if (s.status[i] == 1.0) tau = std::max(tau, s.time[i]);
    EXPECT_NEAR(ipcw_c(s.eta, s.time, s.status), brute_uno(s, tau), 1e-12);
    const double half = tau / 2;
    EXPECT_NEAR(ipcw_c(s.eta, s.time, s.status, half), brute_uno(s, half), 1e-12);
  }
}

TEST(Metrics, NoCensoringUnoEqualsHarrell) {
  std::mt19937_64 rng(3);
  const Surv s = random_surv(rng, 60, false, false);
  EXPECT_NEAR(ipcw_c(s.eta, s.time, s.status), harrell_c(s.eta, s.time, s.status), 1e-14);
}

TEST(Metrics, RankInvariance) {
  std::mt19937_64 rng(4);
  const Surv s = random_surv(rng, 80, true);
  const Vector g = (s.eta.array() * 3.0).exp().matrix();  // strictly increasing
  EXPECT_EQ(harrell_c(g, s.time, s.status), harrell_c(s.eta, s.time, s.status));
  EXPECT_EQ(ipcw_c(g, s.time, s.status), ipcw_c(s.eta, s.time, s.status));
  const double h = 0.8;
  EXPECT_EQ(td_auc(g, s.time, s.status, h), td_auc(s.eta, s.time, s.status, h));
}

TEST(Metrics, SignFlipSymmetry) {
  std::mt19937_64 rng(5);
  const Surv s = random_surv(rng, 70, true);
  const Vector neg = -s.eta;
  EXPECT_NEAR(harrell_c(neg, s.time, s.status), 1.0 - harrell_c(s.eta, s.time, s.status), 1e-14);
  EXPECT_NEAR(ipcw_c(neg, s.time, s.status), 1.0 - ipcw_c(s.eta, s.time, s.status), 1e-12);
}

TEST(Metrics, PerfectAndReversedOrdering) {
  Vector t(5), d = Vector::Ones(5), eta(5);
  t << 1, 2, 3, 4, 5;
  eta << 5, 4, 3, 2, 1;
  EXPECT_DOUBLE_EQ(harrell_c(eta, t, d), 1.0);
  EXPECT_DOUBLE_EQ(harrell_c(-eta, t, d), 0.0);
  EXPECT_DOUBLE_EQ(harrell_c(Vector::Zero(5), t, d), 0.5);
  EXPECT_DOUBLE_EQ(td_auc(eta, t, d, 2.5), 1.0);
}

TEST(Metrics, TdAucReducesToClassificationAuc) {
  // Uncensored: AUC of the event-by-horizon indicator.
  Vector t(8), d = Vector::Ones(8), eta(8);
  t << 0.5, 1.2, 3.0, 0.7, 2.2, 4.1, 1.9, 0.3;
  eta << 0.2, 1.5, -0.3, 0.9, 0.1, -1.0, 0.4, 0.4;
  const double h = 1.5;
  double num = 0, den = 0;
  for (Index i = 0; i < 8; ++i)
    for (Index j = 0; j < 8; ++j)
      if (t[i] <= h && t[j] > h) {
        den += 1;
        num += eta[i] > eta[j] ? 1.0 : (eta[i] == eta[j] ? 0.5 : 0.0);
      }
  EXPECT_NEAR(td_auc(eta, t, d, h), num / den, 1e-15);
}

TEST(Metrics, TdAucNullMonteCarlo) {
  std::mt19937_64 rng(6);
  const Index n = 2000;
  Vector eta = randn(n, rng), t(n), d(n);
  for (Index i = 0; i < n; ++i) {
    const double ev = -std::log(runif(rng)), c = -std::log(runif(rng)) * 2.0;
    t[i] = std::min(ev, c);
    d[i] = ev <= c ? 1.0 : 0.0;
  }
  const double auc = td_auc(eta, t, d, 0.7);
  EXPECT_GT(auc, 0.45);
  EXPECT_LT(auc, 0.55);
}

TEST(Metrics, TdAucNeedsCasesAndControls) {
  Vector t(3), d = Vector::Ones(3), eta = Vector::Zero(3);
  t << 1, 2, 3;
  EXPECT_THROW(td_auc(eta, t, d, 0.5), DataError);
  EXPECT_THROW(td_auc(eta, t, d, 3.0), DataError);
}

TEST(Metrics, BinomialDevianceHandValue) {
  Vector y(2), p(2);
  y << 1, 0;
  p << 0.8, 0.4;
  EXPECT_NEAR(binomial_deviance(y, p), -(std::log(0.8) + std::log(0.6)), 1e-15);
}
