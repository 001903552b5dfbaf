// Copyright 2026 The MoCo Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "moco/baselines.hpp"
#include "moco/learners.hpp"

using namespace moco;

namespace {

// Small mixed cohort: binary x, two z columns, missingness tied to m.
Cohort mixed_cohort(int n, std::uint64_t seed) {
  auto rng = make_rng(seed, 0xba5e);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Cohort c;
  c.x.resize(n, 1);
  c.z.resize(n, 2);
  c.y.resize(n, 2);
  c.a.resize(n);
  c.m.resize(n);
  c.delta.resize(n);
  c.x_names = {"x"};
  c.z_names = {"z1", "z2"};
  c.y_names = {"r1", "r2"};
  for (int i = 0; i < n; ++i) {
    const double x = unif(rng) < 0.5 ? 1.0 : 0.0;
    const double a = unif(rng) < expit(0.4 * x) ? 1.0 : 0.0;
    const double z1 = gauss(rng) + 0.3 * a;
    const double z2 = unif(rng) < 0.3 ? 1.0 : 0.0;
    const double m = std::exp(-1.0 + 0.3 * a + 0.2 * x + 0.1 * z1 +
                              0.4 * gauss(rng));
    const double delta = m <= 0.5 ? 1.0 : 0.0;
    const double y1 = 1.0 + 0.2 * x - 0.1 * z1 + 0.5 * m + gauss(rng);
    const double y2 = -0.5 + 0.3 * a + 0.2 * z2 + gauss(rng);
    c.x(i, 0) = x;
    c.a[i] = a;
    c.z(i, 0) = z1;
    c.z(i, 1) = z2;
    c.m[i] = m;
    c.delta[i] = delta;
    c.y(i, 0) = y1;
    c.y(i, 1) = y2;
  }
  return c;
}

}  // namespace

TEST_CASE("baseline labels round-trip") {
  for (BaselineKind k : {BaselineKind::naive_all, BaselineKind::naive_removal,
                         BaselineKind::iptw, BaselineKind::nebel})
    CHECK(parse_baseline(baseline_label(k)) == k);
  CHECK_THROWS_AS(parse_baseline("moco"), validation_error);
}

TEST_CASE("welch comparison matches the hand formula") {
  Cohort c = mixed_cohort(400, 3);
  RegionResult r = naive_all(c, 0);
  double m1 = 0, m0 = 0, n1 = 0, n0 = 0;
  for (Eigen::Index i = 0; i < c.n(); ++i)
    if (c.a[i] == 1.0) {
      m1 += c.y(i, 0);
      ++n1;
    } else {
      m0 += c.y(i, 0);
      ++n0;
    }
  m1 /= n1;
  m0 /= n0;
  double v1 = 0, v0 = 0;
  for (Eigen::Index i = 0; i < c.n(); ++i)
    if (c.a[i] == 1.0)
      v1 += (c.y(i, 0) - m1) * (c.y(i, 0) - m1);
    else
      v0 += (c.y(i, 0) - m0) * (c.y(i, 0) - m0);
  v1 /= n1 - 1;
  v0 /= n0 - 1;
  CHECK(r.diff == doctest::Approx(m1 - m0).epsilon(1e-12));
  const double se = std::sqrt(v1 / n1 + v0 / n0);
  CHECK(r.z == doctest::Approx((m1 - m0) / se).epsilon(1e-12));
  CHECK(r.ci_lo < r.diff);
  CHECK(r.diff < r.ci_hi);
  CHECK(r.theta1.theta_onestep == doctest::Approx(m1));
  CHECK(r.theta0.theta_onestep == doctest::Approx(m0));
}

TEST_CASE("identical outcomes give a zero comparison and equal outcomes a degenerate one") {
  // Alternating groups with pairwise-shared outcome values: the two group
  // multisets coincide exactly, so diff and t are exactly zero.
  Cohort c = mixed_cohort(100, 9);
  for (Eigen::Index i = 0; i < c.n(); ++i) {
    c.a[i] = static_cast<double>(i % 2);
    c.y(i, 0) = 2.0 + 0.1 * static_cast<double>((i / 2) % 7);
  }
  Cohort c2 = c;
  RegionResult r = naive_all(c, 0);
  CHECK(r.diff == 0.0);
  CHECK(r.z == 0.0);
  CHECK_FALSE(r.degenerate);

  // Outcome exactly equal to the group indicator: unit diff, zero SE.
  for (Eigen::Index i = 0; i < c2.n(); ++i) c2.y(i, 0) = c2.a[i];
  RegionResult d = naive_all(c2, 0);
  CHECK(d.diff == 1.0);
  CHECK(d.degenerate);
  CHECK(d.ci_lo == d.ci_hi);
  CHECK(std::isinf(d.z));
}

TEST_CASE("removal comparison equals the full comparison when everything is usable") {
  Cohort c = mixed_cohort(300, 11);
  c.delta = VectorXd::Ones(c.n());
  RegionResult all = naive_all(c, 1);
  RegionResult rem = naive_removal(c, 1);
  CHECK(rem.diff == all.diff);
  CHECK(rem.tau == all.tau);
  CHECK(rem.z == all.z);
  CHECK(rem.ci_lo == all.ci_lo);
  CHECK(rem.ci_hi == all.ci_hi);
}

TEST_CASE("removal comparison refuses a fully removed group") {
  Cohort c = mixed_cohort(200, 13);
  for (Eigen::Index i = 0; i < c.n(); ++i)
    if (c.a[i] == 1.0) c.delta[i] = 0.0;
  CHECK_THROWS_AS(naive_removal(c, 0), insufficient_data);
  CHECK_THROWS_AS(naive_all(c, 5), validation_error);
}

TEST_CASE("weighting collapses to group means without confounding or removal") {
  // No covariates and full usability: fitted propensities are exactly the
  // group share, so the weighted mean telescopes to the group mean.
  Cohort c = mixed_cohort(250, 17);
  c.x.resize(c.n(), 0);
  c.x_names.clear();
  c.delta = VectorXd::Ones(c.n());
  RegionResult r = iptw(c, 0, 5, 200);
  double m1 = 0, m0 = 0, n1 = 0, n0 = 0;
  for (Eigen::Index i = 0; i < c.n(); ++i)
    if (c.a[i] == 1.0) {
      m1 += c.y(i, 0);
      ++n1;
    } else {
      m0 += c.y(i, 0);
      ++n0;
    }
  CHECK(r.diff == doctest::Approx(m1 / n1 - m0 / n0).epsilon(1e-10));
  CHECK(r.warnings.empty());
  CHECK(r.ci_lo < r.diff);
  CHECK(r.diff < r.ci_hi);
}

TEST_CASE("weighting matches the hand Horvitz-Thompson formula") {
  Cohort c = mixed_cohort(250, 19);
  c.x.resize(c.n(), 0);
  c.x_names.clear();
  RegionResult r = iptw(c, 0, 5, 200);
  // With no covariates the two propensities are the group share and the
  // within-group usable share; the estimator is the hand formula.
  double n1 = 0, n0 = 0, u1 = 0, u0 = 0, s1 = 0, s0 = 0;
  const double n = static_cast<double>(c.n());
  for (Eigen::Index i = 0; i < c.n(); ++i) {
    if (c.a[i] == 1.0) {
      ++n1;
      if (c.delta[i] == 1.0) {
        ++u1;
        s1 += c.y(i, 0);
      }
    } else {
      ++n0;
      if (c.delta[i] == 1.0) {
        ++u0;
        s0 += c.y(i, 0);
      }
    }
  }
  const double psi1 = s1 / ((u1 / n1) * (n1 / n)) / n;
  const double psi0 = s0 / ((u0 / n0) * (n0 / n)) / n;
  CHECK(r.diff == doctest::Approx(psi1 - psi0).epsilon(1e-9));
  CHECK(r.theta1.theta_onestep == doctest::Approx(psi1).epsilon(1e-9));
}

TEST_CASE("weighting stays finite and warns under poor overlap") {
  Cohort c = mixed_cohort(300, 23);
  // Strongly separated but overlapping covariate: the logistic fit stays
  // finite while most fitted propensities land beyond the clamp.
  c.x.resize(c.n(), 1);
  c.x_names = {"sep"};
  auto rng = make_rng(77, 1);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (Eigen::Index i = 0; i < c.n(); ++i)
    c.x(i, 0) = 3.0 * (2.0 * c.a[i] - 1.0) + gauss(rng);
  RegionResult r = iptw(c, 0, 5, 100);
  CHECK(std::isfinite(r.diff));
  CHECK(std::isfinite(r.tau));
  REQUIRE(r.warnings.size() >= 1);
  CHECK(r.warnings[0].find("non_overlap") == 0);
}

TEST_CASE("weighting intervals are reproducible by seed") {
  Cohort c = mixed_cohort(200, 29);
  RegionResult r1 = iptw(c, 0, 42, 100);
  RegionResult r2 = iptw(c, 0, 42, 100);
  CHECK(r1.ci_lo == r2.ci_lo);
  CHECK(r1.ci_hi == r2.ci_hi);
  CHECK(r1.diff == r2.diff);
  RegionResult r3 = iptw(c, 0, 43, 100);
  CHECK(r3.ci_lo != r1.ci_lo);
}

TEST_CASE("residualization is orthogonal to its regressors") {
  Cohort c = mixed_cohort(400, 31);
  VectorXd resid = nebel_residuals(c, 0);
  CHECK(std::abs(resid.mean()) <= 1e-8);
  CHECK(std::abs(resid.dot(c.m) / static_cast<double>(c.n())) <= 1e-8);
  CHECK(std::abs(resid.dot(c.x.col(0)) / static_cast<double>(c.n())) <= 1e-8);
}

TEST_CASE("residual comparison preserves the group difference in the degenerate design") {
  // Constant motion and covariate with full usability: residualization only
  // shifts by a common constant, so the difference must match the naive one.
  Cohort c = mixed_cohort(300, 37);
  c.m = VectorXd::Constant(c.n(), 0.1);
  c.x = MatrixXd::Constant(c.n(), 1, 1.0);
  c.delta = VectorXd::Ones(c.n());
  EstimatorConfig config;
  config.learners = lean_library();
  RegionResult nb = nebel(c, 1, config, 7);
  RegionResult na = naive_all(c, 1);
  CHECK(nb.diff == doctest::Approx(na.diff).epsilon(1e-6));
}

TEST_CASE("residual comparison refuses starved groups") {
  Cohort c = mixed_cohort(60, 41);
  for (Eigen::Index i = 0; i < c.n(); ++i)
    if (c.a[i] == 1.0 && c.delta[i] == 1.0 && i > 5) c.delta[i] = 0.0;
  EstimatorConfig config;
  config.learners = lean_library();
  CHECK_THROWS_AS(nebel(c, 0, config, 7), insufficient_data);
}

TEST_CASE("all baselines return finite results on a generic cohort") {
  Cohort c = mixed_cohort(400, 43);
  EstimatorConfig config;
  config.learners = lean_library();
  for (int region : {0, 1}) {
    for (const RegionResult& r :
         {naive_all(c, region), naive_removal(c, region),
          iptw(c, region, 3, 100), nebel(c, region, config, 3)}) {
      CHECK(std::isfinite(r.diff));
      CHECK(std::isfinite(r.tau));
      CHECK(std::isfinite(r.ci_lo));
      CHECK(std::isfinite(r.ci_hi));
      CHECK(r.ci_lo <= r.diff);
      CHECK(r.diff <= r.ci_hi);
    }
  }
}
