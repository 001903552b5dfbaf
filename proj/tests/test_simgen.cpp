// Copyright 2026 The MoCo Authors
// SPDX-License-Identifier: Apache-2.0

#include "moco/simgen.hpp"

#include <cmath>
#include <string>
#include <vector>

#include "doctest.h"
#include "moco/learners.hpp"

using namespace moco;

namespace {

// Outcome mean recomputed from the public coefficient block, independently of
// the generator's internal evaluation order.
double row_mean(const SimDesign& d, int region, double a, double m,
                const Cohort& c, Eigen::Index i) {
  double v = d.y_coef(region, 0) + d.y_coef(region, 1) * a +
             d.y_coef(region, 2) * m + d.y_coef(region, 3) * m * m +
             d.am_coef * a * m;
  for (int j = 0; j < 3; ++j) v += d.y_coef(region, 4 + j) * c.x(i, j);
  for (int j = 0; j < 4; ++j) v += d.y_coef(region, 7 + j) * c.z(i, j);
  return v;
}

// Closed-form group contrasts for the six-region design: regions 1-4 carry no
// diagnosis or diagnosis-specific terms, regions 5 and 6 shift through the
// direct effect plus the severity / IQ / medication channels.
double handbook_diff(const SimDesign& d, int region) {
  if (region < 4) return 0.0;
  double v = d.y_coef(region, 1);
  v += d.y_coef(region, 7) * d.severity_mean;
  v += d.y_coef(region, 8) * (d.iq_mean1 - d.iq_mean0);
  v += d.y_coef(region, 9) * d.med1_prob;
  v += d.y_coef(region, 10) * d.med2_prob;
  return v;
}

}  // namespace

TEST_CASE("design factories parse, validate, and reject nonsense") {
  CHECK(SimDesign::parse("main").kind == DesignKind::main_fc);
  CHECK(SimDesign::parse("theory").kind == DesignKind::theory_binary);
  CHECK(SimDesign::parse("var").kind == DesignKind::var_timeseries);
  CHECK_THROWS_AS(SimDesign::parse("bogus"), validation_error);

  SimDesign d = SimDesign::main_design();
  CHECK_NOTHROW(d.check());
  d.sex_prob = 1.5;
  CHECK_THROWS_AS(d.check(), validation_error);
  d = SimDesign::main_design();
  d.y_corr = 1.2;
  CHECK_THROWS_AS(d.check(), validation_error);
  d = SimDesign::main_design();
  d.logm_coef.resize(3);
  CHECK_THROWS_AS(d.check(), validation_error);
  d = SimDesign::var_design();
  d.t_frames = 1;
  CHECK_THROWS_AS(d.check(), validation_error);
  d = SimDesign::var_design();
  d.var_lag = 1.0;
  CHECK_THROWS_AS(d.check(), validation_error);

  CHECK(parse_method("naive-removal") == Method::naive_removal);
  CHECK(method_label(Method::iptw) == "iptw");
  for (auto m : {Method::moco, Method::naive_all, Method::naive_removal,
                 Method::iptw, Method::nebel})
    CHECK(parse_method(method_label(m)) == m);
  CHECK_THROWS_AS(parse_method("psm"), validation_error);
}

TEST_CASE("generation is deterministic and labels the cohort") {
  Cohort c = gen_main(200, 11);
  Cohort c2 = gen_main(200, 11);
  CHECK(c.a == c2.a);
  CHECK(c.m == c2.m);
  CHECK(c.y == c2.y);
  CHECK(c.x_names == std::vector<std::string>{"sex", "age", "hand"});
  CHECK(c.z_names == std::vector<std::string>{"severity", "iq", "med1", "med2"});
  CHECK(c.y_names.size() == 6);
  CHECK(c.y_names.front() == "y1");
  CHECK(c.y_names.back() == "y6");
  for (Eigen::Index i = 0; i < c.n(); ++i) {
    CHECK(c.delta[i] == (c.m[i] <= 0.2 ? 1.0 : 0.0));
    CHECK(c.m[i] > 0.0);
    if (c.a[i] < 0.5) {
      // undiagnosed children carry no severity or medication values
      CHECK(c.z(i, 0) == 0.0);
      CHECK(c.z(i, 2) == 0.0);
      CHECK(c.z(i, 3) == 0.0);
    }
  }
  CHECK_THROWS_AS(gen_main(0, 1), validation_error);
  Cohort other = gen_main(200, 12);
  CHECK(c.m != other.m);
}

TEST_CASE("six-region cohort marginals match the design law") {
  // n = 10000, seed 5: frozen from a reference run; windows are ~4 binomial
  // standard errors wide around the analytic rates.
  Cohort c = gen_main(10000, 5);
  double sex = 0, age = 0, arate = 0, keep0 = 0, keep1 = 0;
  long n0 = 0, n1 = 0;
  for (Eigen::Index i = 0; i < c.n(); ++i) {
    sex += c.x(i, 0);
    age += c.x(i, 1);
    arate += c.a[i];
    CHECK(c.x(i, 1) >= 8.0);
    CHECK(c.x(i, 1) <= 13.0);
    (c.a[i] > 0.5 ? n1 : n0) += 1;
    (c.a[i] > 0.5 ? keep1 : keep0) += c.delta[i];
  }
  CHECK(sex / 10000 == doctest::Approx(0.75).epsilon(0.03));
  CHECK(age / 10000 == doctest::Approx(10.19).epsilon(0.02));
  CHECK(arate / 10000 == doctest::Approx(0.362).epsilon(0.06));
  // usable-scan rates: ~0.66 undiagnosed, ~0.48 diagnosed
  CHECK(keep0 / n0 == doctest::Approx(0.675).epsilon(0.03));
  CHECK(keep1 / n1 == doctest::Approx(0.480).epsilon(0.05));
}

TEST_CASE("outcome rows follow the coefficient block with exchangeable noise") {
  SimDesign d = SimDesign::main_design();
  Cohort c = generate(d, 20000, 19);
  for (int r : {0, 4}) {
    double s = 0, s2 = 0;
    for (Eigen::Index i = 0; i < c.n(); ++i) {
      double e = c.y(i, r) - row_mean(d, r, c.a[i], c.m[i], c, i);
      s += e;
      s2 += e * e;
    }
    CHECK(s / c.n() == doctest::Approx(0.0).epsilon(0.005));
    CHECK(std::sqrt(s2 / c.n()) == doctest::Approx(d.y_sd).epsilon(0.05));
  }
  double s12 = 0;
  for (Eigen::Index i = 0; i < c.n(); ++i) {
    double e1 = c.y(i, 0) - row_mean(d, 0, c.a[i], c.m[i], c, i);
    double e2 = c.y(i, 1) - row_mean(d, 1, c.a[i], c.m[i], c, i);
    s12 += e1 * e2;
  }
  CHECK(s12 / c.n() / (d.y_sd * d.y_sd) == doctest::Approx(d.y_corr).epsilon(0.15));

  // the optional diagnosis-by-motion interaction feeds every region
  SimDesign dx = d;
  dx.kind = DesignKind::custom;
  dx.am_coef = 0.5;
  Cohort cx = generate(dx, 5000, 19);
  double worst = 0;
  for (Eigen::Index i = 0; i < cx.n(); ++i)
    worst = std::max(worst, std::abs(cx.y(i, 2) -
                                     row_mean(dx, 2, cx.a[i], cx.m[i], cx, i)));
  CHECK(worst < 6.0 * dx.y_sd);
}

TEST_CASE("binary cohort marginals match the closed-form law") {
  Cohort c = gen_theory(20000, 3);
  CHECK(c.x.cols() == 1);
  CHECK(c.z.cols() == 1);
  CHECK(c.y_names == std::vector<std::string>{"y"});
  double keep = 0, arate = 0, z0 = 0, z1 = 0;
  long n0 = 0, n1 = 0;
  for (Eigen::Index i = 0; i < c.n(); ++i) {
    keep += c.delta[i];
    arate += c.a[i];
    CHECK(c.delta[i] == (c.m[i] <= 2.0 ? 1.0 : 0.0));
    if (c.a[i] > 0.5) { z1 += c.z(i, 0); ++n1; }
    else { z0 += c.z(i, 0); ++n0; }
  }
  CHECK(arate / c.n() == doctest::Approx(0.5585).epsilon(0.03));
  CHECK(keep / c.n() == doctest::Approx(0.615).epsilon(0.03));
  // P(Z=1 | A=a): expit(-1/2) and expit(3/4)
  CHECK(z0 / n0 == doctest::Approx(0.37754).epsilon(0.05));
  CHECK(z1 / n1 == doctest::Approx(0.67918).epsilon(0.04));
}

TEST_CASE("binary-design oracle reproduces the closed-form truths exactly") {
  OracleResult o = truth_oracle(SimDesign::theory_design(), 5000, 99);
  // enumerated, not simulated: zero standard errors, any sample budget
  CHECK(o.theta_se(0, 0) == 0.0);
  CHECK(o.theta_se(0, 1) == 0.0);
  CHECK(o.theta(0, 0) == doctest::Approx(-0.717320).epsilon(2e-5));
  CHECK(o.theta(0, 1) == doctest::Approx(-1.067869).epsilon(2e-5));
  CHECK(o.diff(0) == doctest::Approx(-0.350549).epsilon(5e-5));
  // influence-function variances by cell sums plus quadrature
  REQUIRE(o.eif_var.size() == 2);
  CHECK(o.eif_var[0] == doctest::Approx(3.4491).epsilon(0.002));
  CHECK(o.eif_var[1] == doctest::Approx(7.2239).epsilon(0.002));
  // outcome linear in motion: motion-zero contrast equals the standardized one
  CHECK(std::abs(o.gap(0)) < 1e-10);
  CHECK(o.acceptance == doctest::Approx(0.7919).epsilon(0.001));
  // simulated designs need a real sample budget; enumerated ones ignore it
  CHECK_THROWS_AS(truth_oracle(SimDesign::main_design(), 100, 1),
                  validation_error);
}

TEST_CASE("six-region standardized contrasts match hand-derived values") {
  SimDesign d = SimDesign::main_design();
  CHECK(handbook_diff(d, 4) == doctest::Approx(-0.04845).epsilon(1e-9));
  CHECK(handbook_diff(d, 5) == doctest::Approx(-0.06815).epsilon(1e-9));
  OracleResult o = truth_oracle(d, 300000, 17);
  CHECK(o.samples == 300000);
  for (int r = 0; r < 6; ++r) {
    CHECK(std::abs(o.diff(r) - handbook_diff(d, r)) < 6e-4);
    CHECK(o.diff_se(r) > 0.0);
    CHECK(o.diff_se(r) < 4e-4);
    // additive outcome model: no standardization gap anywhere
    CHECK(std::abs(o.gap(r)) < 5e-4);
    CHECK(std::abs(o.gap(r)) < 4.0 * o.gap_se(r) + 1e-4);
  }
  CHECK(o.acceptance == doctest::Approx(0.67).epsilon(0.02));
}

TEST_CASE("motion-diagnosis interaction opens a standardization gap") {
  SimDesign d = SimDesign::main_design();
  d.kind = DesignKind::custom;
  d.am_coef = 0.5;
  OracleResult o = truth_oracle(d, 200000, 21);
  // frozen reference value -0.0613: the motion-zero contrast drops the
  // interaction entirely while the standardized one keeps its reference-motion
  // average, so the gap is large and negative at this coefficient
  CHECK(o.gap(0) == doctest::Approx(-0.0613).epsilon(0.02));
  CHECK(std::abs(o.gap(0)) > 10.0 * o.gap_se(0));
  CHECK(std::abs(o.gap(0)) > 0.003);
}

TEST_CASE("time-series cohort exposes a motion-contaminated correlation") {
  Cohort c = gen_var_timeseries(4000, 9);
  CHECK(c.y.cols() == 1);
  CHECK(c.diag.size() == c.n());
  CHECK(c.diag_name == "rho");
  double s0 = 0, s1 = 0, keep0 = 0, keep1 = 0;
  long n0 = 0, n1 = 0;
  for (Eigen::Index i = 0; i < c.n(); ++i) {
    CHECK(std::abs(c.diag[i]) <= 1.0);
    if (c.a[i] > 0.5) { s1 += c.diag[i]; ++n1; keep1 += c.delta[i]; }
    else { s0 += c.diag[i]; ++n0; keep0 += c.delta[i]; }
  }
  // diagnosed scans are less correlated despite carrying more motion
  CHECK(s0 / n0 == doctest::Approx(0.30).epsilon(0.08));
  CHECK(s1 / n1 == doctest::Approx(0.15).epsilon(0.15));
  CHECK(keep0 / n0 == doctest::Approx(0.667).epsilon(0.04));
  CHECK(keep1 / n1 == doctest::Approx(0.484).epsilon(0.06));

  // silencing motion leaves the pure signal correlation per group
  SimDesign quiet = SimDesign::var_design();
  quiet.logm_coef[0] = -20.0;
  quiet.frame_log_sd = 1e-3;
  Cohort q = generate(quiet, 4000, 9);
  s0 = s1 = 0;
  n0 = n1 = 0;
  for (Eigen::Index i = 0; i < q.n(); ++i) {
    if (q.a[i] > 0.5) { s1 += q.diag[i]; ++n1; }
    else { s0 += q.diag[i]; ++n0; }
  }
  CHECK(s0 / n0 == doctest::Approx(quiet.innov_base).epsilon(0.05));
  CHECK(s1 / n1 ==
        doctest::Approx(quiet.innov_base + quiet.innov_a).epsilon(0.12));
}

TEST_CASE("time-series oracle matches the analytic decomposition") {
  // hand budget: -0.06815 from the diagnosis-specific channels, -0.2073 from
  // the innovation-correlation drop evaluated near zero usable motion, and
  // -0.0007 from the finite-scan sampling bias of the correlation estimate
  OracleResult o = truth_oracle(SimDesign::var_design(), 60000, 33);
  CHECK(o.diff(0) == doctest::Approx(-0.2761).epsilon(0.012));
  CHECK(std::abs(o.diff(0) + 0.2761) < 3.0 * o.diff_se(0) + 1e-3);
  CHECK(o.acceptance == doctest::Approx(0.67).epsilon(0.04));
}

TEST_CASE("misspecification rows rewire the advertised nuisances") {
  const auto ok = NuisanceFlag::correct;
  const auto wrong = NuisanceFlag::intercept_only;
  const auto gauss = NuisanceFlag::gaussian_moment;

  MisspecPlan p = MisspecPlan::from_row("b2.3");
  CHECK(p.row == "B2.3");
  CHECK(p.mu == ok);
  CHECK(p.eta_m == ok);
  CHECK(p.xi == wrong);
  CHECK(p.pi_bar0 == ok);
  CHECK(p.pi_a == ok);
  CHECK(p.dens_m_d1_ax == gauss);
  CHECK(p.dens_m_axz == gauss);

  p = MisspecPlan::from_row("B2.1");
  CHECK(p.mu == wrong);
  CHECK(p.eta_m == wrong);
  CHECK(p.xi == wrong);
  CHECK(p.pi_bar0 == wrong);
  CHECK(p.pi_a == ok);
  CHECK(p.dens_m_axz == ok);

  p = MisspecPlan::from_row("B2.5");
  CHECK(p.eta_m == wrong);
  CHECK(p.pi_bar0 == wrong);
  CHECK(p.pi_a == wrong);
  CHECK(p.xi == ok);
  CHECK(p.dens_m_d1_ax == ok);
  CHECK(p.dens_m_axz == gauss);

  CHECK(MisspecPlan::from_row("all_correct").all_correct());
  CHECK_THROWS_AS(MisspecPlan::from_row("B9.9"), validation_error);

  EstimatorConfig cfg;
  cfg = apply_misspec(MisspecPlan::from_row("B2.4"), cfg);
  CHECK(cfg.plan.row == "B2.4");
  CHECK(cfg.plan.eta_m == wrong);
  CHECK(cfg.plan.dens_m_axz == gauss);
  CHECK(cfg.plan.dens_m_d1_ax == ok);
}

TEST_CASE("replication harness aggregates per method and region") {
  StudySpec spec;
  spec.design = SimDesign::theory_design();
  spec.methods = {Method::moco, Method::naive_all, Method::naive_removal,
                  Method::iptw, Method::nebel};
  spec.n_grid = {150};
  spec.reps = 4;
  spec.iptw_bootstrap = 40;
  spec.config.learners = lean_library();
  MetricsTable t = run_study(spec, 101);
  REQUIRE(t.rows.size() == 5);

  const MetricsRow& moco_row = t.find("moco", "y", 150);
  CHECK(moco_row.reps == 4);
  CHECK(moco_row.failures == 0);
  CHECK(moco_row.truth == doctest::Approx(-0.350549).epsilon(1e-4));
  CHECK(moco_row.bias == doctest::Approx(moco_row.mean_est - moco_row.truth)
                             .epsilon(1e-12));
  CHECK(moco_row.mse1000 > 0.0);
  CHECK(moco_row.coverage >= 0.0);
  CHECK(moco_row.coverage <= 1.0);
  CHECK(std::abs(moco_row.bias) < 0.25);

  // ignoring motion entirely reverses the sign of this contrast
  const MetricsRow& naive_row = t.find("naive", "y", 150);
  CHECK(naive_row.bias > 0.2);
  CHECK(std::abs(moco_row.bias) < std::abs(naive_row.bias));

  CHECK_THROWS_AS(t.find("moco", "y9", 150), validation_error);
  CHECK_THROWS_AS(t.find("moco", "y", 151), validation_error);

  StudySpec bad = spec;
  bad.reps = 0;
  CHECK_THROWS_AS(run_study(bad, 1), validation_error);
  bad = spec;
  bad.n_grid.clear();
  CHECK_THROWS_AS(run_study(bad, 1), validation_error);
  bad = spec;
  bad.alpha = 1.0;
  CHECK_THROWS_AS(run_study(bad, 1), validation_error);
}

TEST_CASE("replication harness is deterministic and honest about one rep") {
  StudySpec spec;
  spec.design = SimDesign::theory_design();
  spec.methods = {Method::naive_all, Method::nebel};
  spec.n_grid = {120};
  spec.reps = 3;
  MetricsTable a = run_study(spec, 55);
  MetricsTable b = run_study(spec, 55);
  CHECK(a.to_csv() == b.to_csv());
  CHECK(a.to_csv().find("method,region,n,reps,failures,truth,mean,bias,sd,"
                        "mse_x1000,rejection,coverage") == 0);

  spec.reps = 1;
  MetricsTable one = run_study(spec, 55);
  // a single replicate has no spread estimate
  CHECK(one.to_csv().find(",na,") != std::string::npos);
}

TEST_CASE("region refits reuse shared stages without changing the answer") {
  Cohort c = gen_main(400, 7);
  EstimatorConfig cfg;
  cfg.learners = lean_library();
  cfg.k_folds = 5;
  cfg.region = 0;
  NuisanceFits base = fit_all_nuisances(c, cfg, 11);
  NuisanceFits re = refit_for_region(base, c, 3);
  cfg.region = 3;
  NuisanceFits full = fit_all_nuisances(c, cfg, 11);
  ThetaEstimate t_re = theta_from_fits(re, c, 1);
  ThetaEstimate t_full = theta_from_fits(full, c, 1);
  CHECK(t_re.theta_onestep == t_full.theta_onestep);
  CHECK(t_re.theta_plugin == t_full.theta_plugin);
  ThetaEstimate t0 = theta_from_fits(re, c, 0);
  CHECK(std::isfinite(t0.theta_onestep));
  CHECK_THROWS_AS(refit_for_region(base, c, 9), validation_error);
}
