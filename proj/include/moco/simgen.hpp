// Copyright 2026 The MoCo Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "moco/common.hpp"
#include "moco/data.hpp"
#include "moco/moco.hpp"

namespace moco {

// ---------- simulation designs ----------
// Three study families share one coefficient block: a six-region synthetic
// connectivity cohort ("main"), a binary design with closed-form truths
// ("theory"), and a frame-level time-series variant whose outcome is a
// motion-contaminated correlation ("var"). Every generator is a pure
// function of (design, n, seed).

enum class DesignKind { main_fc, theory_binary, var_timeseries, custom };

struct SimDesign {
  DesignKind kind = DesignKind::main_fc;

  // covariate marginals: sex ~ Bernoulli, age ~ Gamma(shape, rate) resampled
  // into [age_lo, age_hi], handedness ~ Bernoulli
  double sex_prob = 0.75;
  double age_shape = 25.0, age_rate = 2.5, age_lo = 8.0, age_hi = 13.0;
  double hand_prob = 0.92;

  // diagnosis propensity logit on (1, x1, x2, x3)
  VectorXd a_logit;

  // diagnosis-specific covariates: severity score ~ Poisson (diagnosed only),
  // IQ ~ group-specific normal, two medication indicators (diagnosed only)
  double severity_mean = 11.86;
  double iq_mean0 = 114.6, iq_sd0 = 11.6;
  double iq_mean1 = 104.2, iq_sd1 = 17.4;
  double med1_prob = 0.2, med2_prob = 0.17;

  // log-motion normal: coefficients on (1, a, x1, x2, x3, z1, z2, z3, z4)
  VectorXd logm_coef;
  double logm_sd = 0.56;
  double delta_threshold = 0.2;

  // outcome block: one row per region, coefficients on
  // (1, a, m, m^2, x1, x2, x3, z1, z2, z3, z4)
  MatrixXd y_coef;
  double am_coef = 0.0;  // optional diagnosis-by-motion interaction, all regions

  // residual noise: per-region sd with exchangeable correlation (stand-in for
  // an unavailable empirical residual covariance; differences and rejection
  // rates are oracle-checked, absolute spread columns are not)
  double y_sd = 0.1;
  double y_corr = 0.3;

  // time-series variant: per-subject VAR(1) neural signal plus a shared
  // motion component f(m) = f_lin*m + f_quad*m^2 in both regional series
  int t_frames = 120;
  double var_lag = 0.3;
  double innov_base = 0.3, innov_a = -0.15;
  double frame_log_sd = 0.5;  // within-scan dispersion of per-frame motion
  double f_lin = 0.2, f_quad = 0.05;

  // binary design: every law is Bernoulli or unit-variance normal with the
  // coefficients below, and every truth has a closed form
  struct TheoryBlock {
    double x_prob = 0.5;
    double a_icept = -0.25, a_x = 1.0;  // logit of P(A=1 | x)
    double z_icept = -0.5, z_a = 1.25;  // logit of P(Z=1 | a)
    double m_icept = 1.0, m_a = 1.0, m_x = 0.5, m_z = -0.25, m_sd = 1.0;
    double y_icept = -1.0, y_a = -0.25, y_m = 0.2, y_x = 0.5,
           y_z = -1.0 / 3.0, y_sd = 1.0;
    double delta_threshold = 2.0;
  } theory;

  static SimDesign main_design();
  static SimDesign theory_design();
  static SimDesign var_design();
  static SimDesign parse(const std::string& name);  // "main", "theory", "var"

  void check() const;  // finite coefficients, probabilities in [0, 1]
};

// ---------- generators ----------

Cohort generate(const SimDesign& design, Eigen::Index n, std::uint64_t seed);

Cohort gen_main(Eigen::Index n, std::uint64_t seed);
Cohort gen_theory(Eigen::Index n, std::uint64_t seed);
Cohort gen_var_timeseries(Eigen::Index n, std::uint64_t seed);

// ---------- brute-force truth ----------
// Independent evaluation of the estimand: sample the covariate law, the
// diagnosis-specific covariate law, and the reference motion law (rejection
// sampling against the usability rule in the low-motion group), then average
// the true outcome mean. The ideal variant fixes motion at zero.

struct OracleResult {
  // one row per region; columns are diagnosis groups a = 0, 1
  MatrixXd theta, theta_se;
  MatrixXd ideal, ideal_se;
  MatrixXd gap_arm_se;  // paired spread of (ideal - standardized) per arm
  // influence-function variances, exact cell sums for the binary design
  // (empty otherwise)
  VectorXd eif_var;
  double acceptance = 1.0;  // rejection-sampler acceptance rate
  long samples = 0;

  double diff(int region) const {
    return theta(region, 1) - theta(region, 0);
  }
  double diff_se(int region) const {
    return std::sqrt(theta_se(region, 0) * theta_se(region, 0) +
                     theta_se(region, 1) * theta_se(region, 1));
  }
  // distance between the motion-zero contrast and the standardized contrast
  double gap(int region) const {
    return (ideal(region, 1) - ideal(region, 0)) - diff(region);
  }
  double gap_se(int region) const;
};

OracleResult truth_oracle(const SimDesign& design, long mc_samples,
                          std::uint64_t seed);

// ---------- misspecification switchboard ----------

EstimatorConfig apply_misspec(const MisspecPlan& plan, EstimatorConfig config);

// ---------- replication harness ----------

enum class Method { moco, naive_all, naive_removal, iptw, nebel };

std::string method_label(Method m);
Method parse_method(const std::string& label);

struct StudySpec {
  SimDesign design;
  std::vector<Method> methods = {Method::moco};
  std::vector<Eigen::Index> n_grid = {400};
  int reps = 1;
  double alpha = 0.05;
  bool use_cross_fit = false;
  int iptw_bootstrap = 500;
  long oracle_samples = 4000000;
  EstimatorConfig config;  // learners, truncation, misspecification plan
};

struct MetricsRow {
  std::string method, region;
  Eigen::Index n = 0;
  int reps = 0;
  double truth = 0, mean_est = 0, bias = 0, sd = 0, mse1000 = 0;
  double rejection = 0;  // type I error when truth == 0, power otherwise
  double coverage = 0;
  int failures = 0;      // replicates that threw (excluded from moments)
};

struct MetricsTable {
  std::vector<MetricsRow> rows;
  std::string to_csv() const;
  const MetricsRow& find(const std::string& method, const std::string& region,
                         Eigen::Index n) const;
};

MetricsTable run_study(const StudySpec& spec, std::uint64_t seed);

}  // namespace moco
