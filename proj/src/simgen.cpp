// Copyright 2026 The MoCo Authors
// SPDX-License-Identifier: Apache-2.0

#include "moco/simgen.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>
#include <utility>

#include "moco/baselines.hpp"
#include "moco/inference.hpp"
#include "moco/parallel.hpp"

namespace moco {
namespace {

constexpr std::uint64_t kGenStream = 0x51309e4;
constexpr std::uint64_t kOracleStream = 0x0acc1e;
constexpr long kResampleCap = 1000000;

double norm_pdf(double t) {
  static const double kInvRoot2Pi = 0.3989422804014327;
  return kInvRoot2Pi * std::exp(-0.5 * t * t);
}

double norm_cdf(double t) { return 0.5 * std::erfc(-t / std::sqrt(2.0)); }

// mean of a unit-variance normal truncated to (-inf, upper]
double trunc_norm_mean(double mu, double upper) {
  const double alpha = upper - mu;
  return mu - norm_pdf(alpha) / norm_cdf(alpha);
}

double bern(rng_t& rng, double p) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p ? 1.0 : 0.0;
}

double gauss(rng_t& rng) {
  return std::normal_distribution<double>(0.0, 1.0)(rng);
}

double trunc_gamma(rng_t& rng, double shape, double rate, double lo,
                   double hi) {
  std::gamma_distribution<double> g(shape, 1.0 / rate);
  for (long i = 0; i < kResampleCap; ++i) {
    const double v = g(rng);
    if (v >= lo && v <= hi) return v;
  }
  throw estimation_error("truncated-gamma resampler starved");
}

}  // namespace

// ---------- designs ----------

SimDesign SimDesign::main_design() {
  SimDesign d;
  d.kind = DesignKind::main_fc;
  d.a_logit = (VectorXd(4) << -0.11, 0.71, -0.08, -0.19).finished();
  d.logm_coef = (VectorXd(9) << -1.26, 0.095, 0.104, -0.0535, -0.12, 0.00675,
                 -0.000255, 0.324, 0.064)
                    .finished();
  // columns: 1, a, m, m^2, x1, x2, x3, z1, z2, z3, z4
  d.y_coef.resize(6, 11);
  d.y_coef.row(0) << -0.22, 0, -0.98, 0, -0.06, 0.012, 0.03, 0, 0, 0, 0;
  d.y_coef.row(1) << -0.20, 0, 0.92, 0, 0.06, -0.009, -0.03, 0, 0, 0, 0;
  d.y_coef.row(2) << -0.37, 0, 0.86, 0, 0.04, 0.002, 0.04, 0, 0, 0, 0;
  d.y_coef.row(3) << 0.17, 0, -1.02, 0, -0.06, 0.002, 0.04, 0, 0, 0, 0;
  d.y_coef.row(4) << -0.20, -0.03, 1.50, -0.61, 0.02, -0.002, 0.03, -0.0005,
      0.0003, -0.03, -0.02;
  d.y_coef.row(5) << -0.16, -0.05, 1.67, -0.64, 0.03, -0.001, 0.02, -0.0005,
      0.0003, -0.02, -0.03;
  return d;
}

SimDesign SimDesign::theory_design() {
  SimDesign d = main_design();
  d.kind = DesignKind::theory_binary;
  return d;
}

SimDesign SimDesign::var_design() {
  SimDesign d = main_design();
  d.kind = DesignKind::var_timeseries;
  d.y_coef = d.y_coef.row(5);  // correlation outcome reuses the sixth block
  d.y_sd = 0.0;                // outcome is a deterministic map of the draw
  return d;
}

SimDesign SimDesign::parse(const std::string& name) {
  if (name == "main") return main_design();
  if (name == "theory") return theory_design();
  if (name == "var") return var_design();
  throw validation_error("unknown design: " + name +
                         " (expected main, theory, or var)");
}

void SimDesign::check() const {
  auto prob = [](double p) { return std::isfinite(p) && p >= 0.0 && p <= 1.0; };
  if (!prob(sex_prob) || !prob(hand_prob) || !prob(med1_prob) ||
      !prob(med2_prob) || !prob(theory.x_prob))
    throw validation_error("design probability outside [0, 1]");
  if (!(age_shape > 0) || !(age_rate > 0) || !(age_lo < age_hi))
    throw validation_error("design age law is degenerate");
  if (!(severity_mean >= 0) || !(iq_sd0 > 0) || !(iq_sd1 > 0) ||
      !(logm_sd > 0))
    throw validation_error("design scale parameter not positive");
  if (kind != DesignKind::theory_binary) {
    if (a_logit.size() != 4 || !a_logit.allFinite())
      throw validation_error("design propensity coefficients invalid");
    if (logm_coef.size() != 9 || !logm_coef.allFinite())
      throw validation_error("design motion coefficients invalid");
    if (y_coef.size() == 0 || y_coef.cols() != 11 || !y_coef.allFinite())
      throw validation_error("design outcome coefficients invalid");
  }
  if (!std::isfinite(am_coef) || !std::isfinite(y_sd) || y_sd < 0 ||
      !prob(std::abs(y_corr)))
    throw validation_error("design outcome noise invalid");
  if (kind == DesignKind::var_timeseries) {
    if (t_frames < 2) throw validation_error("time-series design needs t >= 2");
    if (std::abs(var_lag) >= 1)
      throw validation_error("autoregressive weight must lie inside (-1, 1)");
    const double c0 = innov_base, c1 = innov_base + innov_a;
    if (std::abs(c0) > 1 || std::abs(c1) > 1)
      throw validation_error("innovation correlation outside [-1, 1]");
    if (!(frame_log_sd > 0))
      throw validation_error("frame dispersion must be positive");
  }
}

// ---------- generators ----------

namespace {

// outcome mean for one region of the coefficient block
double block_mean(const SimDesign& d, int region, double a, double m,
                  const double* x, const double* z) {
  const auto& c = d.y_coef;
  return c(region, 0) + c(region, 1) * a + c(region, 2) * m +
         c(region, 3) * m * m + c(region, 4) * x[0] + c(region, 5) * x[1] +
         c(region, 6) * x[2] + c(region, 7) * z[0] + c(region, 8) * z[1] +
         c(region, 9) * z[2] + c(region, 10) * z[3] + d.am_coef * a * m;
}

// shared covariate chain of the connectivity designs: x, a, z, and the
// latent log-motion mean
struct MainDraw {
  double x[3], a, z[4], logm_mean;
};

void draw_main_z(const SimDesign& d, rng_t& rng, double a, double* z) {
  if (a > 0.5) {
    z[0] = double(std::poisson_distribution<long>(d.severity_mean)(rng));
    z[1] = d.iq_mean1 + d.iq_sd1 * gauss(rng);
    z[2] = bern(rng, d.med1_prob);
    z[3] = bern(rng, d.med2_prob);
  } else {
    z[0] = 0.0;
    z[1] = d.iq_mean0 + d.iq_sd0 * gauss(rng);
    z[2] = 0.0;
    z[3] = 0.0;
  }
}

double logm_mean_at(const SimDesign& d, double a, const double* x,
                    const double* z) {
  const auto& c = d.logm_coef;
  return c[0] + c[1] * a + c[2] * x[0] + c[3] * x[1] + c[4] * x[2] +
         c[5] * z[0] + c[6] * z[1] + c[7] * z[2] + c[8] * z[3];
}

MainDraw draw_main_front(const SimDesign& d, rng_t& rng) {
  MainDraw o;
  o.x[0] = bern(rng, d.sex_prob);
  o.x[1] = trunc_gamma(rng, d.age_shape, d.age_rate, d.age_lo, d.age_hi);
  o.x[2] = bern(rng, d.hand_prob);
  const double logit = d.a_logit[0] + d.a_logit[1] * o.x[0] +
                       d.a_logit[2] * o.x[1] + d.a_logit[3] * o.x[2];
  o.a = bern(rng, expit(logit));
  draw_main_z(d, rng, o.a, o.z);
  o.logm_mean = logm_mean_at(d, o.a, o.x, o.z);
  return o;
}

Cohort gen_main_impl(const SimDesign& d, Eigen::Index n, std::uint64_t seed) {
  Cohort c;
  const auto regions = d.y_coef.rows();
  c.a.resize(n);
  c.m.resize(n);
  c.delta.resize(n);
  c.x.resize(n, 3);
  c.z.resize(n, 4);
  c.y.resize(n, regions);
  auto rng = make_rng(seed, kGenStream);
  const double corr_w = std::sqrt(d.y_corr);
  const double own_w = std::sqrt(1.0 - d.y_corr);
  for (Eigen::Index i = 0; i < n; ++i) {
    MainDraw o = draw_main_front(d, rng);
    const double m = std::exp(o.logm_mean + d.logm_sd * gauss(rng));
    c.a[i] = o.a;
    c.m[i] = m;
    c.delta[i] = m <= d.delta_threshold ? 1.0 : 0.0;
    c.x.row(i) << o.x[0], o.x[1], o.x[2];
    c.z.row(i) << o.z[0], o.z[1], o.z[2], o.z[3];
    const double shared = gauss(rng);
    for (Eigen::Index r = 0; r < regions; ++r)
      c.y(i, r) = block_mean(d, int(r), o.a, m, o.x, o.z) +
                  d.y_sd * (corr_w * shared + own_w * gauss(rng));
  }
  c.x_names = {"sex", "age", "hand"};
  c.z_names = {"severity", "iq", "med1", "med2"};
  c.y_names.clear();
  for (Eigen::Index r = 0; r < regions; ++r)
    c.y_names.push_back("y" + std::to_string(r + 1));
  c.delta_rule = d.delta_threshold;
  return c;
}

Cohort gen_theory_impl(const SimDesign& d, Eigen::Index n, std::uint64_t seed) {
  const auto& t = d.theory;
  Cohort c;
  c.a.resize(n);
  c.m.resize(n);
  c.delta.resize(n);
  c.x.resize(n, 1);
  c.z.resize(n, 1);
  c.y.resize(n, 1);
  auto rng = make_rng(seed, kGenStream);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double x = bern(rng, t.x_prob);
    const double a = bern(rng, expit(t.a_icept + t.a_x * x));
    const double z = bern(rng, expit(t.z_icept + t.z_a * a));
    const double m =
        t.m_icept + t.m_a * a + t.m_x * x + t.m_z * z + t.m_sd * gauss(rng);
    const double y = t.y_icept + t.y_a * a + t.y_m * m + t.y_x * x +
                     t.y_z * z + t.y_sd * gauss(rng);
    c.a[i] = a;
    c.m[i] = m;
    c.delta[i] = m <= t.delta_threshold ? 1.0 : 0.0;
    c.x(i, 0) = x;
    c.z(i, 0) = z;
    c.y(i, 0) = y;
  }
  c.x_names = {"x"};
  c.z_names = {"z"};
  c.y_names = {"y"};
  c.delta_rule = t.delta_threshold;
  return c;
}

// one scan: per-frame motion around the latent level, a bivariate AR(1)
// neural signal, and the observed series correlation
struct Scan {
  double m_obs, rho;
};

Scan simulate_scan(const SimDesign& d, rng_t& rng, double a, double level) {
  const int t_len = d.t_frames;
  const double s = d.frame_log_sd;
  const double c = d.innov_base + d.innov_a * a;
  const double lag = d.var_lag;
  const double innov_w = std::sqrt(1.0 - lag * lag);
  const double cross = std::sqrt(std::max(0.0, 1.0 - c * c));
  double xi1 = 0, xi2 = 0;
  {  // stationary start
    const double g1 = gauss(rng), g2 = gauss(rng);
    xi1 = g1;
    xi2 = c * g1 + cross * g2;
  }
  double sum_m = 0, s1 = 0, s2 = 0, s11 = 0, s22 = 0, s12 = 0;
  for (int t = 0; t < t_len; ++t) {
    if (t > 0) {
      const double g1 = gauss(rng), g2 = gauss(rng);
      xi1 = lag * xi1 + innov_w * g1;
      xi2 = lag * xi2 + innov_w * (c * g1 + cross * g2);
    }
    const double m_t =
        level <= 0.0 ? 0.0
                     : std::exp(std::log(level) - 0.5 * s * s + s * gauss(rng));
    const double f = d.f_lin * m_t + d.f_quad * m_t * m_t;
    const double e1 = xi1 + f, e2 = xi2 + f;
    sum_m += m_t;
    s1 += e1;
    s2 += e2;
    s11 += e1 * e1;
    s22 += e2 * e2;
    s12 += e1 * e2;
  }
  Scan out;
  out.m_obs = sum_m / t_len;
  const double n = t_len;
  const double v1 = s11 - s1 * s1 / n, v2 = s22 - s2 * s2 / n;
  const double cv = s12 - s1 * s2 / n;
  out.rho = v1 > 0 && v2 > 0 ? cv / std::sqrt(v1 * v2) : 0.0;
  return out;
}

Cohort gen_var_impl(const SimDesign& d, Eigen::Index n, std::uint64_t seed) {
  Cohort c;
  c.a.resize(n);
  c.m.resize(n);
  c.delta.resize(n);
  c.x.resize(n, 3);
  c.z.resize(n, 4);
  c.y.resize(n, 1);
  c.diag.resize(n);
  auto rng = make_rng(seed, kGenStream);
  for (Eigen::Index i = 0; i < n; ++i) {
    MainDraw o = draw_main_front(d, rng);
    const double level = std::exp(o.logm_mean + d.logm_sd * gauss(rng));
    Scan scan = simulate_scan(d, rng, o.a, level);
    c.a[i] = o.a;
    c.m[i] = scan.m_obs;
    c.delta[i] = scan.m_obs <= d.delta_threshold ? 1.0 : 0.0;
    c.x.row(i) << o.x[0], o.x[1], o.x[2];
    c.z.row(i) << o.z[0], o.z[1], o.z[2], o.z[3];
    double y = block_mean(d, 0, o.a, scan.rho, o.x, o.z);
    if (d.y_sd > 0) y += d.y_sd * gauss(rng);
    c.y(i, 0) = y;
    c.diag[i] = scan.rho;
  }
  c.x_names = {"sex", "age", "hand"};
  c.z_names = {"severity", "iq", "med1", "med2"};
  c.y_names = {"y"};
  c.diag_name = "rho";
  c.delta_rule = d.delta_threshold;
  return c;
}

}  // namespace

Cohort generate(const SimDesign& design, Eigen::Index n, std::uint64_t seed) {
  if (n < 1) throw validation_error("generator needs n >= 1");
  design.check();
  switch (design.kind) {
    case DesignKind::theory_binary:
      return gen_theory_impl(design, n, seed);
    case DesignKind::var_timeseries:
      return gen_var_impl(design, n, seed);
    default:
      return gen_main_impl(design, n, seed);
  }
}

Cohort gen_main(Eigen::Index n, std::uint64_t seed) {
  return generate(SimDesign::main_design(), n, seed);
}

Cohort gen_theory(Eigen::Index n, std::uint64_t seed) {
  return generate(SimDesign::theory_design(), n, seed);
}

Cohort gen_var_timeseries(Eigen::Index n, std::uint64_t seed) {
  return generate(SimDesign::var_design(), n, seed);
}

// ---------- truth oracle ----------

double OracleResult::gap_se(int region) const {
  if (gap_arm_se.size() == 0) return 0.0;
  return std::sqrt(gap_arm_se(region, 0) * gap_arm_se(region, 0) +
                   gap_arm_se(region, 1) * gap_arm_se(region, 1));
}

namespace {

// Closed-form facts of the binary design: two-point laws everywhere and a
// unit-variance normal motion with an upper usability cut, so standardized
// means reduce to truncated-normal moments and the influence-function
// variance to finite cell sums (one numeric 1-D integral for the
// density-ratio term).
struct TheoryFacts {
  const SimDesign::TheoryBlock t;
  double qa[2];       // P(Z=1 | a)
  double pi1[2];      // P(A=1 | x)
  double mbar[2];     // E[M | usable, A=0, x]
  double keep0[2];    // P(usable | A=0, x)
  double theta[2];    // standardized means
  double ideal[2];    // motion-zero means

  explicit TheoryFacts(const SimDesign& d) : t(d.theory) {
    for (int a = 0; a < 2; ++a) qa[a] = expit(t.z_icept + t.z_a * a);
    for (int x = 0; x < 2; ++x) {
      pi1[x] = expit(t.a_icept + t.a_x * x);
      double mass = 0, mean = 0;
      for (int z = 0; z < 2; ++z) {
        const double pz = z ? qa[0] : 1 - qa[0];
        const double mu = m_mean(0, x, z);
        const double keep = norm_cdf(t.delta_threshold - mu);
        mass += pz * keep;
        mean += pz * keep * trunc_norm_mean(mu, t.delta_threshold);
      }
      keep0[x] = mass;
      mbar[x] = mean / mass;
    }
    for (int a = 0; a < 2; ++a) {
      theta[a] = 0.5 * (xi(a, 0) + xi(a, 1));
      double v = 0;
      for (int x = 0; x < 2; ++x)
        for (int z = 0; z < 2; ++z)
          v += 0.5 * (z ? qa[a] : 1 - qa[a]) * y_mean(a, x, z, 0.0);
      ideal[a] = v;
    }
  }

  double m_mean(int a, int x, int z) const {
    return t.m_icept + t.m_a * a + t.m_x * x + t.m_z * z;
  }
  double y_mean(int a, int x, int z, double m) const {
    return t.y_icept + t.y_a * a + t.y_m * m + t.y_x * x + t.y_z * z;
  }
  double eta_z(int a, int x, int z) const { return y_mean(a, x, z, mbar[x]); }
  double eta_m(int a, double m, int x) const {
    return t.y_icept + t.y_a * a + t.y_m * m + t.y_x * x + t.y_z * qa[a];
  }
  double xi(int a, int x) const {
    return t.y_icept + t.y_a * a + t.y_m * mbar[x] + t.y_x * x +
           t.y_z * qa[a];
  }
  double pi_a(int a, int x) const { return a ? pi1[x] : 1 - pi1[x]; }
  double pibar0(int x) const { return (1 - pi1[x]) * keep0[x]; }
  // reference motion density p(m | usable, A=0, x)
  double ref_density(double m, int x) const {
    if (m > t.delta_threshold) return 0.0;
    double num = 0;
    for (int z = 0; z < 2; ++z)
      num += (z ? qa[0] : 1 - qa[0]) * norm_pdf(m - m_mean(0, x, z));
    return num / keep0[x];
  }

  double eif_variance(int a) const {
    // residual term: E[1{A=a} r^2 / pi^2] * Var(Y | rest)
    double piece1 = 0;
    for (int x = 0; x < 2; ++x) {
      double inner = 0;
      for (int z = 0; z < 2; ++z) {
        const double pz = z ? qa[a] : 1 - qa[a];
        const double mu = m_mean(a, x, z);
        const double lo = mu - 14.0, hi = t.delta_threshold;
        const int steps = 8000;  // Simpson rule, even count
        const double h = (hi - lo) / steps;
        double acc = 0;
        for (int i = 0; i <= steps; ++i) {
          const double m = lo + h * i;
          const double r = ref_density(m, x);
          const double f = r * r / norm_pdf(m - mu);
          acc += f * (i == 0 || i == steps ? 1.0 : (i % 2 ? 4.0 : 2.0));
        }
        inner += pz * acc * h / 3.0;
      }
      piece1 += 0.5 / pi_a(a, x) * inner * t.y_sd * t.y_sd;
    }
    // augmentation terms: piecewise-linear in m inside each observed cell,
    // so truncated first and second moments finish the job
    double piece2 = 0;
    for (int x = 0; x < 2; ++x) {
      for (int ap = 0; ap < 2; ++ap) {
        for (int z = 0; z < 2; ++z) {
          const double p_cell =
              0.5 * pi_a(ap, x) * (z ? qa[ap] : 1 - qa[ap]);
          const double c2 =
              ap == a ? (eta_z(a, x, z) - xi(a, x)) / pi_a(a, x) : 0.0;
          const double c = c2 + xi(a, x) - theta[a];
          if (ap == 1) {
            piece2 += p_cell * c * c;
            continue;
          }
          const double mu = m_mean(0, x, z);
          const double alpha = t.delta_threshold - mu;
          const double cdf = norm_cdf(alpha), pdf = norm_pdf(alpha);
          const double e1 = mu * cdf - pdf;
          const double e2 =
              (mu * mu + 1) * cdf - (t.delta_threshold + mu) * pdf;
          const double k = t.y_m / pibar0(x);
          const double mb = mbar[x];
          piece2 += p_cell *
                    (c * c + 2 * c * k * (e1 - mb * cdf) +
                     k * k * (e2 - 2 * mb * e1 + mb * mb * cdf));
        }
      }
    }
    return piece1 + piece2;
  }
};

OracleResult oracle_theory(const SimDesign& d) {
  TheoryFacts f(d);
  OracleResult o;
  o.theta.setZero(1, 2);
  o.theta_se.setZero(1, 2);
  o.ideal.setZero(1, 2);
  o.ideal_se.setZero(1, 2);
  o.gap_arm_se.setZero(1, 2);
  o.eif_var.resize(2);
  for (int a = 0; a < 2; ++a) {
    o.theta(0, a) = f.theta[a];
    o.ideal(0, a) = f.ideal[a];
    o.eif_var[a] = f.eif_variance(a);
  }
  o.acceptance = 0.5 * (f.keep0[0] + f.keep0[1]);
  return o;
}

// Monte Carlo path for the connectivity designs: covariates from the design
// laws, the motion draw replayed through the low-motion reference group by
// rejection, and the true outcome mean averaged. The motion-zero variant
// shares every covariate draw, so the gap is a paired contrast.
OracleResult oracle_mc(const SimDesign& d, long mc_samples,
                       std::uint64_t seed) {
  if (mc_samples < 1000)
    throw validation_error("truth oracle needs at least 1000 samples");
  const bool var_kind = d.kind == DesignKind::var_timeseries;
  const int regions = int(d.y_coef.rows());
  OracleResult o;
  o.theta.setZero(regions, 2);
  o.theta_se.setZero(regions, 2);
  o.ideal.setZero(regions, 2);
  o.ideal_se.setZero(regions, 2);
  o.gap_arm_se.setZero(regions, 2);
  o.samples = mc_samples;

  long attempts = 0, accepts = 0;
  for (int a = 0; a < 2; ++a) {
    std::vector<double> sum_t(regions, 0.0), ss_t(regions, 0.0);
    std::vector<double> sum_i(regions, 0.0), ss_i(regions, 0.0);
    std::vector<double> ss_g(regions, 0.0), sum_g(regions, 0.0);
    auto rng = make_rng(seed, kOracleStream + std::uint64_t(a));
    for (long it = 0; it < mc_samples; ++it) {
      double x[3];
      x[0] = bern(rng, d.sex_prob);
      x[1] = trunc_gamma(rng, d.age_shape, d.age_rate, d.age_lo, d.age_hi);
      x[2] = bern(rng, d.hand_prob);
      double z[4];
      draw_main_z(d, rng, double(a), z);
      // reference motion: the z-chain of the low-motion group, kept only
      // when the scan passes the usability rule
      double m = 0, rho = 0, rho0 = 0;
      for (long tries = 0;; ++tries) {
        if (tries >= kResampleCap)
          throw estimation_error("truth oracle rejection sampler starved");
        double z0[4];
        draw_main_z(d, rng, 0.0, z0);
        const double level =
            std::exp(logm_mean_at(d, 0.0, x, z0) + d.logm_sd * gauss(rng));
        ++attempts;
        if (!var_kind) {
          if (level <= d.delta_threshold) {
            ++accepts;
            m = level;
            break;
          }
        } else {
          Scan scan = simulate_scan(d, rng, double(a), level);
          if (scan.m_obs <= d.delta_threshold) {
            ++accepts;
            m = scan.rho;  // outcome block consumes the correlation
            break;
          }
        }
      }
      if (var_kind) {
        Scan zero = simulate_scan(d, rng, double(a), 0.0);
        rho0 = zero.rho;
        rho = m;
      }
      for (int r = 0; r < regions; ++r) {
        const double v = var_kind ? block_mean(d, r, double(a), rho, x, z)
                                  : block_mean(d, r, double(a), m, x, z);
        const double vi = var_kind ? block_mean(d, r, double(a), rho0, x, z)
                                   : block_mean(d, r, double(a), 0.0, x, z);
        sum_t[r] += v;
        ss_t[r] += v * v;
        sum_i[r] += vi;
        ss_i[r] += vi * vi;
        sum_g[r] += vi - v;
        ss_g[r] += (vi - v) * (vi - v);
      }
    }
    const double n = double(mc_samples);
    for (int r = 0; r < regions; ++r) {
      const double mt = sum_t[r] / n, mi = sum_i[r] / n, mg = sum_g[r] / n;
      o.theta(r, a) = mt;
      o.ideal(r, a) = mi;
      auto se = [&](double ss, double mean) {
        const double v = std::max(0.0, ss / n - mean * mean);
        return std::sqrt(v / n);
      };
      o.theta_se(r, a) = se(ss_t[r], mt);
      o.ideal_se(r, a) = se(ss_i[r], mi);
      o.gap_arm_se(r, a) = se(ss_g[r], mg);
    }
  }
  o.acceptance = attempts > 0 ? double(accepts) / double(attempts) : 1.0;
  if (o.acceptance < 1e-4)
    throw estimation_error("truth oracle rejection sampler starved");
  return o;
}

}  // namespace

OracleResult truth_oracle(const SimDesign& design, long mc_samples,
                          std::uint64_t seed) {
  design.check();
  if (design.kind == DesignKind::theory_binary) {
    OracleResult o = oracle_theory(design);
    o.samples = mc_samples;
    return o;
  }
  return oracle_mc(design, mc_samples, seed);
}

// ---------- misspecification switchboard ----------

EstimatorConfig apply_misspec(const MisspecPlan& plan, EstimatorConfig config) {
  config.plan = plan;
  return config;
}

// ---------- replication harness ----------

std::string method_label(Method m) {
  switch (m) {
    case Method::moco: return "moco";
    case Method::naive_all: return baseline_label(BaselineKind::naive_all);
    case Method::naive_removal:
      return baseline_label(BaselineKind::naive_removal);
    case Method::iptw: return baseline_label(BaselineKind::iptw);
    case Method::nebel: return baseline_label(BaselineKind::nebel);
  }
  throw std::logic_error("unreachable method");
}

Method parse_method(const std::string& label) {
  if (label == "moco") return Method::moco;
  switch (parse_baseline(label)) {
    case BaselineKind::naive_all: return Method::naive_all;
    case BaselineKind::naive_removal: return Method::naive_removal;
    case BaselineKind::iptw: return Method::iptw;
    case BaselineKind::nebel: return Method::nebel;
  }
  throw std::logic_error("unreachable method label");
}

namespace {

std::string csv_number(double v) {
  if (std::isnan(v)) return "na";
  std::ostringstream out;
  out.precision(10);
  out << v;
  return out.str();
}

// one replicate result cell
struct RepCell {
  double diff = 0, lo = 0, hi = 0;
  bool ok = false;
};

}  // namespace

std::string MetricsTable::to_csv() const {
  std::ostringstream out;
  out << "method,region,n,reps,failures,truth,mean,bias,sd,mse_x1000,"
         "rejection,coverage\n";
  for (const auto& r : rows) {
    out << r.method << ',' << r.region << ',' << r.n << ',' << r.reps << ','
        << r.failures << ',' << csv_number(r.truth) << ','
        << csv_number(r.mean_est) << ',' << csv_number(r.bias) << ','
        << csv_number(r.sd) << ',' << csv_number(r.mse1000) << ','
        << csv_number(r.rejection) << ',' << csv_number(r.coverage) << '\n';
  }
  return out.str();
}

const MetricsRow& MetricsTable::find(const std::string& method,
                                     const std::string& region,
                                     Eigen::Index n) const {
  for (const auto& r : rows)
    if (r.method == method && r.region == region && r.n == n) return r;
  throw validation_error("metrics row not found: " + method + "/" + region +
                         "/n=" + std::to_string(n));
}

MetricsTable run_study(const StudySpec& spec, std::uint64_t seed) {
  if (spec.reps < 1) throw validation_error("study needs reps >= 1");
  if (spec.n_grid.empty()) throw validation_error("study needs a sample grid");
  if (spec.methods.empty()) throw validation_error("study needs methods");
  if (!(spec.alpha > 0 && spec.alpha < 1))
    throw validation_error("study alpha outside (0, 1)");
  spec.design.check();

  const OracleResult oracle = truth_oracle(spec.design, spec.oracle_samples,
                                           derive_seed(seed, kOracleStream));
  const Cohort probe = generate(spec.design, 2, derive_seed(seed, 0xbead));
  const int regions = int(probe.n_regions());
  const std::size_t n_methods = spec.methods.size();

  MetricsTable table;
  for (std::size_t ni = 0; ni < spec.n_grid.size(); ++ni) {
    const Eigen::Index n = spec.n_grid[ni];
    std::vector<RepCell> cells(std::size_t(spec.reps) * n_methods *
                               std::size_t(regions));
    auto cell = [&](int rep, std::size_t mi, int r) -> RepCell& {
      return cells[(std::size_t(rep) * n_methods + mi) * std::size_t(regions) +
                   std::size_t(r)];
    };
    parallel_for(std::size_t(spec.reps), [&](std::size_t rep) {
      const std::uint64_t rep_seed =
          derive_seed(derive_seed(seed, 0x2e50 + ni), 0x1000 + rep);
      const Cohort cohort =
          generate(spec.design, n, derive_seed(rep_seed, 1));
      for (std::size_t mi = 0; mi < n_methods; ++mi) {
        const Method method = spec.methods[mi];
        try {
          if (method == Method::moco) {
            EstimatorConfig config = spec.config;
            NuisanceFits shared;
            for (int r = 0; r < regions; ++r) {
              config.region = r;
              std::pair<ThetaEstimate, ThetaEstimate> est;
              if (spec.use_cross_fit) {
                est = cross_fit_pair(cohort, config,
                                     derive_seed(rep_seed, 2));
              } else {
                if (r == 0)
                  shared = fit_all_nuisances(cohort, config,
                                             derive_seed(rep_seed, 2));
                else
                  shared = refit_for_region(shared, cohort, r);
                est = {theta_from_fits(shared, cohort, 0),
                       theta_from_fits(shared, cohort, 1)};
              }
              RegionResult rr =
                  region_inference(cohort.y_names[std::size_t(r)], est.second,
                                   est.first, spec.alpha);
              cell(int(rep), mi, r) = {rr.diff, rr.ci_lo, rr.ci_hi, true};
            }
            continue;
          }
          for (int r = 0; r < regions; ++r) {
            RegionResult rr;
            switch (method) {
              case Method::naive_all:
                rr = naive_all(cohort, r, spec.alpha);
                break;
              case Method::naive_removal:
                rr = naive_removal(cohort, r, spec.alpha);
                break;
              case Method::iptw:
                rr = iptw(cohort, r, derive_seed(rep_seed, 0x3000 + r),
                          spec.iptw_bootstrap, spec.alpha, spec.config.trunc);
                break;
              default:
                rr = nebel(cohort, r, spec.config,
                           derive_seed(rep_seed, 0x4000 + r), spec.alpha);
                break;
            }
            cell(int(rep), mi, r) = {rr.diff, rr.ci_lo, rr.ci_hi, true};
          }
        } catch (const std::runtime_error&) {
          for (int r = 0; r < regions; ++r)
            cell(int(rep), mi, r).ok = false;
        }
      }
    });

    for (std::size_t mi = 0; mi < n_methods; ++mi) {
      for (int r = 0; r < regions; ++r) {
        MetricsRow row;
        row.method = method_label(spec.methods[mi]);
        row.region = probe.y_names[std::size_t(r)];
        row.n = n;
        row.reps = spec.reps;
        row.truth = oracle.diff(r);
        double sum = 0, ss = 0, rej = 0, cov = 0;
        long used = 0;
        for (int rep = 0; rep < spec.reps; ++rep) {
          const RepCell& c = cell(rep, mi, r);
          if (!c.ok) continue;
          ++used;
          sum += c.diff;
          ss += (c.diff - row.truth) * (c.diff - row.truth);
          if (c.lo > 0 || c.hi < 0) rej += 1;
          if (c.lo <= row.truth && row.truth <= c.hi) cov += 1;
        }
        row.failures = int(spec.reps - used);
        const double nan = std::numeric_limits<double>::quiet_NaN();
        if (used == 0) {
          row.mean_est = row.bias = row.sd = row.mse1000 = nan;
          row.rejection = row.coverage = nan;
        } else {
          row.mean_est = sum / double(used);
          row.bias = row.mean_est - row.truth;
          row.mse1000 = 1000.0 * ss / double(used);
          row.rejection = rej / double(used);
          row.coverage = cov / double(used);
          if (used >= 2) {
            double dev = 0;
            for (int rep = 0; rep < spec.reps; ++rep) {
              const RepCell& c = cell(rep, mi, r);
              if (c.ok)
                dev += (c.diff - row.mean_est) * (c.diff - row.mean_est);
            }
            row.sd = std::sqrt(dev / double(used - 1));
          } else {
            row.sd = nan;
          }
        }
        table.rows.push_back(std::move(row));
      }
    }
  }
  return table;
}

}  // namespace moco
