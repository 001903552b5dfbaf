// Copyright 2026 The MoCo Authors
// SPDX-License-Identifier: Apache-2.0

#include "moco/baselines.hpp"

#include <algorithm>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <limits>
#include <vector>

#include "moco/learners.hpp"
#include "moco/parallel.hpp"

namespace moco {

namespace {

void check_region(const Cohort& cohort, int region) {
  if (region < 0 || region >= cohort.n_regions())
    throw validation_error("region index out of range");
}

ThetaEstimate group_estimate(int a, double value) {
  ThetaEstimate t;
  t.a = a;
  t.theta_plugin = value;
  t.theta_onestep = value;
  return t;
}

// Welch's t on two outcome samples; tau follows the sqrt(n)*SE convention
// with n the number of rows the comparison consumed.
RegionResult welch(const std::string& label, const std::vector<double>& y1,
                   const std::vector<double>& y0, double alpha) {
  const auto n1 = static_cast<double>(y1.size());
  const auto n0 = static_cast<double>(y0.size());
  if (y1.size() < 2 || y0.size() < 2)
    throw insufficient_data("group comparison needs >= 2 rows per group");

  auto moments = [](const std::vector<double>& v) {
    double mean = 0;
    for (double t : v) mean += t;
    mean /= static_cast<double>(v.size());
    double ss = 0;
    for (double t : v) ss += (t - mean) * (t - mean);
    return std::pair<double, double>(mean, ss / (static_cast<double>(v.size()) - 1));
  };
  auto [m1, v1] = moments(y1);
  auto [m0, v0] = moments(y0);

  RegionResult r;
  r.region = label;
  r.theta1 = group_estimate(1, m1);
  r.theta0 = group_estimate(0, m0);
  r.diff = m1 - m0;
  const double se2 = v1 / n1 + v0 / n0;
  const double se = std::sqrt(se2);
  const double n = n1 + n0;
  r.tau = se * std::sqrt(n);
  if (se == 0.0) {
    r.degenerate = true;
    r.z = r.diff == 0.0 ? 0.0
                        : std::copysign(
                              std::numeric_limits<double>::infinity(), r.diff);
    r.ci_lo = r.ci_hi = r.diff;
    return r;
  }
  r.z = r.diff / se;
  const double df = se2 * se2 /
                    (v1 * v1 / (n1 * n1 * (n1 - 1)) +
                     v0 * v0 / (n0 * n0 * (n0 - 1)));
  boost::math::students_t_distribution<double> td(df);
  const double half = boost::math::quantile(td, 1.0 - alpha / 2.0) * se;
  r.ci_lo = r.diff - half;
  r.ci_hi = r.diff + half;
  return r;
}

RegionResult welch_on_rows(const Cohort& cohort, int region,
                           const std::vector<Eigen::Index>& rows,
                           double alpha) {
  std::vector<double> y1, y0;
  for (Eigen::Index i : rows)
    (cohort.a[i] == 1.0 ? y1 : y0).push_back(cohort.y(i, region));
  if (y1.empty() || y0.empty())
    throw insufficient_data("a diagnosis group has no usable rows");
  std::string label = region < static_cast<int>(cohort.y_names.size())
                          ? cohort.y_names[static_cast<std::size_t>(region)]
                          : "y" + std::to_string(region);
  return welch(label, y1, y0, alpha);
}

// Probability predictions with degenerate-outcome short circuit: a constant
// 0/1 outcome yields that constant, bypassing both model and clamp so exact
// collapses (delta identically 1) stay exact.
struct PropModel {
  bool constant = false;
  double value = 1.0;
  Predictor fit;

  static PropModel train(const MatrixXd& x, const VectorXd& outcome,
                         std::uint64_t seed) {
    PropModel m;
    if ((outcome.array() == outcome[0]).all()) {
      m.constant = true;
      m.value = outcome[0];
      return m;
    }
    StackOptions opt;
    opt.loss = Loss::logloss;
    opt.seed = seed;
    // A near-raw internal clamp leaves truncation to the caller's epsilon.
    opt.prob_eps = 1e-6;
    m.fit = fit_plain(x, outcome, LearnerSpec{LearnerKind::ols_main}, opt);
    return m;
  }

  // clamped prediction; bumps `clamped` when truncation engages
  double at(const Eigen::RowVectorXd& x, double eps, long* clamped) const {
    if (constant) return value;
    VectorXd row = x.transpose();
    const double p = fit.predict_one(row);
    if (p < eps || p > 1.0 - eps) {
      if (clamped != nullptr) ++(*clamped);
      return std::clamp(p, eps, 1.0 - eps);
    }
    return p;
  }
};

struct IptwFit {
  double psi1 = 0, psi0 = 0;
  long clamped = 0, used = 0;
};

IptwFit iptw_point(const MatrixXd& x, const VectorXd& a, const VectorXd& delta,
                   const VectorXd& y, double eps, std::uint64_t seed) {
  const Eigen::Index n = a.size();
  PropModel pa = PropModel::train(x, a, derive_seed(seed, 1));
  std::vector<Eigen::Index> g1, g0;
  for (Eigen::Index i = 0; i < n; ++i)
    (a[i] == 1.0 ? g1 : g0).push_back(i);
  if (g1.empty() || g0.empty())
    throw insufficient_data("a diagnosis group is empty");

  IptwFit out;
  for (int grp : {0, 1}) {
    const auto& rows = grp == 1 ? g1 : g0;
    MatrixXd xg(static_cast<Eigen::Index>(rows.size()), x.cols());
    VectorXd dg(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      xg.row(static_cast<Eigen::Index>(r)) = x.row(rows[r]);
      dg[static_cast<Eigen::Index>(r)] = delta[rows[r]];
    }
    PropModel pd = PropModel::train(xg, dg, derive_seed(seed, 2 + grp));
    double acc = 0;
    for (Eigen::Index i : rows) {
      if (delta[i] != 1.0) continue;
      const double pa_i = pa.at(x.row(i), eps, &out.clamped);
      const double p_grp = grp == 1 ? pa_i : 1.0 - pa_i;
      const double pd_i = pd.at(x.row(i), eps, &out.clamped);
      acc += y[i] / (std::clamp(p_grp, eps, 1.0 - eps) * pd_i);
      ++out.used;
    }
    (grp == 1 ? out.psi1 : out.psi0) = acc / static_cast<double>(n);
  }
  return out;
}

}  // namespace

std::string baseline_label(BaselineKind kind) {
  switch (kind) {
    case BaselineKind::naive_all: return "naive";
    case BaselineKind::naive_removal: return "naive-removal";
    case BaselineKind::iptw: return "iptw";
    case BaselineKind::nebel: return "nebel";
  }
  throw std::logic_error("unreachable baseline kind");
}

BaselineKind parse_baseline(const std::string& label) {
  if (label == "naive") return BaselineKind::naive_all;
  if (label == "naive-removal") return BaselineKind::naive_removal;
  if (label == "iptw") return BaselineKind::iptw;
  if (label == "nebel") return BaselineKind::nebel;
  throw validation_error("unknown baseline: " + label);
}

RegionResult naive_all(const Cohort& cohort, int region, double alpha) {
  check_region(cohort, region);
  std::vector<Eigen::Index> rows(static_cast<std::size_t>(cohort.n()));
  for (Eigen::Index i = 0; i < cohort.n(); ++i)
    rows[static_cast<std::size_t>(i)] = i;
  return welch_on_rows(cohort, region, rows, alpha);
}

RegionResult naive_removal(const Cohort& cohort, int region, double alpha) {
  check_region(cohort, region);
  std::vector<Eigen::Index> rows;
  for (Eigen::Index i = 0; i < cohort.n(); ++i)
    if (cohort.delta[i] == 1.0) rows.push_back(i);
  return welch_on_rows(cohort, region, rows, alpha);
}

RegionResult iptw(const Cohort& cohort, int region, std::uint64_t seed,
                  int bootstrap, double alpha, const Truncation& trunc) {
  check_region(cohort, region);
  if (bootstrap < 10) throw validation_error("iptw needs >= 10 bootstrap replicates");
  const Eigen::Index n = cohort.n();
  const VectorXd y = cohort.y.col(region);

  IptwFit point = iptw_point(cohort.x, cohort.a, cohort.delta, y,
                             trunc.eps1, seed);

  RegionResult r;
  r.region = region < static_cast<int>(cohort.y_names.size())
                 ? cohort.y_names[static_cast<std::size_t>(region)]
                 : "y" + std::to_string(region);
  r.theta1 = group_estimate(1, point.psi1);
  r.theta0 = group_estimate(0, point.psi0);
  r.diff = point.psi1 - point.psi0;
  if (point.used > 0 &&
      static_cast<double>(point.clamped) > 0.2 * static_cast<double>(point.used))
    r.warnings.push_back("non_overlap: propensity truncation hit on more than 20% of weights");

  // Percentile bootstrap; replicate b draws rows with its own seed stream.
  std::vector<double> boot(static_cast<std::size_t>(bootstrap));
  std::vector<char> failed(static_cast<std::size_t>(bootstrap), 0);
  parallel_for(static_cast<std::size_t>(bootstrap), [&](std::size_t b) {
    auto rng = make_rng(seed, 0xb007 + b);
    std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
    MatrixXd xb(n, cohort.x.cols());
    VectorXd ab(n), db(n), yb(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const Eigen::Index j = pick(rng);
      xb.row(i) = cohort.x.row(j);
      ab[i] = cohort.a[j];
      db[i] = cohort.delta[j];
      yb[i] = y[j];
    }
    try {
      IptwFit f = iptw_point(xb, ab, db, yb, trunc.eps1,
                             derive_seed(seed, 0xb0070000 + b));
      boot[b] = f.psi1 - f.psi0;
    } catch (const std::exception&) {
      failed[b] = 1;  // e.g. a replicate missing one group entirely
    }
  });
  std::vector<double> kept;
  kept.reserve(boot.size());
  for (std::size_t b = 0; b < boot.size(); ++b)
    if (!failed[b]) kept.push_back(boot[b]);
  if (kept.size() < boot.size() / 2)
    throw estimation_error("iptw bootstrap: too many degenerate replicates");

  double mean = 0;
  for (double v : kept) mean += v;
  mean /= static_cast<double>(kept.size());
  double ss = 0;
  for (double v : kept) ss += (v - mean) * (v - mean);
  const double se = std::sqrt(ss / (static_cast<double>(kept.size()) - 1));
  std::sort(kept.begin(), kept.end());
  r.ci_lo = quantile_of_sorted(kept, alpha / 2.0);
  r.ci_hi = quantile_of_sorted(kept, 1.0 - alpha / 2.0);
  r.tau = se * std::sqrt(static_cast<double>(n));
  if (se == 0.0) {
    r.degenerate = true;
    r.z = r.diff == 0.0 ? 0.0
                        : std::copysign(
                              std::numeric_limits<double>::infinity(), r.diff);
  } else {
    r.z = r.diff / se;
  }
  return r;
}

VectorXd nebel_residuals(const Cohort& cohort, int region) {
  check_region(cohort, region);
  FeatureSet mx = make_features(cohort, "mx");
  StackOptions opt;
  opt.feature_names = mx.names;
  Predictor ols = fit_plain(mx.mat, cohort.y.col(region),
                            LearnerSpec{LearnerKind::ols_main}, opt);
  return cohort.y.col(region) - ols.predict(mx.mat);
}

RegionResult nebel(const Cohort& cohort, int region,
                   const EstimatorConfig& config, std::uint64_t seed,
                   double alpha) {
  check_region(cohort, region);
  const VectorXd resid = nebel_residuals(cohort, region);

  double psi[2] = {0, 0};
  double var_term[2] = {0, 0};
  double group_n[2] = {0, 0};
  for (int grp : {0, 1}) {
    std::vector<Eigen::Index> rows, usable;
    for (Eigen::Index i = 0; i < cohort.n(); ++i) {
      if (cohort.a[i] != static_cast<double>(grp)) continue;
      rows.push_back(i);
      if (cohort.delta[i] == 1.0) usable.push_back(i);
    }
    if (usable.size() < 10)
      throw insufficient_data("nebel needs >= 10 usable rows per group");

    MatrixXd zg(static_cast<Eigen::Index>(rows.size()), cohort.z.cols());
    VectorXd dg(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      zg.row(static_cast<Eigen::Index>(r)) = cohort.z.row(rows[r]);
      dg[static_cast<Eigen::Index>(r)] = cohort.delta[rows[r]];
    }
    PropModel miss = PropModel::train(zg, dg, derive_seed(seed, 30 + grp));

    MatrixXd zu(static_cast<Eigen::Index>(usable.size()), cohort.z.cols());
    VectorXd ru(static_cast<Eigen::Index>(usable.size()));
    for (std::size_t r = 0; r < usable.size(); ++r) {
      zu.row(static_cast<Eigen::Index>(r)) = cohort.z.row(usable[r]);
      ru[static_cast<Eigen::Index>(r)] = resid[usable[r]];
    }
    StackOptions opt;
    opt.k_folds = config.k_folds;
    opt.seed = derive_seed(seed, 40 + grp);
    Predictor outcome_fit =
        static_cast<Eigen::Index>(usable.size()) >= 2 * config.k_folds
            ? fit_stack(zu, ru, config.learners, opt)
            : fit_plain(zu, ru, LearnerSpec{LearnerKind::ols_main}, opt);

    // AIPW mean of the residual with per-subject influence values.
    double acc = 0;
    std::vector<double> infl(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const Eigen::Index i = rows[r];
      VectorXd zi = cohort.z.row(i).transpose();
      const double q = outcome_fit.predict_one(zi);
      const double g =
          std::clamp(miss.at(cohort.z.row(i), config.trunc.eps1, nullptr),
                     config.trunc.eps1, 1.0);
      double v = q;
      if (cohort.delta[i] == 1.0) v += (resid[i] - q) / g;
      infl[r] = v;
      acc += v;
    }
    const double ng = static_cast<double>(rows.size());
    psi[grp] = acc / ng;
    double ss = 0;
    for (double v : infl) ss += (v - psi[grp]) * (v - psi[grp]);
    var_term[grp] = ss / (ng - 1) / ng;
    group_n[grp] = ng;
  }

  RegionResult r;
  r.region = region < static_cast<int>(cohort.y_names.size())
                 ? cohort.y_names[static_cast<std::size_t>(region)]
                 : "y" + std::to_string(region);
  r.theta1 = group_estimate(1, psi[1]);
  r.theta0 = group_estimate(0, psi[0]);
  r.diff = psi[1] - psi[0];
  const double se = std::sqrt(var_term[0] + var_term[1]);
  r.tau = se * std::sqrt(group_n[0] + group_n[1]);
  if (se == 0.0) {
    r.degenerate = true;
    r.z = r.diff == 0.0 ? 0.0
                        : std::copysign(
                              std::numeric_limits<double>::infinity(), r.diff);
    r.ci_lo = r.ci_hi = r.diff;
    return r;
  }
  r.z = r.diff / se;
  const double half = norm_quantile(1.0 - alpha / 2.0) * se;
  r.ci_lo = r.diff - half;
  r.ci_hi = r.diff + half;
  return r;
}

}  // namespace moco
