// Copyright 2026 The MoCo Authors
// SPDX-License-Identifier: Apache-2.0

#include "moco/moco.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>

#include "moco/parallel.hpp"

namespace moco {

namespace {

constexpr NuisanceFlag kOk = NuisanceFlag::correct;

std::vector<Eigen::Index> all_indices(Eigen::Index n) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
  return idx;
}

// The a-column of every feature set built here comes first.
MatrixXd with_a_constant(MatrixXd mat, double a) {
  mat.col(0).setConstant(a);
  return mat;
}

double clamp_pi(double p, double eps) { return std::clamp(p, eps, 1.0 - eps); }

// Flagged and default chains share this: mu-hat weighted by a capped motion
// density ratio, evaluated on the given rows.
VectorXd ratio_pseudo(const Cohort& cohort, const VectorXd& mu_hat,
                      const ConditionalDensity& num,
                      const ConditionalDensity& den, const MatrixXd& f_num,
                      const MatrixXd& f_den,
                      const std::vector<Eigen::Index>& rows, double cap) {
  DensityRatio ratio{&num, &den, cap};
  VectorXd out(static_cast<Eigen::Index>(rows.size()));
  parallel_for(rows.size(), [&](std::size_t i) {
    Eigen::Index r = rows[i];
    out[static_cast<Eigen::Index>(i)] =
        mu_hat[r] * ratio.at(cohort.m[r], f_num.row(r).transpose(),
                             f_den.row(r).transpose());
  });
  return out;
}

VectorXd pseudo_m_chain(const NuisanceFits& nf, const Cohort& cohort,
                        const Predictor& mu, const ConditionalDensity& p1) {
  auto f_mu = make_features(cohort, "amxz");
  auto f_ax = make_features(cohort, "ax");
  auto f_axz = make_features(cohort, "axz");
  VectorXd mu_hat = mu.predict(f_mu.mat);
  return ratio_pseudo(cohort, mu_hat, p1, nf.dens_d1_axz,
                      with_a_constant(f_ax.mat, 0.0), f_axz.mat,
                      delta1_rows(cohort), nf.config.trunc.ratio_cap);
}

VectorXd pseudo_z_chain(const NuisanceFits& nf, const Cohort& cohort,
                        const Predictor& mu, const ConditionalDensity& p2) {
  auto f_mu = make_features(cohort, "amxz");
  auto f_ax = make_features(cohort, "ax");
  auto f_axz = make_features(cohort, "axz");
  VectorXd mu_hat = mu.predict(f_mu.mat);
  return ratio_pseudo(cohort, mu_hat, nf.dens_ax, p2, f_ax.mat, f_axz.mat,
                      all_indices(cohort.n()), nf.config.trunc.ratio_cap);
}

StackOptions stack_options(const EstimatorConfig& config, Loss loss,
                           std::uint64_t seed, std::uint64_t stream,
                           std::vector<std::string> names) {
  StackOptions o;
  o.k_folds = config.k_folds;
  o.loss = loss;
  o.seed = derive_seed(seed, stream);
  o.feature_names = std::move(names);
  return o;
}

}  // namespace

ThetaEstimate theta_from_fits(const NuisanceFits& nf, const Cohort& cohort,
                              int a) {
  ThetaEstimate t;
  t.a = a;
  t.theta_plugin = plugin_theta(nf, cohort, a);
  t.eif_values = eif_evaluate(nf, cohort, a, t.theta_plugin);
  t.theta_onestep = t.theta_plugin + t.eif_values.mean();
  return t;
}

bool MisspecPlan::all_correct() const {
  return mu == kOk && eta_m == kOk && xi == kOk && pi_bar0 == kOk &&
         pi_a == kOk && dens_m_d1_ax == kOk && dens_m_axz == kOk;
}

MisspecPlan MisspecPlan::from_row(const std::string& name) {
  std::string key;
  for (char c : name) key.push_back(static_cast<char>(std::toupper(c)));
  MisspecPlan p;
  const auto wrong = NuisanceFlag::intercept_only;
  const auto gauss = NuisanceFlag::gaussian_moment;
  if (key.empty() || key == "ALL_CORRECT" || key == "NONE") {
    p.row = "all_correct";
  } else if (key == "B2.1") {  // correct: pi_a and both densities
    p.mu = p.eta_m = p.xi = p.pi_bar0 = wrong;
  } else if (key == "B2.2") {  // correct: xi and both densities
    p.mu = p.eta_m = p.pi_bar0 = p.pi_a = wrong;
  } else if (key == "B2.3") {  // correct: mu, eta_m, pi_bar0, pi_a
    p.xi = wrong;
    p.dens_m_d1_ax = p.dens_m_axz = gauss;
  } else if (key == "B2.4") {  // correct: mu, pi_a, standardizing density
    p.eta_m = p.xi = p.pi_bar0 = wrong;
    p.dens_m_axz = gauss;
  } else if (key == "B2.5") {  // correct: mu, xi, standardizing density
    p.eta_m = p.pi_bar0 = p.pi_a = wrong;
    p.dens_m_axz = gauss;
  } else {
    throw validation_error("unknown misspecification plan: " + name);
  }
  if (p.row.empty() || key[0] == 'B') p.row = key;
  return p;
}

NuisanceFits fit_nuisances(const Cohort& cohort, const EstimatorConfig& config,
                           std::uint64_t seed) {
  if (config.region < 0 || config.region >= cohort.n_regions())
    throw validation_error("estimator region " + std::to_string(config.region) +
                           " out of range for " +
                           std::to_string(cohort.n_regions()) + " outcomes");
  NuisanceFits nf;
  nf.config = config;
  nf.seed = seed;
  const MisspecPlan& plan = config.plan;

  auto f_mu = make_features(cohort, "amxz");
  auto f_x = make_features(cohort, "x");
  auto f_ax = make_features(cohort, "ax");
  auto f_axz = make_features(cohort, "axz");
  VectorXd y = cohort.y.col(config.region);

  // step 1: mean outcome given diagnosis, motion, and both covariate blocks
  const bool need_mu_default =
      plan.mu == kOk || plan.xi == kOk || plan.eta_m == kOk;
  if (plan.mu == kOk) {
    nf.mu = fit_stack(f_mu.mat, y, config.learners,
                      stack_options(config, Loss::squared, seed, 1, f_mu.names));
    nf.mu_default = nf.mu;
  } else {
    nf.mu = fit_stack(f_mu.mat, y, intercept_only_library(),
                      stack_options(config, Loss::squared, seed, 1, f_mu.names));
    if (need_mu_default)
      nf.mu_default =
          fit_stack(f_mu.mat, y, config.learners,
                    stack_options(config, Loss::squared, seed, 2, f_mu.names));
  }

  // step 7: diagnosis and usability propensities
  auto prop_specs = [&](NuisanceFlag flag) {
    return flag == kOk ? config.learners : intercept_only_library();
  };
  nf.pi_a = fit_stack(f_x.mat, cohort.a, prop_specs(plan.pi_a),
                      stack_options(config, Loss::logloss, seed, 3, f_x.names));
  nf.pi_a_bar =
      plan.pi_bar0 == plan.pi_a
          ? nf.pi_a
          : fit_stack(f_x.mat, cohort.a, prop_specs(plan.pi_bar0),
                      stack_options(config, Loss::logloss, seed, 3, f_x.names));
  nf.pi_delta =
      fit_stack(f_ax.mat, cohort.delta, prop_specs(plan.pi_bar0),
                stack_options(config, Loss::logloss, seed, 4, f_ax.names));

  // step 2: the four motion densities on their prescribed subsets
  DensityOptions dopt;
  dopt.bins = config.density_bins;
  dopt.specs = config.density_learners;
  dopt.k_folds = config.k_folds;
  dopt.floor_eps = config.trunc.eps3;
  dopt.log_scale = config.density_log_scale;
  dopt.auto_log_scale = config.density_auto_log_scale;
  auto d1 = delta1_rows(cohort);
  auto everyone = all_indices(cohort.n());
  struct DensityJob {
    ConditionalDensity* out;
    const MatrixXd* features;
    const std::vector<Eigen::Index>* subset;
    std::uint64_t stream;
  };
  const DensityJob jobs[] = {
      {&nf.dens_d1_ax, &f_ax.mat, &d1, 5},
      {&nf.dens_d1_axz, &f_axz.mat, &d1, 6},
      {&nf.dens_ax, &f_ax.mat, &everyone, 7},
      {&nf.dens_axz, &f_axz.mat, &everyone, 8},
  };
  parallel_for(4, [&](std::size_t j) {
    DensityOptions o = dopt;
    o.seed = derive_seed(seed, jobs[j].stream);
    *jobs[j].out =
        fit_conditional_density(cohort.m, *jobs[j].features, *jobs[j].subset, o);
  });
  nf.dens_d1_ax_used = plan.dens_m_d1_ax == kOk
                           ? nf.dens_d1_ax
                           : fit_gaussian_density(cohort.m, d1, config.trunc.eps3);
  nf.dens_axz_used = plan.dens_m_axz == kOk
                         ? nf.dens_axz
                         : fit_gaussian_density(cohort.m, everyone,
                                                config.trunc.eps3);
  return nf;
}

VectorXd pseudo_outcome_m(const NuisanceFits& nf, const Cohort& cohort) {
  return pseudo_m_chain(nf, cohort, nf.mu, nf.dens_d1_ax_used);
}

VectorXd pseudo_outcome_z(const NuisanceFits& nf, const Cohort& cohort) {
  return pseudo_z_chain(nf, cohort, nf.mu, nf.dens_axz_used);
}

void fit_pseudo_regressions(NuisanceFits& nf, const Cohort& cohort) {
  const EstimatorConfig& config = nf.config;
  const MisspecPlan& plan = config.plan;
  auto f_azx = make_features(cohort, "azx");
  auto f_amx = make_features(cohort, "amx");
  auto d1 = delta1_rows(cohort);
  if (d1.empty()) throw insufficient_data("no usable rows for eta_z");

  MatrixXd azx_d1(static_cast<Eigen::Index>(d1.size()), f_azx.mat.cols());
  for (std::size_t i = 0; i < d1.size(); ++i)
    azx_d1.row(static_cast<Eigen::Index>(i)) = f_azx.mat.row(d1[i]);

  // step 3: eta_z is always a full regression; under a plan its
  // pseudo-outcome inherits the degraded mu and standardizing density, while
  // the ratio denominator stays correctly specified.
  nf.eta_z = fit_stack(azx_d1, pseudo_outcome_m(nf, cohort), config.learners,
                       stack_options(config, Loss::squared, nf.seed, 9,
                                     f_azx.names));
  const bool m_chain_differs =
      plan.mu != kOk || plan.dens_m_d1_ax != kOk;
  if (!m_chain_differs) {
    nf.eta_z_default = nf.eta_z;
  } else if (plan.xi == kOk) {
    nf.eta_z_default = fit_stack(
        azx_d1, pseudo_m_chain(nf, cohort, nf.mu_default, nf.dens_d1_ax),
        config.learners,
        stack_options(config, Loss::squared, nf.seed, 10, f_azx.names));
  }

  // step 4: eta_m follows its own flag; a degraded eta_m collapses to the
  // intercept of the degraded chain.
  if (plan.eta_m == kOk) {
    nf.eta_m = fit_stack(f_amx.mat,
                         pseudo_z_chain(nf, cohort, nf.mu_default, nf.dens_axz),
                         config.learners,
                         stack_options(config, Loss::squared, nf.seed, 11,
                                       f_amx.names));
  } else {
    nf.eta_m = fit_stack(f_amx.mat, pseudo_outcome_z(nf, cohort),
                         intercept_only_library(),
                         stack_options(config, Loss::squared, nf.seed, 11,
                                       f_amx.names));
  }
}

Predictor fit_xi(const NuisanceFits& nf, const Cohort& cohort) {
  if (!nf.has_pseudo_fits())
    throw estimation_error("fit_xi requires fitted eta_z");
  const EstimatorConfig& config = nf.config;
  auto f_azx = make_features(cohort, "azx");
  auto f_ax = make_features(cohort, "ax");
  auto opts = stack_options(config, Loss::squared, nf.seed, 12, f_ax.names);
  if (config.plan.xi == kOk) {
    const Predictor& chain =
        nf.eta_z_default.fits.empty() ? nf.eta_z : nf.eta_z_default;
    return fit_stack(f_ax.mat, chain.predict(f_azx.mat), config.learners, opts);
  }
  return fit_stack(f_ax.mat, nf.eta_z.predict(f_azx.mat),
                   intercept_only_library(), opts);
}

double plugin_theta(const NuisanceFits& nf, const Cohort& cohort, int a) {
  if (nf.xi.fits.empty()) throw estimation_error("plugin_theta requires xi");
  auto f_ax = make_features(cohort, "ax");
  return evaluate_with_counterfactual_a(nf.xi, f_ax.mat,
                                        static_cast<double>(a))
      .mean();
}

double xi_fubini(const NuisanceFits& nf, const VectorXd& x_row, int a) {
  if (nf.eta_m.fits.empty()) throw estimation_error("xi_fubini requires eta_m");
  const ConditionalDensity& p1 = nf.dens_d1_ax_used;
  VectorXd amx(2 + x_row.size());
  amx[0] = static_cast<double>(a);
  amx.tail(x_row.size()) = x_row;
  double acc = 0.0;
  if (p1.backend == DensityBackend::hazard) {
    VectorXd ax0(1 + x_row.size());
    ax0[0] = 0.0;
    ax0.tail(x_row.size()) = x_row;
    VectorXd masses = p1.bin_masses(ax0);
    for (Eigen::Index b = 0; b < masses.size(); ++b) {
      amx[1] = 0.5 * (p1.bin_edges[b] + p1.bin_edges[b + 1]);
      acc += masses[b] * nf.eta_m.predict_one(amx);
    }
  } else {
    const int quad = 64;
    for (int q = 0; q < quad; ++q) {
      amx[1] = p1.gauss_mean +
               p1.gauss_sd * norm_quantile((q + 0.5) / quad);
      acc += nf.eta_m.predict_one(amx) / quad;
    }
  }
  return acc;
}

VectorXd eif_evaluate(const NuisanceFits& nf, const Cohort& cohort, int a,
                      double theta_plugin) {
  const Truncation& tr = nf.config.trunc;
  const Eigen::Index n = cohort.n();
  auto f_mu = make_features(cohort, "amxz");
  auto f_x = make_features(cohort, "x");
  auto f_ax = make_features(cohort, "ax");
  auto f_axz = make_features(cohort, "axz");
  auto f_azx = make_features(cohort, "azx");
  auto f_amx = make_features(cohort, "amx");
  VectorXd y = cohort.y.col(nf.config.region);
  const double av = static_cast<double>(a);

  VectorXd mu_cf = evaluate_with_counterfactual_a(nf.mu, f_mu.mat, av);
  VectorXd eta_z_cf = evaluate_with_counterfactual_a(nf.eta_z, f_azx.mat, av);
  VectorXd eta_m_cf = evaluate_with_counterfactual_a(nf.eta_m, f_amx.mat, av);
  VectorXd xi_cf = evaluate_with_counterfactual_a(nf.xi, f_ax.mat, av);
  VectorXd p1_all = nf.pi_a.predict(f_x.mat);
  VectorXd p1_bar_all = nf.pi_a_bar.predict(f_x.mat);
  VectorXd pd0_all = evaluate_with_counterfactual_a(nf.pi_delta, f_ax.mat, 0.0);

  MatrixXd ax0 = with_a_constant(f_ax.mat, 0.0);
  MatrixXd axz_cf = with_a_constant(f_axz.mat, av);
  DensityRatio r_a{&nf.dens_d1_ax_used, &nf.dens_axz_used, tr.ratio_cap};
  const bool fubini_xi3 = !nf.config.plan.all_correct();

  VectorXd out(n);
  parallel_for(static_cast<std::size_t>(n), [&](std::size_t ii) {
    const Eigen::Index i = static_cast<Eigen::Index>(ii);
    double d = xi_cf[i] - theta_plugin;  // term (iv)
    if (cohort.a[i] == av) {
      double pa = clamp_pi(a == 1 ? p1_all[i] : 1.0 - p1_all[i], tr.eps1);
      double r = r_a.at(cohort.m[i], ax0.row(i).transpose(),
                        axz_cf.row(i).transpose());
      d += r * (y[i] - mu_cf[i]) / pa;        // term (i)
      d += (eta_z_cf[i] - xi_cf[i]) / pa;     // term (ii)
    }
    if (cohort.a[i] == 0.0 && cohort.delta[i] == 1.0) {
      double p0 = clamp_pi(1.0 - p1_bar_all[i], tr.eps1);
      double pd = clamp_pi(pd0_all[i], tr.eps1);
      double pbar = std::clamp(p0 * pd, tr.eps2, 1.0);
      double xi3 = fubini_xi3
                       ? xi_fubini(nf, f_x.mat.row(i).transpose(), a)
                       : xi_cf[i];
      d += (eta_m_cf[i] - xi3) / pbar;        // term (iii)
    }
    out[i] = d;
  });
  return out;
}

NuisanceFits fit_all_nuisances(const Cohort& cohort,
                               const EstimatorConfig& config,
                               std::uint64_t seed) {
  NuisanceFits nf = fit_nuisances(cohort, config, seed);
  fit_pseudo_regressions(nf, cohort);
  nf.xi = fit_xi(nf, cohort);
  return nf;
}

NuisanceFits refit_for_region(const NuisanceFits& base, const Cohort& cohort,
                              int region) {
  if (region < 0 || region >= cohort.n_regions())
    throw validation_error("estimator region " + std::to_string(region) +
                           " out of range for " +
                           std::to_string(cohort.n_regions()) + " outcomes");
  NuisanceFits nf = base;
  nf.config.region = region;
  const MisspecPlan& plan = nf.config.plan;
  const std::uint64_t seed = nf.seed;

  auto f_mu = make_features(cohort, "amxz");
  VectorXd y = cohort.y.col(region);
  const bool need_mu_default =
      plan.mu == kOk || plan.xi == kOk || plan.eta_m == kOk;
  if (plan.mu == kOk) {
    nf.mu = fit_stack(
        f_mu.mat, y, nf.config.learners,
        stack_options(nf.config, Loss::squared, seed, 1, f_mu.names));
    nf.mu_default = nf.mu;
  } else {
    nf.mu = fit_stack(
        f_mu.mat, y, intercept_only_library(),
        stack_options(nf.config, Loss::squared, seed, 1, f_mu.names));
    if (need_mu_default)
      nf.mu_default = fit_stack(
          f_mu.mat, y, nf.config.learners,
          stack_options(nf.config, Loss::squared, seed, 2, f_mu.names));
  }
  fit_pseudo_regressions(nf, cohort);
  nf.xi = fit_xi(nf, cohort);
  return nf;
}

ThetaEstimate one_step(const Cohort& cohort, const EstimatorConfig& config,
                       std::uint64_t seed, int a) {
  NuisanceFits nf = fit_all_nuisances(cohort, config, seed);
  return theta_from_fits(nf, cohort, a);
}

std::pair<ThetaEstimate, ThetaEstimate> one_step_pair(
    const Cohort& cohort, const EstimatorConfig& config, std::uint64_t seed) {
  NuisanceFits nf = fit_all_nuisances(cohort, config, seed);
  return {theta_from_fits(nf, cohort, 0), theta_from_fits(nf, cohort, 1)};
}

std::vector<std::vector<Eigen::Index>> stratified_folds(const Cohort& cohort,
                                                        int k_outer,
                                                        std::uint64_t seed) {
  if (k_outer < 1) throw validation_error("fold count must be >= 1");
  const Eigen::Index n = cohort.n();
  struct Keyed {
    std::uint64_t hash;
    Eigen::Index row;
  };
  std::vector<Keyed> cells[4];
  std::vector<double> buf;
  for (Eigen::Index i = 0; i < n; ++i) {
    buf.clear();
    buf.push_back(cohort.a[i]);
    buf.push_back(cohort.m[i]);
    buf.push_back(cohort.delta[i]);
    for (Eigen::Index j = 0; j < cohort.x.cols(); ++j)
      buf.push_back(cohort.x(i, j));
    for (Eigen::Index j = 0; j < cohort.z.cols(); ++j)
      buf.push_back(cohort.z(i, j));
    for (Eigen::Index j = 0; j < cohort.y.cols(); ++j)
      buf.push_back(cohort.y(i, j));
    std::uint64_t h = mix64(hash_doubles(buf.data(), buf.size()) ^ seed);
    int cell = 2 * (cohort.a[i] == 1.0 ? 1 : 0) +
               (cohort.delta[i] == 1.0 ? 1 : 0);
    cells[cell].push_back({h, i});
  }
  std::vector<std::vector<Eigen::Index>> folds(
      static_cast<std::size_t>(k_outer));
  for (auto& cell : cells) {
    std::sort(cell.begin(), cell.end(),
              [](const Keyed& l, const Keyed& r) { return l.hash < r.hash; });
    for (std::size_t p = 0; p < cell.size(); ++p)
      folds[p % static_cast<std::size_t>(k_outer)].push_back(cell[p].row);
  }
  for (auto& f : folds) std::sort(f.begin(), f.end());
  return folds;
}

std::pair<ThetaEstimate, ThetaEstimate> cross_fit_pair(
    const Cohort& cohort, const EstimatorConfig& config, std::uint64_t seed,
    int k_outer) {
  if (k_outer < 1) throw validation_error("cross_fit needs k_outer >= 1");
  if (k_outer == 1) return one_step_pair(cohort, config, seed);
  const Eigen::Index n = cohort.n();
  if (n < 10 * static_cast<Eigen::Index>(k_outer))
    throw insufficient_data("cross_fit needs n >= 10 * k_outer");
  auto folds = stratified_folds(cohort, k_outer, seed);

  ThetaEstimate t0, t1;
  t0.a = 0;
  t1.a = 1;
  t0.eif_values = VectorXd::Zero(n);
  t1.eif_values = VectorXd::Zero(n);
  const double kw = 1.0 / k_outer;
  std::vector<std::array<double, 4>> fold_stats(
      static_cast<std::size_t>(k_outer));
  parallel_for(static_cast<std::size_t>(k_outer), [&](std::size_t k) {
    std::vector<Eigen::Index> train;
    for (std::size_t j = 0; j < folds.size(); ++j)
      if (j != k) train.insert(train.end(), folds[j].begin(), folds[j].end());
    std::sort(train.begin(), train.end());
    Cohort fit_part = subset_rows(cohort, train);
    Cohort eval_part = subset_rows(cohort, folds[k]);
    NuisanceFits nf = fit_all_nuisances(
        fit_part, config, derive_seed(seed, 0xcf00 + static_cast<std::uint64_t>(k)));
    for (int a : {0, 1}) {
      double tp = plugin_theta(nf, eval_part, a);
      VectorXd eif = eif_evaluate(nf, eval_part, a, tp);
      ThetaEstimate& dst = a == 0 ? t0 : t1;
      for (std::size_t i = 0; i < folds[k].size(); ++i)
        dst.eif_values[folds[k][i]] = eif[static_cast<Eigen::Index>(i)];
      fold_stats[k][2 * a] = tp;
      fold_stats[k][2 * a + 1] = tp + eif.mean();
    }
  });
  for (const auto& fs : fold_stats) {
    t0.theta_plugin += kw * fs[0];
    t0.theta_onestep += kw * fs[1];
    t1.theta_plugin += kw * fs[2];
    t1.theta_onestep += kw * fs[3];
  }
  return {t0, t1};
}

ThetaEstimate cross_fit(const Cohort& cohort, const EstimatorConfig& config,
                        std::uint64_t seed, int a, int k_outer) {
  auto pr = cross_fit_pair(cohort, config, seed, k_outer);
  return a == 0 ? pr.first : pr.second;
}

}  // namespace moco
