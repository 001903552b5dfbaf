// Copyright 2026 The MoCo Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "moco/common.hpp"
#include "moco/data.hpp"
#include "moco/density.hpp"
#include "moco/learners.hpp"

namespace moco {

// ---------- motion-controlled estimand ----------
// theta_a standardizes region outcomes to the diagnosis-a covariate law, the
// low-motion (A=0, usable-scan) motion distribution, and the diagnosis-a
// Z-law. The pipeline: fit mu and the motion densities, build ratio-weighted
// pseudo-outcomes, regress them down to eta_z / eta_m / xi, average xi for
// the plug-in, then add the mean of the efficient influence function.

enum class NuisanceFlag { correct, intercept_only, gaussian_moment };

// Deliberate-misspecification switchboard for robustness experiments: each
// named row fixes which nuisances are degraded (regressions collapse to an
// intercept, densities to a moment-matched Gaussian).
struct MisspecPlan {
  NuisanceFlag mu = NuisanceFlag::correct;
  NuisanceFlag eta_m = NuisanceFlag::correct;
  NuisanceFlag xi = NuisanceFlag::correct;
  NuisanceFlag pi_bar0 = NuisanceFlag::correct;
  NuisanceFlag pi_a = NuisanceFlag::correct;
  NuisanceFlag dens_m_d1_ax = NuisanceFlag::correct;  // p(m | delta=1, a, x)
  NuisanceFlag dens_m_axz = NuisanceFlag::correct;    // p(m | a, x, z)
  std::string row = "all_correct";

  bool all_correct() const;
  static MisspecPlan from_row(const std::string& name);
};

struct EstimatorConfig {
  int region = 0;                      // outcome column of the cohort
  Truncation trunc;                    // eps1/eps2 propensity, eps3 density
  std::vector<LearnerSpec> learners = default_library();
  std::vector<LearnerSpec> density_learners = density_default_library();
  int k_folds = 10;                    // inner cross-validation for stacks
  int density_bins = 20;
  bool density_log_scale = false;
  bool density_auto_log_scale = true;
  int repeats = 1;                     // repeated-fit z-averaging (inference)
  MisspecPlan plan;
};

// Fitted nuisances. The "default" members always follow the correctly
// specified recipe; the unsuffixed members are the ones the estimator uses
// and may be degraded by the misspecification plan. With an all-correct plan
// the pairs alias the same fit.
struct NuisanceFits {
  EstimatorConfig config;
  std::uint64_t seed = 0;

  Predictor mu;               // E[Y | A,M,X,Z], all rows
  Predictor mu_default;
  Predictor pi_a;             // P(A=1 | X)
  Predictor pi_a_bar;         // the pi_0 factor inside pibar_0
  Predictor pi_delta;         // P(Delta=1 | A,X), evaluated at A=0

  ConditionalDensity dens_d1_ax;    // p(m | delta=1, a, x)
  ConditionalDensity dens_d1_axz;   // p(m | delta=1, a, x, z)
  ConditionalDensity dens_ax;       // p(m | a, x)
  ConditionalDensity dens_axz;      // p(m | a, x, z)
  ConditionalDensity dens_d1_ax_used;  // plan-degraded variants
  ConditionalDensity dens_axz_used;

  Predictor eta_z;            // regression of the M-ratio pseudo-outcome on (a,z,x)
  Predictor eta_z_default;
  Predictor eta_m;            // regression of the Z-ratio pseudo-outcome on (a,m,x)
  Predictor xi;               // regression of eta_z values on (a,x)

  bool has_pseudo_fits() const { return !eta_z.fits.empty(); }
};

struct ThetaEstimate {
  double theta_plugin = 0;
  double theta_onestep = 0;
  VectorXd eif_values;        // per-subject influence values, plug-in centered
  int a = 0;
  std::optional<int> fold_id;
};

// ----- pipeline stages -----

// Steps 1, 2 and 7: mu, the four motion densities, and the diagnosis /
// usability propensities (pi clamped to [eps1, 1-eps1], pibar_0 to [eps2, 1]).
NuisanceFits fit_nuisances(const Cohort& cohort, const EstimatorConfig& config,
                           std::uint64_t seed);

// Step 3 outcome: mu-hat times p(m | delta=1, 0, x) / p(m | delta=1, a, x, z)
// over the usable rows (capped ratios).
VectorXd pseudo_outcome_m(const NuisanceFits& nf, const Cohort& cohort);

// Step 4 outcome: mu-hat times p(m | a, x) / p(m | a, x, z) over all rows.
VectorXd pseudo_outcome_z(const NuisanceFits& nf, const Cohort& cohort);

// Steps 3-4 regressions: eta_z chains on usable rows, eta_m on all rows.
void fit_pseudo_regressions(NuisanceFits& nf, const Cohort& cohort);

// Step 5: regress eta_z values on (a, x) over all rows; evaluate the result
// counterfactually for either diagnosis group.
Predictor fit_xi(const NuisanceFits& nf, const Cohort& cohort);

// Step 6: plug-in estimate, the mean of xi_a over the cohort.
double plugin_theta(const NuisanceFits& nf, const Cohort& cohort, int a);

// Step 8: per-subject influence values; term (iv) carries theta_plugin so
// that theta_onestep = theta_plugin + mean(eif) holds exactly.
VectorXd eif_evaluate(const NuisanceFits& nf, const Cohort& cohort, int a,
                      double theta_plugin);

// The integral of eta_m(a, m, x) against the standardizing motion density --
// the Fubini route to xi. Used inside the influence function under a
// misspecification plan and exposed as a debug cross-check otherwise.
double xi_fubini(const NuisanceFits& nf, const VectorXd& x_row, int a);

// ----- drivers -----

// Runs all stages on the full cohort.
NuisanceFits fit_all_nuisances(const Cohort& cohort,
                               const EstimatorConfig& config,
                               std::uint64_t seed);

// Re-runs the region-specific stages (outcome regression, both pseudo
// regressions, the standardized mean) on top of `base`'s motion densities
// and propensities. Matches fit_all_nuisances for that region to the last
// bit; the shared fits are the expensive part of a multi-region analysis.
NuisanceFits refit_for_region(const NuisanceFits& base, const Cohort& cohort,
                              int region);

// Plug-in and one-step estimates evaluated from an existing set of fits.
ThetaEstimate theta_from_fits(const NuisanceFits& nf, const Cohort& cohort,
                              int a);

ThetaEstimate one_step(const Cohort& cohort, const EstimatorConfig& config,
                       std::uint64_t seed, int a);
// Both diagnosis groups from one shared set of nuisance fits.
std::pair<ThetaEstimate, ThetaEstimate> one_step_pair(
    const Cohort& cohort, const EstimatorConfig& config, std::uint64_t seed);

// K-fold cross-fit: nuisances on each fold complement, evaluation on the
// fold, equal fold weights. Folds are stratified by (A, Delta) cell and
// assigned by row-content hash, so they are permutation invariant.
ThetaEstimate cross_fit(const Cohort& cohort, const EstimatorConfig& config,
                        std::uint64_t seed, int a, int k_outer = 5);
std::pair<ThetaEstimate, ThetaEstimate> cross_fit_pair(
    const Cohort& cohort, const EstimatorConfig& config, std::uint64_t seed,
    int k_outer = 5);

std::vector<std::vector<Eigen::Index>> stratified_folds(const Cohort& cohort,
                                                        int k_outer,
                                                        std::uint64_t seed);

}  // namespace moco
