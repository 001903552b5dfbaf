// Copyright 2026 The MoCo Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>

#include "moco/data.hpp"
#include "moco/inference.hpp"
#include "moco/moco.hpp"

namespace moco {

enum class BaselineKind { naive_all, naive_removal, iptw, nebel };

std::string baseline_label(BaselineKind kind);
BaselineKind parse_baseline(const std::string& label);  // validation_error

// Welch's t comparison of group outcome means over all rows.  tau follows
// the RegionResult convention tau = sqrt(n) * SE so the interval formula
// matches the estimator results; ci uses the Welch-Satterthwaite t quantile.
RegionResult naive_all(const Cohort& cohort, int region, double alpha = 0.05);

// Welch's t on the usable (delta = 1) subset only.
RegionResult naive_removal(const Cohort& cohort, int region,
                           double alpha = 0.05);

// Inverse-probability weighting: psi_a = n^-1 sum 1{A=a} delta Y /
// (g_a(X) pi_a(X)) with logistic models for both propensities, percentile
// bootstrap interval, and a non-overlap warning when clamping saturates
// more than 20% of the used weights.
RegionResult iptw(const Cohort& cohort, int region, std::uint64_t seed,
                  int bootstrap = 500, double alpha = 0.05,
                  const Truncation& trunc = {});

// Residualize-then-compare: OLS of Y on (1, M, X) over all rows, then a
// per-group augmented IPW mean of the residuals with delta treated as
// missingness, outcome regression residual ~ Z and missingness model
// delta ~ Z fit within each group.
RegionResult nebel(const Cohort& cohort, int region,
                   const EstimatorConfig& config, std::uint64_t seed,
                   double alpha = 0.05);

// Step-1 residuals of the residualize-then-compare baseline.
VectorXd nebel_residuals(const Cohort& cohort, int region);

}  // namespace moco
