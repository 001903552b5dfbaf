// Copyright 2026 The MoCo Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "moco/common.hpp"
#include "moco/moco.hpp"

namespace moco {

// Per-region Wald inference on the group difference theta1 - theta0.  tau is
// the standard deviation of the per-subject paired influence difference; a
// zero tau marks the result degenerate (point interval).
struct RegionResult {
  std::string region;
  ThetaEstimate theta1, theta0;
  double diff = 0.0;
  double tau = 0.0;
  double ci_lo = 0.0, ci_hi = 0.0;
  double z = 0.0;  // sqrt(n) * diff / tau; +/-inf when tau == 0 and diff != 0
  bool degenerate = false;
  VectorXd eif_diff;  // centered per-subject influence difference
  std::vector<std::string> warnings;  // warning-grade findings, e.g. overlap
};

// Simultaneous band across regions.  z_max is the empirical (1 - alpha)
// quantile of the max |component| of Monte Carlo draws from the sample
// correlation of the influence differences, floored at the univariate
// normal quantile; rejected_j holds exactly when the band excludes zero.
struct BandResult {
  std::vector<RegionResult> regions;
  double alpha = 0.05;
  double z_max = 0.0;
  std::vector<bool> rejected;
  VectorXd band_lo, band_hi;
  long mc_draws = 100000;
  MatrixXd corr;  // J x J sample correlation of influence differences
};

// Sample variance of a centered influence vector; insufficient_data if n < 2.
double variance_sigma(const VectorXd& eif_centered);

// Wald interval for theta1 - theta0 from paired one-step estimates.
// dimension_mismatch unless both influence vectors have equal length.
RegionResult region_inference(const std::string& region,
                              const ThetaEstimate& theta1,
                              const ThetaEstimate& theta0, double alpha);

// Simultaneous band over J >= 1 regions whose influence differences share one
// cohort.  Draw generation is chunked with per-chunk seed streams, so the
// result is bit-identical for any thread count.
BandResult simultaneous_band(const std::vector<RegionResult>& regions,
                             double alpha, long mc_draws, std::uint64_t seed);

// Repeated-fit aggregation: averages each region's z statistic across
// repeats, re-centers the difference at the averaged statistic on the last
// repeat's tau scale, and bands using the last repeat's correlation matrix.
// A single repeat reproduces simultaneous_band exactly.
BandResult band_from_repeats(const std::vector<std::vector<RegionResult>>& repeats,
                             double alpha, long mc_draws, std::uint64_t seed);

// Fraction of replicates whose band rejects at least one region.
double fwer_check(const std::vector<BandResult>& replicates);

}  // namespace moco
