// Copyright 2026 The MoCo Authors
// SPDX-License-Identifier: Apache-2.0

#include "moco/inference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "moco/parallel.hpp"

namespace moco {

namespace {

VectorXd centered(const VectorXd& v) { return v.array() - v.mean(); }

constexpr std::uint64_t kBandStream = 0xba2d00;
constexpr long kChunk = 4096;

}  // namespace

double variance_sigma(const VectorXd& eif_centered) {
  const Eigen::Index n = eif_centered.size();
  if (n < 2) throw insufficient_data("variance_sigma needs at least 2 values");
  const VectorXd d = centered(eif_centered);
  return d.squaredNorm() / static_cast<double>(n - 1);
}

RegionResult region_inference(const std::string& region,
                              const ThetaEstimate& theta1,
                              const ThetaEstimate& theta0, double alpha) {
  if (theta1.eif_values.size() != theta0.eif_values.size())
    throw dimension_mismatch("paired influence vectors differ in length");
  const Eigen::Index n = theta1.eif_values.size();
  if (n < 2) throw insufficient_data("region_inference needs at least 2 rows");
  if (!(alpha > 0.0 && alpha < 1.0))
    throw validation_error("alpha outside (0,1)");

  RegionResult r;
  r.region = region;
  r.theta1 = theta1;
  r.theta0 = theta0;
  r.diff = theta1.theta_onestep - theta0.theta_onestep;
  r.eif_diff = centered(theta1.eif_values) - centered(theta0.eif_values);
  r.tau = std::sqrt(variance_sigma(r.eif_diff));
  const double root_n = std::sqrt(static_cast<double>(n));
  if (r.tau > 0.0) {
    r.z = root_n * r.diff / r.tau;
  } else {
    r.degenerate = true;
    r.z = r.diff == 0.0 ? 0.0
                        : std::copysign(
                              std::numeric_limits<double>::infinity(), r.diff);
  }
  const double half = norm_quantile(1.0 - alpha / 2.0) * r.tau / root_n;
  r.ci_lo = r.diff - half;
  r.ci_hi = r.diff + half;
  return r;
}

BandResult simultaneous_band(const std::vector<RegionResult>& regions,
                             double alpha, long mc_draws, std::uint64_t seed) {
  const Eigen::Index J = static_cast<Eigen::Index>(regions.size());
  if (J < 1) throw validation_error("simultaneous_band needs >= 1 region");
  if (!(alpha > 0.0 && alpha < 1.0))
    throw validation_error("alpha outside (0,1)");
  if (mc_draws < 1000) throw validation_error("mc_draws too small");
  const Eigen::Index n = regions[0].eif_diff.size();
  for (const RegionResult& r : regions)
    if (r.eif_diff.size() != n)
      throw dimension_mismatch("regions mix influence vectors of different length");
  if (n < 2) throw insufficient_data("simultaneous_band needs at least 2 rows");

  // Sample correlation of the centered influence differences.  A degenerate
  // (constant) region keeps a unit diagonal and zero cross terms.
  MatrixXd d(n, J);
  for (Eigen::Index j = 0; j < J; ++j) d.col(j) = centered(regions[j].eif_diff);
  VectorXd sd(J);
  for (Eigen::Index j = 0; j < J; ++j)
    sd[j] = std::sqrt(d.col(j).squaredNorm() / static_cast<double>(n - 1));
  MatrixXd corr = MatrixXd::Identity(J, J);
  for (Eigen::Index j = 0; j < J; ++j)
    for (Eigen::Index k = j + 1; k < J; ++k) {
      if (sd[j] == 0.0 || sd[k] == 0.0) continue;
      const double c = d.col(j).dot(d.col(k)) /
                       (static_cast<double>(n - 1) * sd[j] * sd[k]);
      corr(j, k) = corr(k, j) = c;
    }

  // Factor with an eigenvalue floor; near-singularity (J > n) is routine.
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(corr);
  VectorXd lam = es.eigenvalues().cwiseMax(1e-10);
  const MatrixXd root =
      es.eigenvectors() * lam.cwiseSqrt().asDiagonal();

  const long chunks = (mc_draws + kChunk - 1) / kChunk;
  std::vector<double> maxima(static_cast<std::size_t>(mc_draws));
  parallel_for(static_cast<std::size_t>(chunks), [&](std::size_t c) {
    auto rng = make_rng(seed, kBandStream + c);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const long lo = static_cast<long>(c) * kChunk;
    const long hi = std::min(mc_draws, lo + kChunk);
    VectorXd g(J);
    for (long t = lo; t < hi; ++t) {
      for (Eigen::Index j = 0; j < J; ++j) g[j] = gauss(rng);
      maxima[static_cast<std::size_t>(t)] =
          (root * g).cwiseAbs().maxCoeff();
    }
  });
  std::sort(maxima.begin(), maxima.end());

  BandResult band;
  band.regions = regions;
  band.alpha = alpha;
  band.mc_draws = mc_draws;
  band.corr = corr;
  // The univariate quantile is an exact lower bound for the max quantile;
  // flooring removes one-sided Monte Carlo undershoot.
  band.z_max = std::max(quantile_of_sorted(maxima, 1.0 - alpha),
                        norm_quantile(1.0 - alpha / 2.0));
  const double root_n = std::sqrt(static_cast<double>(n));
  band.band_lo.resize(J);
  band.band_hi.resize(J);
  band.rejected.resize(static_cast<std::size_t>(J));
  for (Eigen::Index j = 0; j < J; ++j) {
    const RegionResult& r = regions[j];
    const double half = band.z_max * r.tau / root_n;
    band.band_lo[j] = r.diff - half;
    band.band_hi[j] = r.diff + half;
    band.rejected[static_cast<std::size_t>(j)] =
        band.band_lo[j] > 0.0 || band.band_hi[j] < 0.0;
  }
  return band;
}

BandResult band_from_repeats(const std::vector<std::vector<RegionResult>>& repeats,
                             double alpha, long mc_draws, std::uint64_t seed) {
  if (repeats.empty()) throw validation_error("band_from_repeats needs >= 1 repeat");
  const std::size_t J = repeats[0].size();
  for (const auto& rep : repeats)
    if (rep.size() != J)
      throw dimension_mismatch("repeats disagree on the region count");

  std::vector<RegionResult> last = repeats.back();
  const double root_n =
      std::sqrt(static_cast<double>(last[0].eif_diff.size()));
  for (std::size_t j = 0; j < J; ++j) {
    double zbar = 0.0;
    for (const auto& rep : repeats) zbar += rep[j].z;
    zbar /= static_cast<double>(repeats.size());
    last[j].z = zbar;
    if (last[j].tau > 0.0 && std::isfinite(zbar))
      last[j].diff = zbar * last[j].tau / root_n;
  }
  return simultaneous_band(last, alpha, mc_draws, seed);
}

double fwer_check(const std::vector<BandResult>& replicates) {
  if (replicates.empty()) throw validation_error("fwer_check needs >= 1 replicate");
  long hits = 0;
  for (const BandResult& b : replicates)
    if (std::any_of(b.rejected.begin(), b.rejected.end(),
                    [](bool r) { return r; }))
      ++hits;
  return static_cast<double>(hits) / static_cast<double>(replicates.size());
}

}  // namespace moco
