// Copyright 2026 The MoCo Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "moco/common.hpp"
#include "moco/learners.hpp"

namespace moco {

// ---------- conditional density of motion given features ----------
// Pooled-hazard estimator: the observed range is cut into equal-mass bins,
// each subject contributes one long-format row per bin up to and including
// its own, and a single stacked classifier models the event "lands in this
// bin given it got there" with the bin position as an engineered feature.
// Bin masses follow from the hazards, are normalized on the grid, and the
// density is piecewise constant within bins. A deliberately crude
// moment-matched Gaussian backend is available for robustness experiments.

enum class DensityBackend { hazard, gaussian_moment };

// Learner library used for hazards when the caller does not override specs.
std::vector<LearnerSpec> density_default_library();

struct DensityOptions {
  int bins = 20;
  std::vector<LearnerSpec> specs = density_default_library();
  std::uint64_t seed = 0;
  int k_folds = 10;
  double prob_eps = 0.01;     // hazard clamp inside the classifier
  double floor_eps = 1e-3;    // eps3, density floor
  bool log_scale = false;     // model bin position on log(m); requires m > 0
  bool auto_log_scale = true; // enable log_scale automatically when all m > 0
};

struct ConditionalDensity {
  DensityBackend backend = DensityBackend::hazard;
  double floor_eps = 1e-3;
  std::size_t n_features = 0;

  // hazard backend
  VectorXd bin_edges;   // original-scale edges, strictly increasing, B+1
  VectorXd fit_edges;   // edges on the modeling scale (log(m) if log_scale)
  bool log_scale = false;
  Predictor hazard;     // one classifier shared across bins
  double mid_center = 0, mid_scale = 1;  // standardization of bin midpoints
  bool single_bin = false;               // degenerate fallback in force
  std::string warning;                   // nonempty when a fallback fired

  // gaussian_moment backend
  double gauss_mean = 0, gauss_sd = 1;

  Eigen::Index n_bins() const { return bin_edges.size() - 1; }
  // Normalized per-bin masses (sum exactly 1, pre-floor); hazard backend only.
  VectorXd bin_masses(const VectorXd& features) const;
  double density_at(double m, const VectorXd& features) const;
};

struct DensityRatio {
  const ConditionalDensity* numerator = nullptr;
  const ConditionalDensity* denominator = nullptr;
  double cap = 50.0;

  double at(double m, const VectorXd& features_num,
            const VectorXd& features_den) const;
};

// Fits the pooled-hazard density on the rows selected by `subset`.
// Degenerate motion vectors (all mass in one bin) fall back to a single-bin
// uniform density over the padded observed range, with a warning recorded.
ConditionalDensity fit_conditional_density(const VectorXd& m,
                                           const MatrixXd& features,
                                           const std::vector<Eigen::Index>& subset,
                                           const DensityOptions& opt);

// Feature-free N(sample mean, sample sd) backend over the subset.
ConditionalDensity fit_gaussian_density(const VectorXd& m,
                                        const std::vector<Eigen::Index>& subset,
                                        double floor_eps = 1e-3);

// Free-function forms of the evaluation ops.
double density_at(const ConditionalDensity& cd, double m,
                  const VectorXd& features);
double ratio_at(const DensityRatio& r, double m, const VectorXd& features_num,
                const VectorXd& features_den);

// Normalized masses implied by per-bin hazards (exposed for property tests).
VectorXd masses_from_hazards(const VectorXd& hazards);

}  // namespace moco
