// Copyright 2026 The MoCo Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <memory>
#include <string>
#include <vector>

#include "moco/common.hpp"

namespace moco {

// ---------- learner specs ----------

enum class LearnerKind { intercept, ols_main, ols_interactions, ridge, knn, tree_ensemble };

struct LearnerSpec {
  LearnerKind kind = LearnerKind::ols_main;
  double lambda = 1.0;  // ridge
  int k = 5;            // knn
  int depth = 3;        // tree_ensemble
  int n_trees = 100;    // tree_ensemble

  std::string label() const;
  static LearnerSpec parse(const std::string& text);  // e.g. "ridge:0.1", "knn:5", "tree:3:100"
};

// intercept, ols_main, ols_interactions, ridge x {0.01,0.1,1,10}, knn x {5,15},
// tree_ensemble(3,100)
std::vector<LearnerSpec> default_library();
// intercept, ols_main, ols_interactions — the fast set used by simulation runs
std::vector<LearnerSpec> lean_library();
std::vector<LearnerSpec> intercept_only_library();
std::vector<LearnerSpec> parse_library(const std::vector<std::string>& labels);

// ---------- stacking ----------

enum class Loss { squared, logloss };

struct StackOptions {
  int k_folds = 10;
  Loss loss = Loss::squared;
  std::uint64_t seed = 0;
  double prob_eps = 0.01;                  // probability clamp for logloss
  VectorXd weights;                        // optional observation weights
  std::vector<std::string> feature_names;  // enables counterfactual-a evaluation
};

class BaseFit {
 public:
  virtual ~BaseFit() = default;
  virtual VectorXd predict(const MatrixXd& features) const = 0;
};

struct Predictor {
  std::vector<std::shared_ptr<const BaseFit>> fits;  // surviving learners
  std::vector<LearnerSpec> specs;                    // aligned with fits
  VectorXd weights;                                  // simplex over fits
  VectorXd cv_losses;                                // aligned with fits
  double ensemble_cv_loss = 0.0;
  Loss loss = Loss::squared;
  double prob_eps = 0.01;
  std::vector<std::string> feature_names;
  std::vector<std::string> dropped;  // degenerate learners removed during fit
  Eigen::Index n_features = 0;

  VectorXd predict(const MatrixXd& features) const;
  double predict_one(const VectorXd& row) const;
};

// Ensemble weights minimize cross-validated loss over the simplex; fold
// assignment and every internal random draw are derived from `seed` via
// content hashes, so the fit is invariant to row permutation.
Predictor fit_stack(const MatrixXd& features, const VectorXd& outcome,
                    const std::vector<LearnerSpec>& specs, const StackOptions& opt);

// Single learner fit without cross-validation — the cheap path for bootstrap
// loops.  Falls back to an intercept if the learner degenerates; the reported
// loss is in-sample.
Predictor fit_plain(const MatrixXd& features, const VectorXd& outcome,
                    const LearnerSpec& spec, const StackOptions& opt);

// Predictions with the "a" feature column overwritten by the constant a.
VectorXd evaluate_with_counterfactual_a(const Predictor& pred, MatrixXd features,
                                        double a);

// ---------- shared helpers (exposed for density/tests) ----------

// Row content hashes (feature row bytes + outcome + seed); drive fold deals,
// bootstrap order, and knn tie-breaks.
std::vector<std::uint64_t> row_hashes(const MatrixXd& features,
                                      const VectorXd& outcome, std::uint64_t seed);

// fold id per row: content-hash sort then round-robin deal.
std::vector<int> hash_folds(const MatrixXd& features, const VectorXd& outcome,
                            int k_folds, std::uint64_t seed);

// Euclidean projection onto the probability simplex.
VectorXd project_simplex(VectorXd v);

}  // namespace moco
