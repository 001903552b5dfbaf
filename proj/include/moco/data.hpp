// Copyright 2026 The MoCo Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "moco/common.hpp"

namespace moco {

// ---------- cohort ----------
// Columnar per-subject data: diagnosis a, motion summary m, usability delta,
// balanced covariates x, diagnosis-specific covariates z, region outcomes y.

struct Observation {
  double a = 0, m = 0, delta = 0;
  VectorXd x, z, y;
};

struct Cohort {
  VectorXd a, m, delta;
  MatrixXd x, z, y;
  std::vector<std::string> x_names, z_names, y_names;
  std::optional<double> delta_rule;  // threshold used if delta was derived
  VectorXd diag;                     // optional per-row diagnostic (ignored by fits)
  std::string diag_name;

  Eigen::Index n() const { return a.size(); }
  Eigen::Index n_regions() const { return y.cols(); }
  Observation row(Eigen::Index i) const {
    return {a[i], m[i], delta[i], x.row(i).transpose(), z.row(i).transpose(),
            y.row(i).transpose()};
  }
};

struct Truncation {
  double eps1 = 0.01;      // propensity floor for pi_a
  double eps2 = 0.01;      // floor for pi_bar0
  double eps3 = 1e-3;      // conditional-density floor
  double ratio_cap = 50.0; // density-ratio cap
};

struct RoleConfig {
  std::vector<std::string> x_columns, z_columns, y_columns;
  std::string seed_region = "all";
  Truncation trunc;
};

// ---------- validation ----------

struct ValidationFinding {
  bool fatal = false;
  std::string message;
};

struct ValidationReport {
  std::vector<ValidationFinding> findings;
  // counts indexed by 2*a + delta: (0,0), (0,1), (1,0), (1,1)
  long cell_counts[4] = {0, 0, 0, 0};
  bool accepted = true;

  std::string first_fatal() const {
    for (const auto& f : findings)
      if (f.fatal) return f.message;
    return {};
  }
};

ValidationReport validate_cohort(const Cohort& cohort, const RoleConfig& config);

// Throws validation_error carrying the first fatal finding.
void require_valid(const Cohort& cohort, const RoleConfig& config);

// delta_i = 1{m_i <= threshold}; idempotent, order-preserving.
Cohort derive_delta(Cohort cohort, double threshold);

// ---------- row & column utilities ----------

Cohort subset_rows(const Cohort& cohort, const std::vector<Eigen::Index>& idx);

std::vector<Eigen::Index> which(const Eigen::ArrayXd& values,
                                double target);  // indices with value == target
std::vector<Eigen::Index> delta1_rows(const Cohort& cohort);

// Feature assembly for nuisance regressions.  `cols` is a string over
// {'a','m','x','z'} giving column-block order; names are "a", "m", and the
// cohort's x/z labels so counterfactual evaluation can locate column "a".
struct FeatureSet {
  MatrixXd mat;
  std::vector<std::string> names;
};

FeatureSet make_features(const Cohort& cohort, const std::string& cols);

}  // namespace moco
