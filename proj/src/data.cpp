// Copyright 2026 The MoCo Authors
// SPDX-License-Identifier: Apache-2.0

#include "moco/data.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace moco {

namespace {

bool is_binary(const VectorXd& v) {
  return std::all_of(v.begin(), v.end(),
                     [](double u) { return u == 0.0 || u == 1.0; });
}

void check_finite(const MatrixXd& mat, const char* field,
                  const std::vector<std::string>& names,
                  std::vector<ValidationFinding>& out) {
  for (Eigen::Index j = 0; j < mat.cols(); ++j)
    for (Eigen::Index i = 0; i < mat.rows(); ++i)
      if (!std::isfinite(mat(i, j))) {
        std::ostringstream msg;
        msg << "non-finite value in " << field << " at row " << i << ", column "
            << (j < Eigen::Index(names.size()) ? names[j] : std::to_string(j));
        out.push_back({true, msg.str()});
        return;  // one finding per field is enough to reject
      }
}

}  // namespace

ValidationReport validate_cohort(const Cohort& cohort, const RoleConfig& config) {
  ValidationReport rep;
  auto fatal = [&](const std::string& m) { rep.findings.push_back({true, m}); };
  auto warn = [&](const std::string& m) { rep.findings.push_back({false, m}); };

  const auto n = cohort.n();
  if (n == 0) fatal("cohort is empty");

  auto check_len = [&](Eigen::Index got, const char* field) {
    if (got != n)
      fatal(std::string(field) + " length " + std::to_string(got) +
            " does not match n=" + std::to_string(n));
  };
  check_len(cohort.m.size(), "m");
  check_len(cohort.delta.size(), "delta");
  check_len(cohort.x.rows(), "x");
  check_len(cohort.z.rows(), "z");
  check_len(cohort.y.rows(), "y");

  auto check_names = [&](std::size_t got, Eigen::Index cols, const char* field) {
    if (!got) return;  // unnamed columns are allowed
    if (Eigen::Index(got) != cols)
      fatal(std::string(field) + " has " + std::to_string(cols) +
            " columns but " + std::to_string(got) + " names");
  };
  check_names(cohort.x_names.size(), cohort.x.cols(), "x");
  check_names(cohort.z_names.size(), cohort.z.cols(), "z");
  check_names(cohort.y_names.size(), cohort.y.cols(), "y");

  if (!rep.findings.empty()) {
    rep.accepted = false;
    return rep;  // dimension errors make the remaining checks ill-defined
  }

  if (!is_binary(cohort.a)) fatal("a must be 0/1");
  if (!is_binary(cohort.delta)) fatal("delta must be 0/1");

  check_finite(cohort.a, "a", {}, rep.findings);
  check_finite(cohort.m, "m", {}, rep.findings);
  check_finite(cohort.x, "x", cohort.x_names, rep.findings);
  check_finite(cohort.z, "z", cohort.z_names, rep.findings);
  check_finite(cohort.y, "y", cohort.y_names, rep.findings);

  long n_negative_m = std::count_if(cohort.m.begin(), cohort.m.end(),
                                    [](double v) { return v < 0.0; });
  if (n_negative_m > 0)
    warn(std::to_string(n_negative_m) +
         " rows have negative m (allowed, but framewise displacement is "
         "normally nonnegative)");

  for (Eigen::Index i = 0; i < n; ++i) {
    if (cohort.a[i] == 0.0 || cohort.a[i] == 1.0)
      rep.cell_counts[2 * int(cohort.a[i]) + int(cohort.delta[i])]++;
  }
  const long n0 = rep.cell_counts[0] + rep.cell_counts[1];
  const long n1 = rep.cell_counts[2] + rep.cell_counts[3];
  if (n0 == 0) fatal("no subjects with a=0");
  if (n1 == 0) fatal("no subjects with a=1");
  if (n0 > 0 && rep.cell_counts[1] == 0)
    fatal("no subjects with a=0 and delta=1: the standardizing motion "
          "distribution is empty");

  const auto& t = config.trunc;
  if (!(t.eps1 > 0 && t.eps1 < 1) || !(t.eps2 > 0 && t.eps2 < 1))
    fatal("eps1/eps2 must lie in (0,1)");
  if (!(t.eps3 > 0) || !(t.ratio_cap > 0))
    fatal("eps3 and ratio_cap must be positive");
  for (const auto& xc : config.x_columns)
    if (std::find(config.z_columns.begin(), config.z_columns.end(), xc) !=
        config.z_columns.end())
      fatal("column '" + xc + "' assigned to both x and z roles");

  rep.accepted = std::none_of(rep.findings.begin(), rep.findings.end(),
                              [](const ValidationFinding& f) { return f.fatal; });
  return rep;
}

void require_valid(const Cohort& cohort, const RoleConfig& config) {
  auto rep = validate_cohort(cohort, config);
  if (!rep.accepted) throw validation_error(rep.first_fatal());
}

Cohort derive_delta(Cohort cohort, double threshold) {
  if (std::isnan(threshold)) throw validation_error("delta threshold is NaN");
  for (Eigen::Index i = 0; i < cohort.n(); ++i)
    cohort.delta[i] = cohort.m[i] <= threshold ? 1.0 : 0.0;
  cohort.delta_rule = threshold;
  return cohort;
}

Cohort subset_rows(const Cohort& cohort, const std::vector<Eigen::Index>& idx) {
  Cohort out;
  const auto k = Eigen::Index(idx.size());
  out.a.resize(k);
  out.m.resize(k);
  out.delta.resize(k);
  out.x.resize(k, cohort.x.cols());
  out.z.resize(k, cohort.z.cols());
  out.y.resize(k, cohort.y.cols());
  for (Eigen::Index r = 0; r < k; ++r) {
    const auto i = idx[std::size_t(r)];
    out.a[r] = cohort.a[i];
    out.m[r] = cohort.m[i];
    out.delta[r] = cohort.delta[i];
    out.x.row(r) = cohort.x.row(i);
    out.z.row(r) = cohort.z.row(i);
    out.y.row(r) = cohort.y.row(i);
  }
  out.x_names = cohort.x_names;
  out.z_names = cohort.z_names;
  out.y_names = cohort.y_names;
  out.delta_rule = cohort.delta_rule;
  out.diag_name = cohort.diag_name;
  if (cohort.diag.size() == cohort.a.size()) {
    out.diag.resize(k);
    for (Eigen::Index r = 0; r < k; ++r) out.diag[r] = cohort.diag[idx[std::size_t(r)]];
  }
  return out;
}

std::vector<Eigen::Index> which(const Eigen::ArrayXd& values, double target) {
  std::vector<Eigen::Index> idx;
  for (Eigen::Index i = 0; i < values.size(); ++i)
    if (values[i] == target) idx.push_back(i);
  return idx;
}

std::vector<Eigen::Index> delta1_rows(const Cohort& cohort) {
  return which(cohort.delta.array(), 1.0);
}

FeatureSet make_features(const Cohort& cohort, const std::string& cols) {
  FeatureSet fs;
  Eigen::Index total = 0;
  for (char c : cols) {
    switch (c) {
      case 'a':
      case 'm': total += 1; break;
      case 'x': total += cohort.x.cols(); break;
      case 'z': total += cohort.z.cols(); break;
      default: throw std::logic_error("make_features: unknown column code");
    }
  }
  fs.mat.resize(cohort.n(), total);
  fs.names.reserve(std::size_t(total));
  Eigen::Index at = 0;
  auto label = [](const std::vector<std::string>& names, Eigen::Index j,
                  const char* prefix) {
    return j < Eigen::Index(names.size()) ? names[std::size_t(j)]
                                          : prefix + std::to_string(j + 1);
  };
  for (char c : cols) {
    switch (c) {
      case 'a':
        fs.mat.col(at) = cohort.a;
        fs.names.push_back("a");
        ++at;
        break;
      case 'm':
        fs.mat.col(at) = cohort.m;
        fs.names.push_back("m");
        ++at;
        break;
      case 'x':
        for (Eigen::Index j = 0; j < cohort.x.cols(); ++j, ++at) {
          fs.mat.col(at) = cohort.x.col(j);
          fs.names.push_back(label(cohort.x_names, j, "x"));
        }
        break;
      case 'z':
        for (Eigen::Index j = 0; j < cohort.z.cols(); ++j, ++at) {
          fs.mat.col(at) = cohort.z.col(j);
          fs.names.push_back(label(cohort.z_names, j, "z"));
        }
        break;
    }
  }
  return fs;
}

}  // namespace moco
