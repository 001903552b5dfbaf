// Copyright 2026 The MoCo Authors
// SPDX-License-Identifier: Apache-2.0

#include "moco/density.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <utility>

namespace moco {

namespace {

// Engineered hazard basis: raw features, a cubic in the standardized bin
// midpoint, and feature-by-midpoint interactions up to second order.
constexpr Eigen::Index kMaxBasisCols = 64;

// Pairwise feature products saturate low-dimensional conditioning cells; for
// wide feature sets the hazard stays additive to keep the design small.
Eigen::Index expanded_dim(Eigen::Index d, Eigen::Index b_count) {
  const Eigen::Index with_products = d + d * (d - 1) / 2;
  if ((b_count - 1) + 4 * with_products <= kMaxBasisCols) return with_products;
  return d;
}

Eigen::Index basis_cols(Eigen::Index d, Eigen::Index b_count) {
  return (b_count - 1) + 4 * expanded_dim(d, b_count);
}

using RowRef = Eigen::Ref<Eigen::RowVectorXd, 0, Eigen::InnerStride<>>;

// Bin dummies give the marginal hazard a free shape per bin (equal-mass bins
// guarantee events everywhere); feature main effects — plus pairwise products
// when the design stays small — and smooth bin-location interactions move it
// with the conditioning set.
void fill_basis_row(RowRef out, const Eigen::Ref<const Eigen::RowVectorXd>& f,
                    double s, Eigen::Index b, Eigen::Index b_count) {
  const Eigen::Index d = f.size();
  const Eigen::Index g_d = expanded_dim(d, b_count);
  Eigen::RowVectorXd g(g_d);
  g.segment(0, d) = f;
  if (g_d > d) {
    Eigen::Index c = d;
    for (Eigen::Index i = 0; i < d; ++i)
      for (Eigen::Index j = i + 1; j < d; ++j) g(c++) = f(i) * f(j);
  }
  out.segment(0, b_count - 1).setZero();
  if (b > 0) out(b - 1) = 1.0;
  out.segment(b_count - 1, g_d) = g;
  out.segment(b_count - 1 + g_d, g_d) = g * s;
  out.segment(b_count - 1 + 2 * g_d, g_d) = g * (s * s);
  out.segment(b_count - 1 + 3 * g_d, g_d) = g * (s * s * s);
}

Eigen::Index bin_index(const VectorXd& edges, double t) {
  const double* lo = edges.data();
  const double* hi = edges.data() + edges.size();
  Eigen::Index b = std::upper_bound(lo, hi, t) - lo - 1;
  return std::clamp<Eigen::Index>(b, 0, edges.size() - 2);
}

ConditionalDensity single_bin_fallback(double lo, double hi,
                                       Eigen::Index n_features,
                                       double floor_eps) {
  ConditionalDensity cd;
  cd.backend = DensityBackend::hazard;
  cd.floor_eps = floor_eps;
  cd.n_features = static_cast<std::size_t>(n_features);
  double pad = (hi > lo) ? 0.01 * (hi - lo)
                         : 0.01 * std::max(1.0, std::abs(lo));
  cd.bin_edges = VectorXd(2);
  cd.bin_edges << lo - pad, hi + pad;
  cd.fit_edges = cd.bin_edges;
  cd.single_bin = true;
  cd.warning = "all_mass_one_bin: motion values concentrate in a single bin; "
               "using a uniform density over the padded observed range";
  return cd;
}

}  // namespace

// A feature-free learner in the hazard stack pulls every conditional toward
// the pooled marginal, which biases exactly the cells the ratios care about;
// the default is therefore the logistic main-terms model alone, with an
// intercept refit reserved for degenerate bases.
std::vector<LearnerSpec> density_default_library() {
  return {{LearnerKind::ols_main}};
}

VectorXd masses_from_hazards(const VectorXd& hazards) {
  const Eigen::Index b_count = hazards.size();
  VectorXd masses(b_count);
  double survive = 1.0;
  for (Eigen::Index b = 0; b < b_count; ++b) {
    masses[b] = survive * hazards[b];
    survive *= 1.0 - hazards[b];
  }
  double total = masses.sum();
  if (total <= 0.0) return VectorXd::Constant(b_count, 1.0 / b_count);
  return masses / total;
}

VectorXd ConditionalDensity::bin_masses(const VectorXd& features) const {
  if (backend != DensityBackend::hazard)
    throw estimation_error("bin_masses: hazard backend only");
  if (features.size() != static_cast<Eigen::Index>(n_features))
    throw dimension_mismatch("density feature vector has " +
                             std::to_string(features.size()) + " entries, expected " +
                             std::to_string(n_features));
  if (single_bin) return VectorXd::Ones(1);
  const Eigen::Index b_count = n_bins();
  const Eigen::Index d = features.size();
  MatrixXd basis(b_count, basis_cols(d, b_count));
  Eigen::RowVectorXd f = features.transpose();
  for (Eigen::Index b = 0; b < b_count; ++b) {
    double mid = 0.5 * (fit_edges[b] + fit_edges[b + 1]);
    fill_basis_row(basis.row(b), f, (mid - mid_center) / mid_scale, b, b_count);
  }
  return masses_from_hazards(hazard.predict(basis));
}

double ConditionalDensity::density_at(double m, const VectorXd& features) const {
  if (backend == DensityBackend::gaussian_moment)
    return std::max(norm_pdf((m - gauss_mean) / gauss_sd) / gauss_sd, floor_eps);
  if (features.size() != static_cast<Eigen::Index>(n_features))
    throw dimension_mismatch("density feature vector has " +
                             std::to_string(features.size()) + " entries, expected " +
                             std::to_string(n_features));
  if (log_scale && m <= 0.0) return floor_eps;
  const double t = log_scale ? std::log(m) : m;
  if (!(t >= fit_edges[0] && t <= fit_edges[fit_edges.size() - 1]))
    return floor_eps;
  if (single_bin) return std::max(1.0 / (bin_edges[1] - bin_edges[0]), floor_eps);
  Eigen::Index b = bin_index(fit_edges, t);
  double mass = bin_masses(features)[b];
  double width = bin_edges[b + 1] - bin_edges[b];
  return std::max(mass / width, floor_eps);
}

double DensityRatio::at(double m, const VectorXd& features_num,
                        const VectorXd& features_den) const {
  double num = numerator->density_at(m, features_num);
  double den = denominator->density_at(m, features_den);
  return std::min(num / den, cap);
}

double density_at(const ConditionalDensity& cd, double m,
                  const VectorXd& features) {
  return cd.density_at(m, features);
}

double ratio_at(const DensityRatio& r, double m, const VectorXd& features_num,
                const VectorXd& features_den) {
  return r.at(m, features_num, features_den);
}

ConditionalDensity fit_conditional_density(const VectorXd& m,
                                           const MatrixXd& features,
                                           const std::vector<Eigen::Index>& subset,
                                           const DensityOptions& opt) {
  if (features.rows() != m.size())
    throw dimension_mismatch("density features have " +
                             std::to_string(features.rows()) + " rows for " +
                             std::to_string(m.size()) + " motion values");
  if (opt.bins < 1) throw validation_error("density bins must be >= 1");
  const Eigen::Index need =
      std::max<Eigen::Index>(20, 2 * static_cast<Eigen::Index>(opt.bins));
  if (static_cast<Eigen::Index>(subset.size()) < need) {
    std::ostringstream msg;
    msg << "density fit needs at least " << need << " rows, got "
        << subset.size();
    throw insufficient_data(msg.str());
  }
  bool all_positive = true;
  for (Eigen::Index i : subset) {
    if (i < 0 || i >= m.size())
      throw validation_error("density subset index out of range");
    if (!std::isfinite(m[i]))
      throw validation_error("non-finite motion value in density fit");
    for (Eigen::Index j = 0; j < features.cols(); ++j)
      if (!std::isfinite(features(i, j)))
        throw validation_error("non-finite feature in density fit");
    if (m[i] <= 0.0) all_positive = false;
  }
  if (opt.log_scale && !all_positive)
    throw validation_error("log-scale density requires strictly positive motion");
  const bool use_log = opt.log_scale || (opt.auto_log_scale && all_positive);

  std::vector<double> tvals(subset.size());
  for (std::size_t i = 0; i < subset.size(); ++i) {
    double v = m[subset[i]];
    tvals[i] = use_log ? std::log(v) : v;
  }
  std::sort(tvals.begin(), tvals.end());
  const double t_lo = tvals.front(), t_hi = tvals.back();
  if (t_hi <= t_lo) {
    double v = m[subset[0]];
    return single_bin_fallback(v, v, features.cols(), opt.floor_eps);
  }

  // Equal-mass edges with exact-duplicate collapse.
  std::vector<double> edges{t_lo};
  for (int b = 1; b < opt.bins; ++b) {
    double q = quantile_of_sorted(tvals, static_cast<double>(b) / opt.bins);
    if (q > edges.back() && q < t_hi) edges.push_back(q);
  }
  edges.push_back(t_hi);
  if (edges.size() < 3) {
    double lo = use_log ? std::exp(t_lo) : t_lo;
    double hi = use_log ? std::exp(t_hi) : t_hi;
    return single_bin_fallback(lo, hi, features.cols(), opt.floor_eps);
  }
  const double margin = 0.01 * (t_hi - t_lo);
  edges.front() -= margin;
  edges.back() += margin;

  ConditionalDensity cd;
  cd.backend = DensityBackend::hazard;
  cd.floor_eps = opt.floor_eps;
  cd.n_features = static_cast<std::size_t>(features.cols());
  cd.log_scale = use_log;
  cd.fit_edges = Eigen::Map<const VectorXd>(edges.data(),
                                            static_cast<Eigen::Index>(edges.size()));
  cd.bin_edges = use_log ? cd.fit_edges.array().exp().matrix() : cd.fit_edges;
  const Eigen::Index b_count = cd.n_bins();

  VectorXd mids(b_count);
  for (Eigen::Index b = 0; b < b_count; ++b)
    mids[b] = 0.5 * (cd.fit_edges[b] + cd.fit_edges[b + 1]);
  cd.mid_center = mids.mean();
  cd.mid_scale = sample_sd(mids);

  // Long-format hazard rows, aggregated into binomial cells when the feature
  // space repeats; aggregation keeps weighted fits identical while cutting
  // the row count sharply on discrete designs.
  std::map<std::pair<std::vector<double>, Eigen::Index>,
           std::pair<double, double>>
      cells;  // (features, bin) -> (events, trials)
  std::size_t long_rows = 0;
  for (Eigen::Index i : subset) {
    double t = use_log ? std::log(m[i]) : m[i];
    Eigen::Index bi = bin_index(cd.fit_edges, t);
    std::vector<double> key(features.cols());
    for (Eigen::Index j = 0; j < features.cols(); ++j) key[j] = features(i, j);
    for (Eigen::Index b = 0; b <= bi; ++b) {
      auto& cell = cells[{key, b}];
      cell.first += (b == bi) ? 1.0 : 0.0;
      cell.second += 1.0;
      ++long_rows;
    }
  }
  std::size_t agg_rows = 0;
  for (const auto& [key, cnt] : cells) {
    if (cnt.first > 0.0) ++agg_rows;
    if (cnt.second > cnt.first) ++agg_rows;
  }
  const bool aggregate =
      agg_rows >= 2 * static_cast<std::size_t>(opt.k_folds) && agg_rows < long_rows;
  const std::size_t rows = aggregate ? agg_rows : long_rows;

  const Eigen::Index d = features.cols();
  MatrixXd basis(static_cast<Eigen::Index>(rows), basis_cols(d, b_count));
  VectorXd event(static_cast<Eigen::Index>(rows));
  VectorXd weight(static_cast<Eigen::Index>(rows));
  Eigen::Index r = 0;
  auto mid_std = [&](Eigen::Index b) {
    return (mids[b] - cd.mid_center) / cd.mid_scale;
  };
  if (aggregate) {
    Eigen::RowVectorXd f(d);
    for (const auto& [key, cnt] : cells) {
      for (Eigen::Index j = 0; j < d; ++j) f[j] = key.first[j];
      double s = mid_std(key.second);
      if (cnt.first > 0.0) {
        fill_basis_row(basis.row(r), f, s, key.second, b_count);
        event[r] = 1.0;
        weight[r++] = cnt.first;
      }
      if (cnt.second > cnt.first) {
        fill_basis_row(basis.row(r), f, s, key.second, b_count);
        event[r] = 0.0;
        weight[r++] = cnt.second - cnt.first;
      }
    }
  } else {
    for (Eigen::Index i : subset) {
      double t = use_log ? std::log(m[i]) : m[i];
      Eigen::Index bi = bin_index(cd.fit_edges, t);
      for (Eigen::Index b = 0; b <= bi; ++b) {
        fill_basis_row(basis.row(r), features.row(i), mid_std(b), b, b_count);
        event[r] = (b == bi) ? 1.0 : 0.0;
        weight[r++] = 1.0;
      }
    }
  }

  StackOptions sopt;
  sopt.loss = Loss::logloss;
  sopt.seed = derive_seed(opt.seed, 0xda51);
  sopt.prob_eps = opt.prob_eps;
  sopt.weights = weight;
  sopt.k_folds = std::max(
      2, std::min(opt.k_folds, static_cast<int>(rows / 2)));
  try {
    cd.hazard = fit_stack(basis, event, opt.specs, sopt);
  } catch (const estimation_error&) {
    // every requested learner degenerated on this basis; a rate-only hazard
    // still yields a valid (feature-free) density
    cd.hazard = fit_stack(basis, event, intercept_only_library(), sopt);
  }
  return cd;
}

ConditionalDensity fit_gaussian_density(const VectorXd& m,
                                        const std::vector<Eigen::Index>& subset,
                                        double floor_eps) {
  if (subset.size() < 2)
    throw insufficient_data("gaussian density fit needs at least 2 rows");
  VectorXd vals(static_cast<Eigen::Index>(subset.size()));
  for (std::size_t i = 0; i < subset.size(); ++i) {
    if (subset[i] < 0 || subset[i] >= m.size())
      throw validation_error("density subset index out of range");
    vals[static_cast<Eigen::Index>(i)] = m[subset[i]];
    if (!std::isfinite(vals[static_cast<Eigen::Index>(i)]))
      throw validation_error("non-finite motion value in density fit");
  }
  ConditionalDensity cd;
  cd.backend = DensityBackend::gaussian_moment;
  cd.floor_eps = floor_eps;
  cd.gauss_mean = vals.mean();
  cd.gauss_sd = std::max(sample_sd(vals), 1e-6);
  return cd;
}

}  // namespace moco
