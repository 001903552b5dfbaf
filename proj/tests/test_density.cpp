// Copyright 2026 The MoCo Authors
// SPDX-License-Identifier: Apache-2.0

#include "moco/density.hpp"

#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"

using namespace moco;

namespace {

std::vector<Eigen::Index> all_rows(Eigen::Index n) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
  return idx;
}

}  // namespace

TEST_CASE("uniform motion recovers a flat density") {
  const Eigen::Index n = 4000;
  auto rng = make_rng(11);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  VectorXd m(n);
  MatrixXd f(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    m[i] = unif(rng);
    f(i, 0) = gauss(rng);
    f(i, 1) = gauss(rng);
  }
  DensityOptions opt;
  opt.bins = 10;
  opt.seed = 7;
  auto cd = fit_conditional_density(m, f, all_rows(n), opt);
  VectorXd probe(2);
  probe << 0.3, -0.8;
  CHECK(cd.density_at(0.5, probe) == doctest::Approx(1.0).epsilon(0.15));
  probe << -1.1, 0.4;
  CHECK(cd.density_at(0.5, probe) == doctest::Approx(1.0).epsilon(0.15));
}

TEST_CASE("location-shifted gaussian density is recovered at the mode") {
  const Eigen::Index n = 4000;
  auto rng = make_rng(29);
  std::bernoulli_distribution coin(0.5);
  std::normal_distribution<double> gauss(0.0, 1.0);
  VectorXd m(n);
  MatrixXd f(n, 3);  // columns a, x, z
  for (Eigen::Index i = 0; i < n; ++i) {
    double a = coin(rng) ? 1.0 : 0.0;
    double x = coin(rng) ? 1.0 : 0.0;
    double z = coin(rng) ? 1.0 : 0.0;
    f(i, 0) = a;
    f(i, 1) = x;
    f(i, 2) = z;
    m[i] = 1.0 + a + x / 2 - z / 4 + gauss(rng);
  }
  DensityOptions opt;
  opt.bins = 20;
  opt.seed = 3;
  auto cd = fit_conditional_density(m, f, all_rows(n), opt);
  CHECK_FALSE(cd.log_scale);  // motion straddles zero
  const double peak = 1.0 / std::sqrt(2.0 * M_PI);
  for (double a : {0.0, 1.0})
    for (double z : {0.0, 1.0}) {
      VectorXd probe(3);
      probe << a, 1.0, z;
      double mu = 1.0 + a + 0.5 - z / 4;
      CHECK(std::abs(cd.density_at(mu, probe) - peak) <= 0.08);
    }
}

TEST_CASE("positive skewed motion is modeled on the log scale") {
  const Eigen::Index n = 4000;
  auto rng = make_rng(5);
  std::normal_distribution<double> gauss(0.0, 0.5);
  std::bernoulli_distribution coin(0.5);
  VectorXd m(n);
  MatrixXd f(n, 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    m[i] = std::exp(gauss(rng));
    f(i, 0) = coin(rng) ? 1.0 : 0.0;
  }
  auto cd = fit_conditional_density(m, f, all_rows(n), DensityOptions{});
  CHECK(cd.log_scale);
  VectorXd probe(1);
  probe << 1.0;
  // log-normal(0, 0.5) density at m = 1 is phi(0)/0.5
  CHECK(cd.density_at(1.0, probe) ==
        doctest::Approx(0.79788).epsilon(0.15));
  DensityOptions off;
  off.auto_log_scale = false;
  auto cd2 = fit_conditional_density(m, f, all_rows(n), off);
  CHECK_FALSE(cd2.log_scale);
}

TEST_CASE("degenerate motion falls back to a single uniform bin") {
  VectorXd m = VectorXd::Constant(40, 0.7);
  MatrixXd f = MatrixXd::Zero(40, 2);
  auto cd = fit_conditional_density(m, f, all_rows(40), DensityOptions{});
  CHECK(cd.single_bin);
  CHECK(cd.warning.find("all_mass_one_bin") == 0);
  REQUIRE(cd.bin_edges.size() == 2);
  VectorXd probe = VectorXd::Zero(2);
  double width = cd.bin_edges[1] - cd.bin_edges[0];
  CHECK(cd.density_at(0.7, probe) == doctest::Approx(1.0 / width));
  CHECK(cd.density_at(5.0, probe) == 1e-3);
  CHECK(cd.bin_masses(probe).size() == 1);
  CHECK(cd.bin_masses(probe)[0] == 1.0);
}

TEST_CASE("density is piecewise constant, pure, and floored off-support") {
  const Eigen::Index n = 500;
  auto rng = make_rng(17);
  std::normal_distribution<double> gauss(1.0, 0.4);
  VectorXd m(n);
  MatrixXd f(n, 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    m[i] = gauss(rng);
    f(i, 0) = (i % 2 == 0) ? 1.0 : 0.0;
  }
  DensityOptions opt;
  opt.bins = 8;
  opt.auto_log_scale = false;
  auto cd = fit_conditional_density(m, f, all_rows(n), opt);
  VectorXd probe(1);
  probe << 1.0;
  // pick interior points of bin 3 on the fitted grid
  double lo = cd.bin_edges[3], hi = cd.bin_edges[4];
  double d1 = cd.density_at(lo + 0.25 * (hi - lo), probe);
  double d2 = cd.density_at(lo + 0.75 * (hi - lo), probe);
  CHECK(d1 == d2);
  CHECK(cd.density_at(1.0, probe) == cd.density_at(1.0, probe));
  CHECK(cd.density_at(-5.0, probe) == 1e-3);
  CHECK(cd.density_at(1e9, probe) == 1e-3);
  VectorXd bad(2);
  bad << 1.0, 0.0;
  CHECK_THROWS_AS(cd.density_at(1.0, bad), dimension_mismatch);
}

TEST_CASE("bin masses normalize to one before flooring") {
  const Eigen::Index n = 600;
  auto rng = make_rng(23);
  std::normal_distribution<double> gauss(0.0, 1.0);
  VectorXd m(n);
  MatrixXd f(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    f(i, 0) = gauss(rng);
    f(i, 1) = gauss(rng);
    m[i] = 0.5 * gauss(rng) + 0.2 * f(i, 0);
  }
  DensityOptions opt;
  opt.bins = 12;
  auto cd = fit_conditional_density(m, f, all_rows(n), opt);
  auto probe_rng = make_rng(99);
  std::normal_distribution<double> pg(0.0, 1.5);
  for (int t = 0; t < 100; ++t) {
    VectorXd probe(2);
    probe << pg(probe_rng), pg(probe_rng);
    VectorXd masses = cd.bin_masses(probe);
    CHECK(std::abs(masses.sum() - 1.0) < 1e-12);
    CHECK(masses.minCoeff() >= 0.0);
    // pre-floor density integrates to the mass total exactly
    double integral = 0.0;
    for (Eigen::Index b = 0; b < cd.n_bins(); ++b)
      integral += masses[b];  // mass_b/width_b * width_b
    CHECK(std::abs(integral - 1.0) < 1e-6);
  }
}

TEST_CASE("hazard masses shift weight toward an increased hazard") {
  VectorXd h(3);
  h << 0.3, 0.4, 0.6;
  VectorXd base = masses_from_hazards(h);
  CHECK(std::abs(base.sum() - 1.0) < 1e-15);
  for (Eigen::Index b = 0; b < 3; ++b) {
    VectorXd hb = h;
    hb[b] += 0.2;
    VectorXd up = masses_from_hazards(hb);
    CHECK(up[b] > base[b]);
  }
}

TEST_CASE("density ratios hit identity and cap") {
  const Eigen::Index n = 400;
  auto rng = make_rng(31);
  std::normal_distribution<double> gauss(1.0, 0.3);
  VectorXd m(n);
  MatrixXd f = MatrixXd::Zero(n, 1);
  for (Eigen::Index i = 0; i < n; ++i) m[i] = gauss(rng);
  DensityOptions opt;
  opt.bins = 10;
  opt.auto_log_scale = false;
  auto cd = fit_conditional_density(m, f, all_rows(n), opt);
  DensityRatio same{&cd, &cd, 50.0};
  VectorXd probe = VectorXd::Zero(1);
  CHECK(same.at(1.0, probe, probe) == 1.0);
  CHECK(same.at(-9.0, probe, probe) == 1.0);  // eps3 / eps3

  VectorXd spread(n);
  std::normal_distribution<double> wide_draw(1.0, 5.0);
  for (Eigen::Index i = 0; i < n; ++i) spread[i] = wide_draw(rng);
  auto wide = fit_gaussian_density(spread, all_rows(n));
  DensityRatio r2{&cd, &wide, 50.0};
  CHECK(r2.at(1.0, probe, probe) <= 50.0);
  // the tight fitted density dwarfs the wide one at the peak, so a small cap
  // must bind
  DensityRatio tiny_cap{&cd, &wide, 1.1};
  CHECK(tiny_cap.at(1.0, probe, probe) == 1.1);
}

TEST_CASE("gaussian moment backend matches the sample-moment pdf") {
  const Eigen::Index n = 2000;
  auto rng = make_rng(41);
  std::normal_distribution<double> gauss(2.0, 1.5);
  VectorXd m(n);
  for (Eigen::Index i = 0; i < n; ++i) m[i] = gauss(rng);
  auto cd = fit_gaussian_density(m, all_rows(n));
  VectorXd empty;
  double expected = norm_pdf((2.0 - cd.gauss_mean) / cd.gauss_sd) / cd.gauss_sd;
  CHECK(cd.density_at(2.0, empty) == doctest::Approx(expected));
  CHECK(cd.density_at(2.0, empty) == doctest::Approx(0.266).epsilon(0.05));
  CHECK(cd.density_at(1e4, empty) == 1e-3);  // floored far tail
}

TEST_CASE("density fit rejects too-small subsets") {
  VectorXd m = VectorXd::LinSpaced(30, 0.1, 3.0);
  MatrixXd f = MatrixXd::Zero(30, 1);
  DensityOptions opt;
  opt.bins = 20;  // needs max(20, 40) = 40 rows
  CHECK_THROWS_AS(fit_conditional_density(m, f, all_rows(30), opt),
                  insufficient_data);
  std::vector<Eigen::Index> empty_subset;
  CHECK_THROWS_AS(fit_conditional_density(m, f, empty_subset, opt),
                  insufficient_data);
}
