// Copyright 2026 The MoCo Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>
#include <boost/math/distributions/normal.hpp>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace moco {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// ---------- errors ----------
// Exit-code mapping used by the CLI: validation 2, estimation 3, I/O 4.

struct validation_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct estimation_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct io_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct insufficient_data : validation_error {
  using validation_error::validation_error;
};
struct dimension_mismatch : validation_error {
  using validation_error::validation_error;
};
struct rejection_starvation : estimation_error {
  using estimation_error::estimation_error;
};

// ---------- rng ----------
// All randomness flows from explicit 64-bit seeds.  Independent streams are
// derived with a splitmix64 mix of (seed, stream); replicate r of a study uses
// stream r, chunk c of a Monte Carlo loop uses stream c, and so on, which makes
// every parallel loop reproducible regardless of thread count.

inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return mix64(seed ^ mix64(stream + 0x7f4a7c15ULL));
}

using rng_t = std::mt19937_64;

inline rng_t make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
  return rng_t(derive_seed(seed, stream));
}

// ---------- hashing ----------
// FNV-1a, used for stable row identities (fold assignment that survives row
// permutation) and for manifest digests.  Not cryptographic.

inline std::uint64_t fnv1a(const void* data, std::size_t len,
                           std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t hash_doubles(const double* v, std::size_t len,
                                  std::uint64_t h = 0xcbf29ce484222325ULL) {
  return fnv1a(v, len * sizeof(double), h);
}

// ---------- distribution helpers ----------

inline double norm_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

inline double norm_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
}

inline double norm_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw estimation_error("norm_quantile: p outside (0,1)");
  static const boost::math::normal_distribution<double> nd(0.0, 1.0);
  return boost::math::quantile(nd, p);
}

inline double expit(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double clamp(double v, double lo, double hi) {
  return v < lo ? lo : (v > hi ? hi : v);
}

// ---------- numeric formatting ----------
// Shortest round-trip representation, so CSV outputs are byte-stable and finite
// decimal inputs survive a read/write cycle unchanged.

inline std::string fmt_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

// ---------- small statistics ----------

inline double mean_of(const VectorXd& v) {
  return v.size() ? v.mean() : std::numeric_limits<double>::quiet_NaN();
}

inline double sample_var(const VectorXd& v) {
  const auto n = v.size();
  if (n < 2) return 0.0;
  const double m = v.mean();
  return (v.array() - m).square().sum() / double(n - 1);
}

inline double sample_sd(const VectorXd& v) { return std::sqrt(sample_var(v)); }

// Empirical quantile, type-1 (inverse ecdf): smallest value with cdf >= p.
inline double quantile_of_sorted(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) throw estimation_error("quantile of empty vector");
  const auto n = sorted.size();
  const auto k = std::size_t(std::ceil(p * double(n)));
  return sorted[k == 0 ? 0 : std::min(k - 1, n - 1)];
}

}  // namespace moco
