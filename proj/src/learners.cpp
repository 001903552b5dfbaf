// Copyright 2026 The MoCo Authors
// SPDX-License-Identifier: Apache-2.0

#include "moco/learners.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace moco {

// ---------- specs & libraries ----------

std::string LearnerSpec::label() const {
  std::ostringstream s;
  switch (kind) {
    case LearnerKind::intercept: return "intercept";
    case LearnerKind::ols_main: return "ols_main";
    case LearnerKind::ols_interactions: return "ols_interactions";
    case LearnerKind::ridge: s << "ridge:" << fmt_double(lambda); return s.str();
    case LearnerKind::knn: s << "knn:" << k; return s.str();
    case LearnerKind::tree_ensemble:
      s << "tree:" << depth << ':' << n_trees;
      return s.str();
  }
  return "?";
}

LearnerSpec LearnerSpec::parse(const std::string& text) {
  auto colon = text.find(':');
  const std::string head = text.substr(0, colon);
  std::vector<double> args;
  if (colon != std::string::npos) {
    std::string rest = text.substr(colon + 1);
    std::size_t pos = 0;
    while (pos <= rest.size()) {
      auto next = rest.find(':', pos);
      const auto piece = rest.substr(pos, next - pos);
      if (!piece.empty()) args.push_back(std::stod(piece));
      if (next == std::string::npos) break;
      pos = next + 1;
    }
  }
  LearnerSpec s;
  if (head == "intercept") s.kind = LearnerKind::intercept;
  else if (head == "ols_main") s.kind = LearnerKind::ols_main;
  else if (head == "ols_interactions") s.kind = LearnerKind::ols_interactions;
  else if (head == "ridge") {
    s.kind = LearnerKind::ridge;
    if (!args.empty()) s.lambda = args[0];
  } else if (head == "knn") {
    s.kind = LearnerKind::knn;
    if (!args.empty()) s.k = int(args[0]);
  } else if (head == "tree") {
    s.kind = LearnerKind::tree_ensemble;
    if (args.size() > 0) s.depth = int(args[0]);
    if (args.size() > 1) s.n_trees = int(args[1]);
  } else {
    throw validation_error("unknown learner spec: " + text);
  }
  if (s.lambda < 0 || s.k < 1 || s.depth < 1 || s.n_trees < 1)
    throw validation_error("invalid learner hyperparameter in: " + text);
  return s;
}

std::vector<LearnerSpec> default_library() {
  std::vector<LearnerSpec> lib;
  lib.push_back({LearnerKind::intercept});
  lib.push_back({LearnerKind::ols_main});
  lib.push_back({LearnerKind::ols_interactions});
  for (double lam : {0.01, 0.1, 1.0, 10.0}) {
    LearnerSpec s{LearnerKind::ridge};
    s.lambda = lam;
    lib.push_back(s);
  }
  for (int k : {5, 15}) {
    LearnerSpec s{LearnerKind::knn};
    s.k = k;
    lib.push_back(s);
  }
  lib.push_back({LearnerKind::tree_ensemble});
  return lib;
}

std::vector<LearnerSpec> lean_library() {
  return {{LearnerKind::intercept}, {LearnerKind::ols_main},
          {LearnerKind::ols_interactions}};
}

std::vector<LearnerSpec> intercept_only_library() {
  return {{LearnerKind::intercept}};
}

std::vector<LearnerSpec> parse_library(const std::vector<std::string>& labels) {
  std::vector<LearnerSpec> out;
  for (const auto& l : labels) out.push_back(LearnerSpec::parse(l));
  return out;
}

// ---------- hashing, folds, simplex ----------

std::vector<std::uint64_t> row_hashes(const MatrixXd& features,
                                      const VectorXd& outcome,
                                      std::uint64_t seed) {
  const auto n = features.rows();
  std::vector<std::uint64_t> h(static_cast<std::size_t>(n));
  std::vector<double> row(std::size_t(features.cols()) + 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < features.cols(); ++j)
      row[std::size_t(j)] = features(i, j);
    row.back() = outcome.size() ? outcome[i] : 0.0;
    h[std::size_t(i)] =
        mix64(hash_doubles(row.data(), row.size()) ^ mix64(seed));
  }
  return h;
}

namespace {

// Indices sorted by (content hash, index): the deal order for folds and the
// draw order for bootstraps, both invariant to row permutation.
std::vector<Eigen::Index> hash_order(const std::vector<std::uint64_t>& h) {
  std::vector<Eigen::Index> idx(h.size());
  std::iota(idx.begin(), idx.end(), Eigen::Index(0));
  std::stable_sort(idx.begin(), idx.end(), [&](Eigen::Index a, Eigen::Index b) {
    return h[std::size_t(a)] < h[std::size_t(b)];
  });
  return idx;
}

}  // namespace

std::vector<int> hash_folds(const MatrixXd& features, const VectorXd& outcome,
                            int k_folds, std::uint64_t seed) {
  const auto h = row_hashes(features, outcome, seed);
  const auto order = hash_order(h);
  std::vector<int> fold(h.size());
  for (std::size_t pos = 0; pos < order.size(); ++pos)
    fold[std::size_t(order[pos])] = int(pos % std::size_t(k_folds));
  return fold;
}

VectorXd project_simplex(VectorXd v) {
  const auto n = v.size();
  std::vector<double> u(v.begin(), v.end());
  std::sort(u.begin(), u.end(), std::greater<double>());
  double css = 0.0, theta = 0.0;
  int rho = 0;
  for (int i = 0; i < int(n); ++i) {
    css += u[std::size_t(i)];
    const double t = (css - 1.0) / double(i + 1);
    if (u[std::size_t(i)] - t > 0) {
      rho = i + 1;
      theta = t;
    }
  }
  (void)rho;
  for (Eigen::Index i = 0; i < n; ++i) v[i] = std::max(0.0, v[i] - theta);
  return v;
}

// ---------- base fits ----------

namespace {

struct DegenerateLearner {};  // internal control flow: learner is dropped

class ConstantFit : public BaseFit {
 public:
  explicit ConstantFit(double c) : c_(c) {}
  VectorXd predict(const MatrixXd& X) const override {
    return VectorXd::Constant(X.rows(), c_);
  }

 private:
  double c_;
};

// Interaction expansion terms: (i,-1) main effect, (i,i) square, (i,j) product.
using Term = std::pair<int, int>;

MatrixXd expand_terms(const MatrixXd& X, const std::vector<Term>& terms) {
  MatrixXd out(X.rows(), Eigen::Index(terms.size()));
  for (std::size_t t = 0; t < terms.size(); ++t) {
    const auto [i, j] = terms[t];
    if (j < 0) out.col(Eigen::Index(t)) = X.col(i);
    else out.col(Eigen::Index(t)) = X.col(i).cwiseProduct(X.col(j));
  }
  return out;
}

// Candidate terms with constant and exact-duplicate columns pruned (binary
// features make squares collide with main effects).
std::vector<Term> interaction_terms(const MatrixXd& X) {
  const int p = int(X.cols());
  std::vector<Term> candidates;
  for (int i = 0; i < p; ++i) candidates.push_back({i, -1});
  for (int i = 0; i < p; ++i) candidates.push_back({i, i});
  for (int i = 0; i < p; ++i)
    for (int j = i + 1; j < p; ++j) candidates.push_back({i, j});

  std::vector<Term> kept;
  std::vector<VectorXd> cols;
  for (const auto& term : candidates) {
    VectorXd c = term.second < 0
                     ? VectorXd(X.col(term.first))
                     : VectorXd(X.col(term.first).cwiseProduct(X.col(term.second)));
    const double first = c.size() ? c[0] : 0.0;
    if ((c.array() == first).all()) continue;  // constant
    bool dup = false;
    for (const auto& prev : cols)
      if (prev == c) {
        dup = true;
        break;
      }
    if (dup) continue;
    kept.push_back(term);
    cols.push_back(std::move(c));
  }
  return kept;
}

class LinearFit : public BaseFit {
 public:
  LinearFit(std::vector<Term> terms, VectorXd center, VectorXd scale,
            double intercept, VectorXd beta, bool logistic)
      : terms_(std::move(terms)),
        center_(std::move(center)),
        scale_(std::move(scale)),
        intercept_(intercept),
        beta_(std::move(beta)),
        logistic_(logistic) {}

  VectorXd predict(const MatrixXd& X) const override {
    MatrixXd D = terms_.empty() ? X : expand_terms(X, terms_);
    VectorXd eta =
        ((D.rowwise() - center_.transpose()) * scale_.cwiseInverse().asDiagonal()) *
            beta_ +
        VectorXd::Constant(D.rows(), intercept_);
    if (!logistic_) return eta;
    return eta.unaryExpr([](double e) { return expit(clamp(e, -30.0, 30.0)); });
  }

 private:
  std::vector<Term> terms_;  // empty = raw features
  VectorXd center_, scale_;
  double intercept_;
  VectorXd beta_;
  bool logistic_;
};

class KnnFit : public BaseFit {
 public:
  KnnFit(MatrixXd train_std, VectorXd center, VectorXd scale, VectorXd outcome,
         VectorXd wts, std::vector<std::uint64_t> hashes, int k)
      : train_(std::move(train_std)),
        center_(std::move(center)),
        scale_(std::move(scale)),
        outcome_(std::move(outcome)),
        wts_(std::move(wts)),
        hashes_(std::move(hashes)),
        k_(std::min<Eigen::Index>(k, train_.rows())) {}

  VectorXd predict(const MatrixXd& X) const override {
    const auto nq = X.rows();
    VectorXd out(nq);
    MatrixXd Q = (X.rowwise() - center_.transpose()) *
                 scale_.cwiseInverse().asDiagonal();
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(train_.rows()));
    for (Eigen::Index q = 0; q < nq; ++q) {
      VectorXd d2 = (train_.rowwise() - Q.row(q)).rowwise().squaredNorm();
      std::iota(idx.begin(), idx.end(), Eigen::Index(0));
      auto closer = [&](Eigen::Index a, Eigen::Index b) {
        if (d2[a] != d2[b]) return d2[a] < d2[b];
        if (hashes_[std::size_t(a)] != hashes_[std::size_t(b)])
          return hashes_[std::size_t(a)] < hashes_[std::size_t(b)];
        return outcome_[a] < outcome_[b];
      };
      std::nth_element(idx.begin(), idx.begin() + (k_ - 1), idx.end(), closer);
      double sw = 0, swy = 0;
      for (Eigen::Index r = 0; r < k_; ++r) {
        const auto i = idx[std::size_t(r)];
        sw += wts_[i];
        swy += wts_[i] * outcome_[i];
      }
      out[q] = sw > 0 ? swy / sw : outcome_.mean();
    }
    return out;
  }

 private:
  MatrixXd train_;
  VectorXd center_, scale_, outcome_, wts_;
  std::vector<std::uint64_t> hashes_;
  Eigen::Index k_;
};

class TreeEnsembleFit : public BaseFit {
 public:
  struct Node {
    int feat = -1;        // -1 = leaf
    double thresh = 0.0;  // x <= thresh goes left
    int left = -1, right = -1;
    double value = 0.0;
  };
  using Tree = std::vector<Node>;

  explicit TreeEnsembleFit(std::vector<Tree> trees) : trees_(std::move(trees)) {}

  VectorXd predict(const MatrixXd& X) const override {
    VectorXd out = VectorXd::Zero(X.rows());
    for (const auto& tree : trees_) {
      for (Eigen::Index i = 0; i < X.rows(); ++i) {
        int node = 0;
        while (tree[std::size_t(node)].feat >= 0) {
          const auto& nd = tree[std::size_t(node)];
          node = X(i, nd.feat) <= nd.thresh ? nd.left : nd.right;
        }
        out[i] += tree[std::size_t(node)].value;
      }
    }
    return out / double(trees_.size());
  }

 private:
  std::vector<Tree> trees_;
};

// ---------- individual learner fitting ----------

struct FitInput {
  const MatrixXd& X;
  const VectorXd& y;
  const VectorXd& w;  // mean-1 normalized
  Loss loss;
  std::uint64_t seed;
};

void standardize_stats(const MatrixXd& D, const VectorXd& w, VectorXd& center,
                       VectorXd& scale) {
  const double sw = w.sum();
  center = D.transpose() * w / sw;
  scale.resize(D.cols());
  for (Eigen::Index j = 0; j < D.cols(); ++j) {
    const double var =
        (D.col(j).array() - center[j]).square().matrix().dot(w) / sw;
    scale[j] = var > 0 ? std::sqrt(var) : 1.0;
  }
}

std::shared_ptr<BaseFit> fit_linear(const FitInput& in, std::vector<Term> terms,
                                    double lambda) {
  MatrixXd D = terms.empty() ? in.X : expand_terms(in.X, terms);
  VectorXd center, scale;
  standardize_stats(D, in.w, center, scale);
  MatrixXd S = (D.rowwise() - center.transpose()) * scale.cwiseInverse().asDiagonal();
  const auto p = S.cols();
  const bool logistic = in.loss == Loss::logloss;

  if (!logistic && lambda == 0.0) {
    // weighted least squares with rank check; intercept handled by centering
    MatrixXd Dw(S.rows(), p + 1);
    Dw.col(0) = VectorXd::Ones(S.rows());
    Dw.rightCols(p) = S;
    VectorXd sw = in.w.cwiseSqrt();
    MatrixXd A = sw.asDiagonal() * Dw;
    Eigen::ColPivHouseholderQR<MatrixXd> qr(A);
    qr.setThreshold(1e-8);
    if (qr.rank() < p + 1) throw DegenerateLearner{};
    VectorXd coef = qr.solve(sw.asDiagonal() * in.y);
    return std::make_shared<LinearFit>(std::move(terms), std::move(center),
                                       std::move(scale), coef[0],
                                       coef.tail(p).eval(), false);
  }
  if (!logistic) {
    // ridge on standardized features, intercept unpenalized (= weighted mean)
    MatrixXd G = S.transpose() * in.w.asDiagonal() * S;
    G.diagonal().array() += lambda;
    const double b0 = in.y.dot(in.w) / in.w.sum();
    VectorXd rhs = S.transpose() * (in.w.asDiagonal() * (in.y.array() - b0).matrix());
    VectorXd beta = G.ldlt().solve(rhs);
    if (!beta.allFinite()) throw DegenerateLearner{};
    return std::make_shared<LinearFit>(std::move(terms), std::move(center),
                                       std::move(scale), b0, std::move(beta),
                                       false);
  }
  // logistic via damped Newton; lambda penalizes non-intercept coefficients
  MatrixXd Dw(S.rows(), p + 1);
  Dw.col(0) = VectorXd::Ones(S.rows());
  Dw.rightCols(p) = S;
  VectorXd beta = VectorXd::Zero(p + 1);
  for (int it = 0; it < 40; ++it) {
    VectorXd eta = (Dw * beta).unaryExpr([](double e) { return clamp(e, -30.0, 30.0); });
    VectorXd prob = eta.unaryExpr([](double e) { return expit(e); });
    VectorXd wirls =
        (in.w.array() * prob.array() * (1.0 - prob.array()) + 1e-10).matrix();
    VectorXd grad = Dw.transpose() * (in.w.asDiagonal() * (in.y - prob));
    grad.tail(p) -= lambda * beta.tail(p);
    MatrixXd H = Dw.transpose() * wirls.asDiagonal() * Dw;
    H.diagonal().tail(p).array() += lambda;
    H.diagonal().array() += 1e-10;
    VectorXd step = H.ldlt().solve(grad);
    if (!step.allFinite()) throw DegenerateLearner{};
    beta += step;
    if (step.cwiseAbs().maxCoeff() < 1e-10) break;
  }
  if (!beta.allFinite() || beta.cwiseAbs().maxCoeff() > 1e6)
    throw DegenerateLearner{};
  return std::make_shared<LinearFit>(std::move(terms), std::move(center),
                                     std::move(scale), beta[0],
                                     beta.tail(p).eval(), true);
}

std::shared_ptr<BaseFit> fit_knn(const FitInput& in, int k) {
  VectorXd center, scale;
  standardize_stats(in.X, in.w, center, scale);
  MatrixXd S =
      (in.X.rowwise() - center.transpose()) * scale.cwiseInverse().asDiagonal();
  auto hashes = row_hashes(in.X, in.y, 0x6b6e6eULL);  // content-only tie-break
  return std::make_shared<KnnFit>(std::move(S), std::move(center),
                                  std::move(scale), in.y, in.w,
                                  std::move(hashes), k);
}

struct BinPlan {
  std::vector<std::vector<double>> edges;  // per feature, internal boundaries
  std::vector<std::vector<int>> bin_of;    // per feature, per row
};

BinPlan plan_bins(const MatrixXd& X, int max_bins) {
  BinPlan plan;
  const auto n = X.rows();
  plan.edges.resize(std::size_t(X.cols()));
  plan.bin_of.assign(std::size_t(X.cols()), std::vector<int>(std::size_t(n)));
  std::vector<double> v(static_cast<std::size_t>(n));
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    for (Eigen::Index i = 0; i < n; ++i) v[std::size_t(i)] = X(i, j);
    std::sort(v.begin(), v.end());
    auto& e = plan.edges[std::size_t(j)];
    for (int b = 1; b < max_bins; ++b) {
      const double q = v[std::size_t((n - 1) * b / max_bins)];
      if (e.empty() || q > e.back()) e.push_back(q);
    }
    if (!e.empty() && e.back() >= v.back()) e.pop_back();  // keep right side nonempty
    for (Eigen::Index i = 0; i < n; ++i) {
      const double x = X(i, j);
      plan.bin_of[std::size_t(j)][std::size_t(i)] =
          int(std::upper_bound(e.begin(), e.end(), x) - e.begin());
    }
  }
  return plan;
}

void grow_tree(TreeEnsembleFit::Tree& tree, int node_slot,
               const std::vector<Eigen::Index>& rows, const BinPlan& plan,
               const VectorXd& y, const VectorXd& w, int depth_left,
               int min_leaf) {
  auto& self = tree[std::size_t(node_slot)];
  double sw = 0, swy = 0;
  for (auto i : rows) {
    sw += w[i];
    swy += w[i] * y[i];
  }
  self.value = sw > 0 ? swy / sw : 0.0;
  if (depth_left == 0 || Eigen::Index(rows.size()) < 2 * min_leaf) return;

  const int p = int(plan.edges.size());
  double best_gain = 1e-12;
  int best_feat = -1, best_bin = -1;
  for (int j = 0; j < p; ++j) {
    const auto& edges = plan.edges[std::size_t(j)];
    if (edges.empty()) continue;
    const int nb = int(edges.size()) + 1;
    std::vector<double> bw(std::size_t(nb), 0.0), bwy(std::size_t(nb), 0.0);
    std::vector<int> bc(std::size_t(nb), 0);
    for (auto i : rows) {
      const int b = plan.bin_of[std::size_t(j)][std::size_t(i)];
      bw[std::size_t(b)] += w[i];
      bwy[std::size_t(b)] += w[i] * y[i];
      bc[std::size_t(b)]++;
    }
    double lw = 0, lwy = 0;
    int lc = 0;
    const double base = sw > 0 ? swy * swy / sw : 0.0;
    for (int b = 0; b + 1 < nb; ++b) {
      lw += bw[std::size_t(b)];
      lwy += bwy[std::size_t(b)];
      lc += bc[std::size_t(b)];
      const int rc = int(rows.size()) - lc;
      if (lc < min_leaf || rc < min_leaf) continue;
      const double rw = sw - lw, rwy = swy - lwy;
      if (lw <= 0 || rw <= 0) continue;
      const double gain = lwy * lwy / lw + rwy * rwy / rw - base;
      if (gain > best_gain) {
        best_gain = gain;
        best_feat = j;
        best_bin = b;
      }
    }
  }
  if (best_feat < 0) return;

  self.feat = best_feat;
  self.thresh = plan.edges[std::size_t(best_feat)][std::size_t(best_bin)];
  std::vector<Eigen::Index> left, right;
  for (auto i : rows)
    (plan.bin_of[std::size_t(best_feat)][std::size_t(i)] <= best_bin ? left : right)
        .push_back(i);
  const int li = int(tree.size());
  tree.push_back({});
  const int ri = int(tree.size());
  tree.push_back({});
  tree[std::size_t(node_slot)].left = li;
  tree[std::size_t(node_slot)].right = ri;
  grow_tree(tree, li, left, plan, y, w, depth_left - 1, min_leaf);
  grow_tree(tree, ri, right, plan, y, w, depth_left - 1, min_leaf);
}

std::shared_ptr<BaseFit> fit_tree_ensemble(const FitInput& in, int depth,
                                           int n_trees) {
  const auto n = in.X.rows();
  const auto plan = plan_bins(in.X, 32);
  const auto hashes = row_hashes(in.X, in.y, 0x74726565ULL);
  const auto order = hash_order(hashes);  // bootstrap draws in content order
  std::vector<TreeEnsembleFit::Tree> trees(static_cast<std::size_t>(n_trees));
  for (int t = 0; t < n_trees; ++t) {
    auto rng = make_rng(in.seed, std::uint64_t(t));
    std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
    std::vector<Eigen::Index> rows(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i)
      rows[std::size_t(i)] = order[std::size_t(pick(rng))];
    auto& tree = trees[std::size_t(t)];
    tree.push_back({});
    grow_tree(tree, 0, rows, plan, in.y, in.w, depth, 5);
  }
  return std::make_shared<TreeEnsembleFit>(std::move(trees));
}

std::shared_ptr<BaseFit> fit_single(const LearnerSpec& spec, const FitInput& in) {
  switch (spec.kind) {
    case LearnerKind::intercept: {
      const double c = in.y.dot(in.w) / in.w.sum();
      return std::make_shared<ConstantFit>(c);
    }
    case LearnerKind::ols_main:
      return fit_linear(in, {}, 0.0);
    case LearnerKind::ols_interactions:
      return fit_linear(in, interaction_terms(in.X), 0.0);
    case LearnerKind::ridge:
      return fit_linear(in, {}, spec.lambda);
    case LearnerKind::knn:
      return fit_knn(in, spec.k);
    case LearnerKind::tree_ensemble:
      return fit_tree_ensemble(in, spec.depth, spec.n_trees);
  }
  throw std::logic_error("unreachable learner kind");
}

double weighted_loss(Loss loss, const VectorXd& y, const VectorXd& q,
                     const VectorXd& w) {
  const double sw = w.sum();
  if (loss == Loss::squared) return (y - q).array().square().matrix().dot(w) / sw;
  double acc = 0;
  for (Eigen::Index i = 0; i < y.size(); ++i)
    acc -= w[i] * (y[i] * std::log(q[i]) + (1.0 - y[i]) * std::log(1.0 - q[i]));
  return acc / sw;
}

// min over simplex of mean_w (y - P alpha)^2 via projected gradient
VectorXd meta_squared(const MatrixXd& P, const VectorXd& y, const VectorXd& w) {
  const auto L = P.cols();
  const double sw = w.sum();
  MatrixXd G = P.transpose() * w.asDiagonal() * P / sw;
  VectorXd c = P.transpose() * (w.asDiagonal() * y) / sw;
  double lip = 0;  // Gershgorin bound on 2*lambda_max(G)
  for (Eigen::Index i = 0; i < L; ++i) lip = std::max(lip, 2.0 * G.row(i).cwiseAbs().sum());
  if (lip <= 0) return VectorXd::Constant(L, 1.0 / double(L));
  VectorXd alpha = VectorXd::Constant(L, 1.0 / double(L));
  double prev = std::numeric_limits<double>::infinity();
  for (int it = 0; it < 5000; ++it) {
    VectorXd grad = 2.0 * (G * alpha - c);
    alpha = project_simplex(alpha - grad / lip);
    const double obj = alpha.dot(G * alpha) - 2.0 * c.dot(alpha);
    if (prev - obj < 1e-15 && it > 50) break;
    prev = obj;
  }
  return alpha;
}

// min over simplex of weighted log-loss via pairwise coordinate descent
VectorXd meta_logloss(const MatrixXd& P, const VectorXd& y, const VectorXd& w) {
  const auto L = P.cols();
  VectorXd alpha = VectorXd::Constant(L, 1.0 / double(L));
  VectorXd q = P * alpha;
  auto obj = [&](const VectorXd& qq) { return weighted_loss(Loss::logloss, y, qq, w); };
  double cur = obj(q);
  for (int pass = 0; pass < 200; ++pass) {
    const double before = cur;
    for (Eigen::Index l = 0; l < L; ++l) {
      for (Eigen::Index j = 0; j < L; ++j) {
        if (j == l || alpha[j] <= 0) continue;
        VectorXd d = P.col(l) - P.col(j);
        double lo = -alpha[l], hi = alpha[j], t = 0;
        for (int nit = 0; nit < 30; ++nit) {
          VectorXd qq = q + t * d;
          double g1 = 0, g2 = 0;
          for (Eigen::Index i = 0; i < y.size(); ++i) {
            const double qi = qq[i], di = d[i];
            g1 -= w[i] * di * (y[i] - qi) / (qi * (1.0 - qi));
            g2 += w[i] * di * di *
                  (y[i] / (qi * qi) + (1.0 - y[i]) / ((1.0 - qi) * (1.0 - qi)));
          }
          if (std::abs(g1) < 1e-14) break;
          double step = g2 > 0 ? -g1 / g2 : (g1 > 0 ? lo - t : hi - t);
          double tn = clamp(t + step, lo, hi);
          if (std::abs(tn - t) < 1e-14) { t = tn; break; }
          t = tn;
        }
        if (t != 0) {
          q += t * d;
          alpha[l] += t;
          alpha[j] -= t;
          alpha[l] = clamp(alpha[l], 0.0, 1.0);
          alpha[j] = clamp(alpha[j], 0.0, 1.0);
        }
      }
    }
    cur = obj(q);
    if (before - cur < 1e-14) break;
  }
  // renormalize away accumulated rounding
  const double s = alpha.sum();
  if (s > 0) alpha /= s;
  return alpha;
}

}  // namespace

// ---------- predictor ----------

static Predictor fit_stack_sorted(const MatrixXd& features, const VectorXd& outcome,
                                  const VectorXd& w,
                                  const std::vector<LearnerSpec>& specs,
                                  const StackOptions& opt);

VectorXd Predictor::predict(const MatrixXd& features) const {
  if (features.cols() != n_features)
    throw dimension_mismatch("predict: expected " + std::to_string(n_features) +
                             " features, got " + std::to_string(features.cols()));
  VectorXd out = VectorXd::Zero(features.rows());
  for (std::size_t l = 0; l < fits.size(); ++l) {
    if (weights[Eigen::Index(l)] == 0.0) continue;
    VectorXd p = fits[l]->predict(features);
    if (loss == Loss::logloss)
      p = p.unaryExpr([&](double v) { return clamp(v, prob_eps, 1.0 - prob_eps); });
    out += weights[Eigen::Index(l)] * p;
  }
  if (loss == Loss::logloss)
    out = out.unaryExpr([&](double v) { return clamp(v, prob_eps, 1.0 - prob_eps); });
  return out;
}

double Predictor::predict_one(const VectorXd& row) const {
  return predict(row.transpose())[0];
}

Predictor fit_stack(const MatrixXd& features, const VectorXd& outcome,
                    const std::vector<LearnerSpec>& specs,
                    const StackOptions& opt) {
  const auto n = features.rows();
  if (outcome.size() != n)
    throw dimension_mismatch("fit_stack: outcome length mismatch");
  if (specs.empty()) throw validation_error("fit_stack: empty learner library");
  if (opt.k_folds < 2) throw validation_error("fit_stack: k_folds must be >= 2");
  if (n < 2 * opt.k_folds)
    throw insufficient_data("fit_stack: n=" + std::to_string(n) + " < 2*k_folds=" +
                            std::to_string(2 * opt.k_folds));
  if (!features.allFinite() || !outcome.allFinite())
    throw validation_error("fit_stack: non-finite inputs");
  if (opt.loss == Loss::logloss)
    for (Eigen::Index i = 0; i < n; ++i)
      if (outcome[i] != 0.0 && outcome[i] != 1.0)
        throw validation_error("fit_stack: log-loss outcome must be 0/1");

  VectorXd w;
  if (opt.weights.size() == 0) {
    w = VectorXd::Ones(n);
  } else {
    if (opt.weights.size() != n)
      throw dimension_mismatch("fit_stack: weights length mismatch");
    if (!(opt.weights.array() >= 0).all() || !opt.weights.allFinite() ||
        opt.weights.sum() <= 0)
      throw validation_error("fit_stack: weights must be nonnegative with positive sum");
    w = opt.weights * (double(n) / opt.weights.sum());
  }

  // Canonicalize row order by content hash: every downstream computation then
  // sees the same row sequence whatever the caller's ordering, making the fit
  // bit-identical under row permutation (content hashes also deal the folds).
  {
    auto h = row_hashes(features, outcome, opt.seed);
    for (Eigen::Index i = 0; i < n; ++i)
      h[std::size_t(i)] = mix64(h[std::size_t(i)] ^ hash_doubles(&w[i], 1));
    const auto order = hash_order(h);
    MatrixXd Xs(n, features.cols());
    VectorXd ys(n), ws(n);
    for (Eigen::Index pos = 0; pos < n; ++pos) {
      const auto i = order[std::size_t(pos)];
      Xs.row(pos) = features.row(i);
      ys[pos] = outcome[i];
      ws[pos] = w[i];
    }
    return fit_stack_sorted(Xs, ys, ws, specs, opt);
  }
}

static Predictor fit_stack_sorted(const MatrixXd& features, const VectorXd& outcome,
                                  const VectorXd& w,
                                  const std::vector<LearnerSpec>& specs,
                                  const StackOptions& opt) {
  const auto n = features.rows();
  std::vector<int> folds(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i)
    folds[std::size_t(i)] = int(i % opt.k_folds);

  Predictor pred;
  pred.loss = opt.loss;
  pred.prob_eps = opt.prob_eps;
  pred.feature_names = opt.feature_names;
  pred.n_features = features.cols();

  // survivors must fit on the full data and in every fold
  struct Candidate {
    LearnerSpec spec;
    std::shared_ptr<BaseFit> full_fit;
    VectorXd cv_pred;
  };
  std::vector<Candidate> cands;
  for (std::size_t l = 0; l < specs.size(); ++l) {
    const auto seed_l = derive_seed(opt.seed, 0x1000 + l);
    try {
      Candidate c;
      c.spec = specs[l];
      c.full_fit = fit_single(specs[l], {features, outcome, w, opt.loss, seed_l});
      c.cv_pred = VectorXd::Zero(n);
      for (int f = 0; f < opt.k_folds; ++f) {
        std::vector<Eigen::Index> train, test;
        for (Eigen::Index i = 0; i < n; ++i)
          (folds[std::size_t(i)] == f ? test : train).push_back(i);
        MatrixXd Xtr(Eigen::Index(train.size()), features.cols());
        VectorXd ytr(Eigen::Index(train.size())), wtr(Eigen::Index(train.size()));
        for (std::size_t r = 0; r < train.size(); ++r) {
          Xtr.row(Eigen::Index(r)) = features.row(train[r]);
          ytr[Eigen::Index(r)] = outcome[train[r]];
          wtr[Eigen::Index(r)] = w[train[r]];
        }
        auto fold_fit = fit_single(
            specs[l], {Xtr, ytr, wtr, opt.loss, derive_seed(seed_l, 0x2000 + f)});
        MatrixXd Xte(Eigen::Index(test.size()), features.cols());
        for (std::size_t r = 0; r < test.size(); ++r)
          Xte.row(Eigen::Index(r)) = features.row(test[r]);
        VectorXd p = fold_fit->predict(Xte);
        for (std::size_t r = 0; r < test.size(); ++r)
          c.cv_pred[test[r]] = p[Eigen::Index(r)];
      }
      if (opt.loss == Loss::logloss)
        c.cv_pred = c.cv_pred.unaryExpr(
            [&](double v) { return clamp(v, opt.prob_eps, 1.0 - opt.prob_eps); });
      if (!c.cv_pred.allFinite()) throw DegenerateLearner{};
      cands.push_back(std::move(c));
    } catch (const DegenerateLearner&) {
      pred.dropped.push_back(specs[l].label());
    }
  }
  if (cands.empty())
    throw estimation_error("fit_stack: every learner was degenerate");

  const auto L = Eigen::Index(cands.size());
  MatrixXd P(n, L);
  for (Eigen::Index l = 0; l < L; ++l) P.col(l) = cands[std::size_t(l)].cv_pred;

  pred.cv_losses.resize(L);
  for (Eigen::Index l = 0; l < L; ++l)
    pred.cv_losses[l] = weighted_loss(opt.loss, outcome, P.col(l), w);

  VectorXd alpha = opt.loss == Loss::squared ? meta_squared(P, outcome, w)
                                             : meta_logloss(P, outcome, w);
  const double opt_loss = weighted_loss(opt.loss, outcome, P * alpha, w);

  // prefer a vertex that ties or beats the optimized mixture (earlier wins)
  Eigen::Index best_vertex = 0;
  for (Eigen::Index l = 1; l < L; ++l)
    if (pred.cv_losses[l] < pred.cv_losses[best_vertex] - 1e-12) best_vertex = l;
  if (pred.cv_losses[best_vertex] <= opt_loss + 1e-12) {
    alpha = VectorXd::Zero(L);
    alpha[best_vertex] = 1.0;
    pred.ensemble_cv_loss = pred.cv_losses[best_vertex];
  } else {
    pred.ensemble_cv_loss = opt_loss;
  }

  for (auto& c : cands) {
    pred.fits.push_back(std::move(c.full_fit));
    pred.specs.push_back(c.spec);
  }
  pred.weights = alpha;
  return pred;
}

Predictor fit_plain(const MatrixXd& features, const VectorXd& outcome,
                    const LearnerSpec& spec, const StackOptions& opt) {
  const auto n = features.rows();
  if (outcome.size() != n)
    throw dimension_mismatch("fit_plain: outcome length mismatch");
  if (n < 2) throw insufficient_data("fit_plain: n < 2");
  if (!features.allFinite() || !outcome.allFinite())
    throw validation_error("fit_plain: non-finite inputs");
  const VectorXd w = VectorXd::Ones(n);

  Predictor pred;
  pred.loss = opt.loss;
  pred.prob_eps = opt.prob_eps;
  pred.feature_names = opt.feature_names;
  pred.n_features = features.cols();
  LearnerSpec used = spec;
  std::shared_ptr<BaseFit> fit;
  try {
    fit = fit_single(spec, {features, outcome, w, opt.loss,
                            derive_seed(opt.seed, 0x1000)});
  } catch (const DegenerateLearner&) {
    pred.dropped.push_back(spec.label());
    used.kind = LearnerKind::intercept;
    fit = fit_single(used, {features, outcome, w, opt.loss, opt.seed});
  }
  VectorXd q = fit->predict(features);
  if (opt.loss == Loss::logloss)
    q = q.cwiseMax(opt.prob_eps).cwiseMin(1.0 - opt.prob_eps);
  pred.fits = {std::move(fit)};
  pred.specs = {used};
  pred.weights = VectorXd::Ones(1);
  pred.cv_losses = VectorXd::Constant(1, weighted_loss(opt.loss, outcome, q, w));
  pred.ensemble_cv_loss = pred.cv_losses[0];
  return pred;
}

VectorXd evaluate_with_counterfactual_a(const Predictor& pred, MatrixXd features,
                                        double a) {
  auto it = std::find(pred.feature_names.begin(), pred.feature_names.end(), "a");
  if (it == pred.feature_names.end())
    throw estimation_error("counterfactual evaluation: predictor has no feature named 'a'");
  const auto col = Eigen::Index(it - pred.feature_names.begin());
  features.col(col).setConstant(a);
  return pred.predict(features);
}

}  // namespace moco
