// Copyright 2026 The MoCo Authors
// SPDX-License-Identifier: Apache-2.0

#include "moco/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "moco/baselines.hpp"
#include "moco/common.hpp"
#include "moco/data.hpp"
#include "moco/density.hpp"
#include "moco/inference.hpp"
#include "moco/io.hpp"
#include "moco/learners.hpp"
#include "moco/moco.hpp"
#include "moco/parallel.hpp"
#include "moco/simgen.hpp"

namespace moco {

std::string default_config_text() {
  return
      "# moco run configuration; every key shown with its default\n"
      "\n"
      "[data]\n"
      "# column roles in the cohort csv; `a`, `m` and (optional) `delta` are\n"
      "# fixed header names, everything else is listed here\n"
      "x =\n"
      "z =\n"
      "y =\n"
      "# usability rule delta = 1{m <= threshold}, applied only when the csv\n"
      "# has no delta column\n"
      "delta_threshold =\n"
      "\n"
      "[estimator]\n"
      "# onestep | crossfit\n"
      "estimator = onestep\n"
      "k_outer = 5\n"
      "# default | lean | intercept | comma list (ols, ridge:0.1, knn:5, tree:3:100)\n"
      "learners = default\n"
      "density_learners = default\n"
      "k_folds = 10\n"
      "density_bins = 20\n"
      "eps1 = 0.01\n"
      "eps2 = 0.01\n"
      "eps3 = 0.001\n"
      "ratio_cap = 50\n"
      "iptw_bootstrap = 500\n"
      "\n"
      "[inference]\n"
      "alpha = 0.05\n"
      "mc_draws = 100000\n"
      "# independent refits whose z statistics are averaged\n"
      "repeats = 1\n"
      "\n"
      "[simulate]\n"
      "oracle_samples = 4000000\n";
}

namespace {

using nlohmann::json;

std::string iso_utc(std::chrono::system_clock::time_point tp) {
  std::time_t t = std::chrono::system_clock::to_time_t(tp);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string now_utc() { return iso_utc(std::chrono::system_clock::now()); }

// ---------- configuration ----------

struct ResolvedConfig {
  ConfigMap map;
  std::string text;    // canonical merged form
  std::string digest;  // the manifest's config hash
};

// Defaults overlaid with the user file; unknown keys are typos, not options.
ResolvedConfig resolve_config(const std::string& path) {
  ConfigMap merged = parse_config_text(default_config_text());
  if (!path.empty()) {
    ConfigMap user = read_config_file(path);
    for (const auto& [section, keys] : user.sections)
      for (const auto& [key, value] : keys) {
        if (!merged.has(section, key))
          throw validation_error("unknown config key: [" + section + "] " + key);
        merged.set(section, key, value);
      }
  }
  ResolvedConfig rc;
  rc.map = std::move(merged);
  rc.text = rc.map.to_text();
  rc.digest = hex_digest(rc.text);
  return rc;
}

std::vector<LearnerSpec> library_from(const std::string& text, bool density) {
  if (text.empty() || text == "default")
    return density ? density_default_library() : default_library();
  if (text == "lean") return lean_library();
  if (text == "intercept") return intercept_only_library();
  std::vector<std::string> labels;
  for (const auto& item : split(text, ','))
    if (auto t = trim(item); !t.empty()) labels.push_back(t);
  return parse_library(labels);
}

EstimatorConfig estimator_config_from(const ConfigMap& cfg) {
  EstimatorConfig ec;
  ec.learners = library_from(cfg.get("estimator", "learners", "default"), false);
  ec.density_learners =
      library_from(cfg.get("estimator", "density_learners", "default"), true);
  ec.k_folds = int(cfg.get_int("estimator", "k_folds", 10));
  ec.density_bins = int(cfg.get_int("estimator", "density_bins", 20));
  ec.trunc.eps1 = cfg.get_num("estimator", "eps1", 0.01);
  ec.trunc.eps2 = cfg.get_num("estimator", "eps2", 0.01);
  ec.trunc.eps3 = cfg.get_num("estimator", "eps3", 1e-3);
  ec.trunc.ratio_cap = cfg.get_num("estimator", "ratio_cap", 50.0);
  return ec;
}

struct InferenceSettings {
  double alpha = 0.05;
  long mc_draws = 100000;
  int repeats = 1;
};

InferenceSettings inference_from(const ConfigMap& cfg) {
  InferenceSettings s;
  s.alpha = cfg.get_num("inference", "alpha", 0.05);
  s.mc_draws = cfg.get_int("inference", "mc_draws", 100000);
  s.repeats = int(cfg.get_int("inference", "repeats", 1));
  if (!(s.alpha > 0.0 && s.alpha < 1.0))
    throw validation_error("alpha outside (0, 1)");
  if (s.mc_draws < 1) throw validation_error("mc_draws must be >= 1");
  if (s.repeats < 1) throw validation_error("repeats must be >= 1");
  return s;
}

bool crossfit_from(const ConfigMap& cfg) {
  const std::string kind = cfg.get("estimator", "estimator", "onestep");
  if (kind == "onestep") return false;
  if (kind == "crossfit") return true;
  throw validation_error("estimator must be onestep or crossfit, got " + kind);
}

// ---------- manifest ----------

json make_manifest(const std::string& command,
                   const std::vector<std::string>& argv,
                   const ResolvedConfig& cfg, std::uint64_t seed,
                   const std::vector<std::pair<std::string, std::string>>& inputs,
                   const std::string& started) {
  json j;
  j["command"] = command;
  j["argv"] = argv;
  j["config_hash"] = cfg.digest;
  j["seed"] = seed;
  j["versions"] = {{"moco", kMocoVersion},
                   {"cli11", CLI11_VERSION},
                   {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." +
                                 std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                 std::to_string(EIGEN_MINOR_VERSION)},
                   {"compiler", __VERSION__}};
  j["timestamps"] = {{"started", started}, {"finished", now_utc()}};
  json in = json::array();
  for (const auto& [path, digest] : inputs)
    in.push_back({{"path", path}, {"digest", digest}});
  j["inputs"] = in;
  return j;
}

void write_json(const std::string& path, const json& j) {
  write_text_file(path, j.dump(2) + "\n");
}

// ---------- fit ----------

struct FitArgs {
  std::string data, config, out;
  std::string methods = "moco";
  std::string regions = "all";
  std::uint64_t seed = 1;
};

std::vector<int> select_regions(const Cohort& cohort, const std::string& csv) {
  std::vector<int> sel;
  const std::string t = trim(csv);
  if (t.empty() || t == "all") {
    for (int j = 0; j < int(cohort.n_regions()); ++j) sel.push_back(j);
    return sel;
  }
  for (const auto& item : split(t, ',')) {
    const auto name = trim(item);
    if (name.empty()) continue;
    auto it = std::find(cohort.y_names.begin(), cohort.y_names.end(), name);
    if (it == cohort.y_names.end())
      throw validation_error("unknown region: " + name);
    sel.push_back(int(it - cohort.y_names.begin()));
  }
  if (sel.empty()) throw validation_error("empty region selection");
  return sel;
}

std::vector<Method> parse_methods(const std::string& csv) {
  std::vector<Method> out;
  for (const auto& item : split(csv, ','))
    if (auto t = trim(item); !t.empty()) {
      Method m = parse_method(t);
      if (std::find(out.begin(), out.end(), m) == out.end()) out.push_back(m);
    }
  if (out.empty()) throw validation_error("no methods given");
  return out;
}

// Influence of the two-sample mean difference on the analysis rows — exactly
// mean-zero, used only for the cross-region correlation inside the band.
void attach_mean_influence(RegionResult& r, const Cohort& cohort, int region,
                           bool usable_only) {
  std::vector<Eigen::Index> rows;
  for (Eigen::Index i = 0; i < cohort.n(); ++i)
    if (!usable_only || cohort.delta[i] == 1.0) rows.push_back(i);
  double sum1 = 0, sum0 = 0;
  long n1 = 0, n0 = 0;
  for (Eigen::Index i : rows)
    (cohort.a[i] > 0.5 ? (++n1, sum1 += cohort.y(i, region))
                       : (++n0, sum0 += cohort.y(i, region)));
  if (n1 == 0 || n0 == 0) return;  // degenerate; leave the band to marginals
  const double m1 = sum1 / double(n1), m0 = sum0 / double(n0);
  const double p1 = double(n1) / double(rows.size());
  r.eif_diff.resize(Eigen::Index(rows.size()));
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const Eigen::Index i = rows[k];
    const double y = cohort.y(i, region);
    r.eif_diff[Eigen::Index(k)] =
        cohort.a[i] > 0.5 ? (y - m1) / p1 : -(y - m0) / (1.0 - p1);
  }
}

// The four positivity ratios (standardizing density over each estimated
// denominator), binned for downstream plotting. Counts only; never asserted.
void write_ratio_histogram(const std::string& path, const NuisanceFits& nf,
                           const Cohort& cohort) {
  auto f_ax = make_features(cohort, "ax");
  auto f_axz = make_features(cohort, "axz");
  MatrixXd ax0 = f_ax.mat;
  ax0.col(0).setZero();
  MatrixXd axz0 = f_axz.mat;
  axz0.col(0).setZero();
  MatrixXd axz1 = f_axz.mat;
  axz1.col(0).setOnes();
  const double cap = nf.config.trunc.ratio_cap;
  const DensityRatio r1{&nf.dens_d1_ax, &nf.dens_d1_axz, cap};
  const DensityRatio r2{&nf.dens_ax, &nf.dens_axz, cap};
  const DensityRatio r3{&nf.dens_d1_ax, &nf.dens_axz, cap};
  const DensityRatio r4{&nf.dens_d1_ax, &nf.dens_axz, cap};

  struct Family {
    const char* label;
    std::vector<double> values;
  };
  std::vector<Family> fams = {{"d1ax0_over_d1axz", {}},
                              {"ax_over_axz", {}},
                              {"d1ax0_over_axz0", {}},
                              {"d1ax0_over_axz1", {}}};
  for (Eigen::Index i = 0; i < cohort.n(); ++i) {
    const double m = cohort.m[i];
    if (cohort.delta[i] == 1.0)
      fams[0].values.push_back(
          r1.at(m, ax0.row(i).transpose(), f_axz.mat.row(i).transpose()));
    fams[1].values.push_back(
        r2.at(m, f_ax.mat.row(i).transpose(), f_axz.mat.row(i).transpose()));
    fams[2].values.push_back(
        r3.at(m, ax0.row(i).transpose(), axz0.row(i).transpose()));
    fams[3].values.push_back(
        r4.at(m, ax0.row(i).transpose(), axz1.row(i).transpose()));
  }

  std::ostringstream out;
  out << "family,bin_lo,bin_hi,count\n";
  const int n_bins = 30;
  for (const auto& f : fams) {
    double hi = 0;
    for (double v : f.values) hi = std::max(hi, v);
    if (!(hi > 0)) hi = 1.0;
    hi *= 1.0 + 1e-9;  // the max lands inside the last bin
    const double w = hi / n_bins;
    std::vector<long> count(n_bins, 0);
    for (double v : f.values) ++count[std::min(n_bins - 1, int(v / w))];
    for (int b = 0; b < n_bins; ++b)
      out << f.label << ',' << fmt_double(b * w) << ',' << fmt_double((b + 1) * w)
          << ',' << count[b] << '\n';
  }
  write_text_file(path, out.str());
}

json band_json(const std::string& method, const BandResult& b) {
  json j;
  j["method"] = method;
  j["z_max"] = b.z_max;
  json names = json::array(), est = json::array(), z = json::array();
  json lo = json::array(), hi = json::array(), rej = json::array();
  for (std::size_t k = 0; k < b.regions.size(); ++k) {
    names.push_back(b.regions[k].region);
    est.push_back(b.regions[k].diff);
    z.push_back(b.regions[k].z);
    lo.push_back(b.band_lo[Eigen::Index(k)]);
    hi.push_back(b.band_hi[Eigen::Index(k)]);
    rej.push_back(bool(b.rejected[k]));
  }
  j["regions"] = names;
  j["estimate"] = est;
  j["z"] = z;
  j["band_lo"] = lo;
  j["band_hi"] = hi;
  j["rejected"] = rej;
  json corr = json::array();
  for (Eigen::Index r = 0; r < b.corr.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < b.corr.cols(); ++c) row.push_back(b.corr(r, c));
    corr.push_back(row);
  }
  j["corr"] = corr;
  return j;
}

// Input files by content digest; the resolved-config hash is separate.
std::vector<std::pair<std::string, std::string>> fit_inputs(
    const std::string& data, const std::string& config) {
  std::vector<std::pair<std::string, std::string>> in;
  in.emplace_back(data, hex_digest(read_text_file(data)));
  if (!config.empty())
    in.emplace_back(config, hex_digest(read_text_file(config)));
  return in;
}

std::string joined_warnings(const RegionResult& r) {
  std::string s;
  for (const auto& w : r.warnings) {
    if (!s.empty()) s += "; ";
    s += w;
  }
  std::replace(s.begin(), s.end(), ',', ';');
  return s;
}

int cmd_fit(const FitArgs& a, const std::vector<std::string>& argv,
            std::ostream& out, std::ostream& err) {
  const std::string started = now_utc();
  ResolvedConfig cfg = resolve_config(a.config);

  RoleConfig roles;
  roles.x_columns = cfg.map.get_list("data", "x");
  roles.z_columns = cfg.map.get_list("data", "z");
  roles.y_columns = cfg.map.get_list("data", "y");
  if (roles.x_columns.empty() || roles.z_columns.empty() ||
      roles.y_columns.empty())
    throw validation_error("config [data] must list the x, z and y columns");
  EstimatorConfig ec = estimator_config_from(cfg.map);
  roles.trunc = ec.trunc;
  const InferenceSettings inf = inference_from(cfg.map);
  const bool crossfit = crossfit_from(cfg.map);
  const int k_outer = int(cfg.map.get_int("estimator", "k_outer", 5));

  Cohort cohort = read_cohort_csv(a.data, roles);
  if (cohort.n() > 0 && std::isnan(cohort.delta[0])) {
    const std::string thr = cfg.map.get("data", "delta_threshold", "");
    if (thr.empty())
      throw validation_error(
          "cohort csv has no delta column and [data] delta_threshold is unset");
    cohort = derive_delta(std::move(cohort), parse_number(thr));
  }
  ValidationReport report = validate_cohort(cohort, roles);
  for (const auto& f : report.findings)
    if (!f.fatal) err << "warning: " << f.message << '\n';
  if (!report.accepted) throw validation_error(report.first_fatal());

  const std::vector<int> sel = select_regions(cohort, a.regions);
  const std::vector<Method> methods = parse_methods(a.methods);
  std::filesystem::create_directories(a.out);
  const auto path = [&](const char* name) { return a.out + "/" + name; };

  std::vector<std::pair<std::string, RegionResult>> table;
  json bands = json::array();

  for (std::size_t mi = 0; mi < methods.size(); ++mi) {
    const Method method = methods[mi];
    const std::string label = method_label(method);
    const std::uint64_t band_seed = derive_seed(a.seed, 0xba2d + mi);
    if (method == Method::moco) {
      std::vector<std::vector<RegionResult>> repeats;
      NuisanceFits diag;
      bool have_diag = false;
      for (int rep = 0; rep < inf.repeats; ++rep) {
        const std::uint64_t rep_seed =
            derive_seed(a.seed, 0xf170 + std::uint64_t(rep));
        std::vector<RegionResult> regs;
        if (crossfit) {
          for (int j : sel) {
            EstimatorConfig rc = ec;
            rc.region = j;
            auto pair = cross_fit_pair(cohort, rc, rep_seed, k_outer);
            regs.push_back(region_inference(cohort.y_names[std::size_t(j)],
                                            pair.second, pair.first, inf.alpha));
          }
        } else {
          EstimatorConfig rc = ec;
          rc.region = sel.front();
          NuisanceFits nf = fit_all_nuisances(cohort, rc, rep_seed);
          if (rep == 0) {
            diag = nf;
            have_diag = true;
          }
          for (std::size_t jj = 0; jj < sel.size(); ++jj) {
            NuisanceFits local;
            if (jj > 0) local = refit_for_region(nf, cohort, sel[jj]);
            const NuisanceFits& use = jj == 0 ? nf : local;
            auto t0 = theta_from_fits(use, cohort, 0);
            auto t1 = theta_from_fits(use, cohort, 1);
            regs.push_back(region_inference(
                cohort.y_names[std::size_t(sel[jj])], t1, t0, inf.alpha));
          }
        }
        repeats.push_back(std::move(regs));
      }
      BandResult band =
          band_from_repeats(repeats, inf.alpha, inf.mc_draws, band_seed);
      bands.push_back(band_json(label, band));
      for (const auto& r : band.regions) table.emplace_back(label, r);
      if (!have_diag) {
        EstimatorConfig rc = ec;
        rc.region = sel.front();
        diag = fit_all_nuisances(cohort, rc, derive_seed(a.seed, 0xd1a6));
      }
      write_ratio_histogram(path("ratio_hist.csv"), diag, cohort);
      for (const ConditionalDensity* d :
           {&diag.dens_d1_ax, &diag.dens_d1_axz, &diag.dens_ax, &diag.dens_axz})
        if (!d->warning.empty()) err << "warning: " << d->warning << '\n';
    } else if (method == Method::naive_all || method == Method::naive_removal) {
      std::vector<RegionResult> regs;
      for (int j : sel) {
        RegionResult r = method == Method::naive_all
                             ? naive_all(cohort, j, inf.alpha)
                             : naive_removal(cohort, j, inf.alpha);
        attach_mean_influence(r, cohort, j, method == Method::naive_removal);
        regs.push_back(std::move(r));
      }
      if (std::all_of(regs.begin(), regs.end(),
                      [](const RegionResult& r) { return r.eif_diff.size(); })) {
        BandResult band =
            simultaneous_band(regs, inf.alpha, inf.mc_draws, band_seed);
        bands.push_back(band_json(label, band));
      }
      for (const auto& r : regs) table.emplace_back(label, r);
    } else {
      // bootstrap / model-based intervals are per-region only
      const int bootstrap =
          int(cfg.map.get_int("estimator", "iptw_bootstrap", 500));
      for (int j : sel) {
        RegionResult r =
            method == Method::iptw
                ? iptw(cohort, j, derive_seed(a.seed, 0x1b70 + std::uint64_t(j)),
                       bootstrap, inf.alpha, ec.trunc)
                : nebel(cohort, j, ec,
                        derive_seed(a.seed, 0x2be0 + std::uint64_t(j)),
                        inf.alpha);
        table.emplace_back(label, r);
      }
    }
  }

  std::ostringstream rcsv;
  rcsv << "method,region,estimate,ci_lo,ci_hi,z,warnings\n";
  for (const auto& [label, r] : table) {
    rcsv << label << ',' << r.region << ',' << fmt_double(r.diff) << ','
         << fmt_double(r.ci_lo) << ',' << fmt_double(r.ci_hi) << ','
         << fmt_double(r.z) << ',' << joined_warnings(r) << '\n';
    for (const auto& w : r.warnings)
      err << "warning: " << r.region << " (" << label << "): " << w << '\n';
  }
  write_text_file(path("results.csv"), rcsv.str());

  json bj;
  bj["alpha"] = inf.alpha;
  bj["mc_draws"] = inf.mc_draws;
  bj["bands"] = bands;
  write_json(path("band.json"), bj);

  write_json(path("manifest.json"),
             make_manifest("fit", argv, cfg, a.seed,
                           fit_inputs(a.data, a.config), started));

  out << "fit n=" << cohort.n() << " regions=" << sel.size() << " methods="
      << a.methods << " out=" << a.out << '\n';
  return 0;
}

// ---------- simulate ----------

struct SimArgs {
  std::string design, config, out;
  std::string n_csv = "400";
  std::string misspec = "all_correct";
  std::string methods = "moco";
  int reps = 100;
  std::uint64_t seed = 1;
};

int cmd_simulate(const SimArgs& a, const std::vector<std::string>& argv,
                 std::ostream& out, std::ostream& err) {
  (void)err;
  const std::string started = now_utc();
  ResolvedConfig cfg = resolve_config(a.config);

  StudySpec spec;
  spec.design = SimDesign::parse(a.design);
  spec.n_grid.clear();
  for (const auto& item : split(a.n_csv, ',')) {
    const auto t = trim(item);
    if (t.empty()) continue;
    std::size_t pos = 0;
    long v = 0;
    try {
      v = std::stol(t, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != t.size() || v < 1)
      throw validation_error("bad cohort size: " + t);
    spec.n_grid.push_back(Eigen::Index(v));
  }
  spec.reps = a.reps;
  spec.methods = parse_methods(a.methods);
  const InferenceSettings inf = inference_from(cfg.map);
  spec.alpha = inf.alpha;
  spec.use_cross_fit = crossfit_from(cfg.map);
  spec.iptw_bootstrap = int(cfg.map.get_int("estimator", "iptw_bootstrap", 500));
  spec.oracle_samples = cfg.map.get_int("simulate", "oracle_samples", 4000000);
  spec.config = apply_misspec(MisspecPlan::from_row(a.misspec),
                              estimator_config_from(cfg.map));

  MetricsTable metrics = run_study(spec, a.seed);

  std::filesystem::create_directories(a.out);
  write_text_file(a.out + "/metrics.csv", metrics.to_csv());
  std::vector<std::pair<std::string, std::string>> inputs;
  if (!a.config.empty())
    inputs.emplace_back(a.config, hex_digest(read_text_file(a.config)));
  write_json(a.out + "/manifest.json",
             make_manifest("simulate", argv, cfg, a.seed, inputs, started));

  out << "simulate design=" << a.design << " n=" << a.n_csv << " reps="
      << a.reps << " methods=" << a.methods << " out=" << a.out << '\n';
  return 0;
}

// ---------- oracle ----------

struct OracleArgs {
  std::string design;
  long samples = 1000000;
  std::uint64_t seed = 1;
};

int cmd_oracle(const OracleArgs& a, std::ostream& out) {
  const SimDesign design = SimDesign::parse(a.design);
  const OracleResult o = truth_oracle(design, a.samples, a.seed);
  const Cohort probe = generate(design, 2, 1);  // region labels only
  out << "design=" << a.design << " samples=" << o.samples << " acceptance="
      << fmt_double(o.acceptance) << '\n';
  out << "region theta0 theta1 diff diff_se gap gap_se\n";
  for (Eigen::Index r = 0; r < o.theta.rows(); ++r) {
    out << probe.y_names[std::size_t(r)] << ' ' << fmt_double(o.theta(r, 0))
        << ' ' << fmt_double(o.theta(r, 1)) << ' ' << fmt_double(o.diff(int(r)))
        << ' ' << fmt_double(o.diff_se(int(r))) << ' '
        << fmt_double(o.gap(int(r))) << ' ' << fmt_double(o.gap_se(int(r)))
        << '\n';
  }
  if (o.eif_var.size() == 2)
    out << "eif_var " << fmt_double(o.eif_var[0]) << ' '
        << fmt_double(o.eif_var[1]) << '\n';
  return 0;
}

}  // namespace

// ---------- entry point ----------

int cli_main(const std::vector<std::string>& args, std::ostream& out,
             std::ostream& err) {
  CLI::App app{"motion-controlled group-difference estimation"};
  app.name("moco");
  int threads = 0;
  app.add_option("--threads", threads, "worker threads (default: all cores)");
  app.require_subcommand(1);

  FitArgs fa;
  auto* fit = app.add_subcommand("fit", "estimate group contrasts from a cohort csv");
  fit->add_option("data", fa.data, "cohort csv")->required();
  fit->add_option("--config", fa.config, "configuration file");
  fit->add_option("--methods", fa.methods,
                  "comma list: moco,naive,naive-removal,iptw,nebel");
  fit->add_option("--regions", fa.regions,
                  "comma list of outcome columns (default all)");
  fit->add_option("--seed", fa.seed, "rng seed");
  fit->add_option("--out", fa.out, "output directory")->required();

  SimArgs sa;
  auto* sim = app.add_subcommand(
      "simulate", "replicate a design and tabulate estimator metrics");
  sim->add_option("--design", sa.design, "main | theory | var")->required();
  sim->add_option("--n", sa.n_csv, "comma list of cohort sizes");
  sim->add_option("--reps", sa.reps, "replicates per cohort size");
  sim->add_option("--misspec", sa.misspec,
                  "nuisance misspecification row (B2.1..B2.5)");
  sim->add_option("--methods", sa.methods,
                  "comma list: moco,naive,naive-removal,iptw,nebel");
  sim->add_option("--seed", sa.seed, "rng seed");
  sim->add_option("--config", sa.config, "configuration file");
  sim->add_option("--out", sa.out, "output directory")->required();

  OracleArgs oa;
  auto* orc = app.add_subcommand("oracle", "brute-force truth report for a design");
  orc->add_option("--design", oa.design, "main | theory | var")->required();
  orc->add_option("--samples", oa.samples, "monte carlo budget");
  orc->add_option("--seed", oa.seed, "rng seed");

  bool print_defaults = false;
  auto* cfg = app.add_subcommand("config", "configuration helpers");
  cfg->add_flag("--print-defaults", print_defaults,
                "print the full default configuration");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : 2;
  }

  try {
    set_max_threads(threads);
    if (fit->parsed()) return cmd_fit(fa, args, out, err);
    if (sim->parsed()) return cmd_simulate(sa, args, out, err);
    if (orc->parsed()) return cmd_oracle(oa, out);
    if (print_defaults) {
      out << default_config_text();
      return 0;
    }
    err << "config: nothing to do (try --print-defaults)\n";
    return 2;
  } catch (const validation_error& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const io_error& e) {
    err << "error: " << e.what() << '\n';
    return 4;
  } catch (const estimation_error& e) {
    err << "error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace moco
