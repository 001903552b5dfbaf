// Copyright 2026 The MoCo Authors
// SPDX-License-Identifier: Apache-2.0

#include "doctest.h"
#include "moco/io.hpp"

using namespace moco;

namespace {

RoleConfig demo_roles() {
  RoleConfig r;
  r.x_columns = {"age", "sex"};
  r.z_columns = {"sev"};
  r.y_columns = {"r1", "r2"};
  return r;
}

}  // namespace

TEST_CASE("cohort csv round-trips bit-identically for finite decimals") {
  const std::string csv =
      "a,m,delta,age,sex,sev,r1,r2\n"
      "0,0.1,1,9.25,1,0,0.125,-0.5\n"
      "1,0.30000000000000004,0,10.5,0,11.25,0.1,0.2\n"
      "0,0.2,1,8,1,0,-0.375,0.0625\n"
      "1,0.15,1,12,0,14,0.75,-1.5\n";
  auto roles = demo_roles();
  auto c = parse_cohort_csv(csv, roles);
  REQUIRE(c.n() == 4);
  CHECK(c.m[1] == 0.30000000000000004);
  CHECK(c.x(0, 0) == 9.25);
  auto out = cohort_to_csv(c);
  auto c2 = parse_cohort_csv(out, roles);
  CHECK(cohort_to_csv(c2) == out);
  CHECK(c2.y == c.y);
  CHECK(c2.m == c.m);
}

TEST_CASE("missing columns are reported by name") {
  auto roles = demo_roles();
  const std::string csv = "a,m,age,sev,r1,r2\n0,0.1,9,0,0.1,0.2\n";
  CHECK_THROWS_WITH_AS(parse_cohort_csv(csv, roles),
                       doctest::Contains("sex"), validation_error);
}

TEST_CASE("ragged rows are rejected") {
  auto roles = demo_roles();
  const std::string csv =
      "a,m,delta,age,sex,sev,r1,r2\n"
      "0,0.1,1,9.25,1,0,0.125\n";
  CHECK_THROWS_AS(parse_cohort_csv(csv, roles), validation_error);
}

TEST_CASE("absent delta column yields NaN marker for later derivation") {
  RoleConfig roles;
  roles.y_columns = {"r1"};
  auto c = parse_cohort_csv("a,m,r1\n0,0.1,0.5\n1,0.2,0.6\n", roles);
  CHECK(std::isnan(c.delta[0]));
}

TEST_CASE("config parsing: sections, comments, lists, and typed getters") {
  const std::string text =
      "# comment line\n"
      "[roles]\n"
      "x = age, sex\n"
      "z = sev\n"
      "y = r1, r2\n"
      "\n"
      "[estimator]\n"
      "cross_fit = true\n"
      "outer_folds = 5\n"
      "[estimator.density]\n"
      "bins = 20   # trailing comment\n"
      "floor = 1e-3\n"
      "[inference]\n"
      "alpha = 0.05\n";
  auto cfg = parse_config_text(text);
  CHECK(cfg.get_list("roles", "x") == std::vector<std::string>{"age", "sex"});
  CHECK(cfg.get_bool("estimator", "cross_fit", false));
  CHECK(cfg.get_int("estimator", "outer_folds", 0) == 5);
  CHECK(cfg.get_int("estimator.density", "bins", 0) == 20);
  CHECK(cfg.get_num("estimator.density", "floor", 0) == 1e-3);
  CHECK(cfg.get_num("inference", "alpha", 0) == 0.05);
  CHECK(cfg.get_num("inference", "absent", 0.37) == 0.37);

  auto reparsed = parse_config_text(cfg.to_text());
  CHECK(reparsed.sections == cfg.sections);
}

TEST_CASE("config errors: bad boolean and malformed lines") {
  auto cfg = parse_config_text("[a]\nflag = maybe\n");
  CHECK_THROWS_AS(cfg.get_bool("a", "flag", false), io_error);
  CHECK_THROWS_AS(parse_config_text("[a\n"), io_error);
  CHECK_THROWS_AS(parse_config_text("[a]\nnot a pair\n"), io_error);
}

TEST_CASE("digest is stable and content-sensitive") {
  CHECK(hex_digest("abc") == hex_digest("abc"));
  CHECK(hex_digest("abc") != hex_digest("abd"));
  CHECK(hex_digest("").size() == 16);
}
