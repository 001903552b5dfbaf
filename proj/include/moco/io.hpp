// Copyright 2026 The MoCo Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <string>
#include <vector>

#include "moco/data.hpp"

namespace moco {

// ---------- csv ----------
// Header required: `a`, `m`, optional `delta`, plus the x/z/y columns named in
// the role config.  Unlisted columns are ignored.  No quoting: cells are plain
// numbers, labels must not contain commas.

Cohort read_cohort_csv(const std::string& path, const RoleConfig& roles);
Cohort parse_cohort_csv(const std::string& text, const RoleConfig& roles);

void write_cohort_csv(const Cohort& cohort, const std::string& path);
std::string cohort_to_csv(const Cohort& cohort);

// ---------- config ----------
// Flat sectioned text: `[section]` headers, `key = value` lines, `#` comments.
// List values are comma-separated.

struct ConfigMap {
  std::map<std::string, std::map<std::string, std::string>> sections;

  bool has(const std::string& section, const std::string& key) const;
  std::string get(const std::string& section, const std::string& key,
                  const std::string& fallback) const;
  double get_num(const std::string& section, const std::string& key,
                 double fallback) const;
  long get_int(const std::string& section, const std::string& key,
               long fallback) const;
  bool get_bool(const std::string& section, const std::string& key,
                bool fallback) const;
  std::vector<std::string> get_list(const std::string& section,
                                    const std::string& key) const;
  void set(const std::string& section, const std::string& key,
           const std::string& value);
  std::string to_text() const;
};

ConfigMap parse_config_text(const std::string& text);
ConfigMap read_config_file(const std::string& path);

// ---------- files & digests ----------

std::string read_text_file(const std::string& path);           // io_error
void write_text_file(const std::string& path, const std::string& text);
std::string hex_digest(const std::string& bytes);              // fnv-1a, 16 hex chars

std::vector<std::string> split(const std::string& s, char sep);
std::string trim(const std::string& s);
double parse_number(const std::string& s);                     // io_error on junk

}  // namespace moco
