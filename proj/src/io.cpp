// Copyright 2026 The MoCo Authors
// SPDX-License-Identifier: Apache-2.0

#include "moco/io.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace moco {

// ---------- small string utilities ----------

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto pos = s.find(sep, start);
    if (pos == std::string::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double parse_number(const std::string& s) {
  const std::string t = trim(s);
  if (t.empty()) throw io_error("empty numeric cell");
  char* end = nullptr;
  const double v = std::strtod(t.c_str(), &end);
  if (end != t.c_str() + t.size())
    throw io_error("cannot parse number: '" + t + "'");
  return v;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot write " + path);
  out << text;
  if (!out) throw io_error("write failure on " + path);
}

std::string hex_digest(const std::string& bytes) {
  const std::uint64_t h = fnv1a(bytes.data(), bytes.size());
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------- csv ----------

namespace {

std::vector<std::string> header_fields(const std::string& line) {
  auto raw = split(line, ',');
  for (auto& f : raw) f = trim(f);
  return raw;
}

Eigen::Index find_column(const std::vector<std::string>& header,
                         const std::string& name) {
  auto it = std::find(header.begin(), header.end(), name);
  return it == header.end() ? -1 : Eigen::Index(it - header.begin());
}

}  // namespace

Cohort parse_cohort_csv(const std::string& text, const RoleConfig& roles) {
  auto lines = split(text, '\n');
  while (!lines.empty() && trim(lines.back()).empty()) lines.pop_back();
  if (lines.empty()) throw validation_error("csv is empty");

  const auto header = header_fields(lines[0]);
  std::vector<std::string> missing;
  auto need = [&](const std::string& name) {
    auto j = find_column(header, name);
    if (j < 0) missing.push_back(name);
    return j;
  };
  const auto col_a = need("a");
  const auto col_m = need("m");
  const auto col_delta = find_column(header, "delta");
  std::vector<Eigen::Index> col_x, col_z, col_y;
  for (const auto& nm : roles.x_columns) col_x.push_back(need(nm));
  for (const auto& nm : roles.z_columns) col_z.push_back(need(nm));
  for (const auto& nm : roles.y_columns) col_y.push_back(need(nm));
  if (!missing.empty()) {
    std::string msg = "csv header is missing required columns:";
    for (const auto& nm : missing) msg += " " + nm;
    throw validation_error(msg);
  }

  const auto n = Eigen::Index(lines.size()) - 1;
  Cohort c;
  c.a.resize(n);
  c.m.resize(n);
  c.delta = VectorXd::Zero(n);
  c.x.resize(n, Eigen::Index(col_x.size()));
  c.z.resize(n, Eigen::Index(col_z.size()));
  c.y.resize(n, Eigen::Index(col_y.size()));
  c.x_names = roles.x_columns;
  c.z_names = roles.z_columns;
  c.y_names = roles.y_columns;

  for (Eigen::Index i = 0; i < n; ++i) {
    auto cells = split(lines[std::size_t(i) + 1], ',');
    if (cells.size() != header.size())
      throw validation_error("row " + std::to_string(i + 1) + " has " +
                             std::to_string(cells.size()) + " cells, header has " +
                             std::to_string(header.size()));
    auto cell = [&](Eigen::Index j) { return parse_number(cells[std::size_t(j)]); };
    c.a[i] = cell(col_a);
    c.m[i] = cell(col_m);
    if (col_delta >= 0) c.delta[i] = cell(col_delta);
    for (std::size_t j = 0; j < col_x.size(); ++j) c.x(i, Eigen::Index(j)) = cell(col_x[j]);
    for (std::size_t j = 0; j < col_z.size(); ++j) c.z(i, Eigen::Index(j)) = cell(col_z[j]);
    for (std::size_t j = 0; j < col_y.size(); ++j) c.y(i, Eigen::Index(j)) = cell(col_y[j]);
  }
  if (col_delta < 0) c.delta.setConstant(std::nan(""));  // caller must derive
  return c;
}

Cohort read_cohort_csv(const std::string& path, const RoleConfig& roles) {
  return parse_cohort_csv(read_text_file(path), roles);
}

std::string cohort_to_csv(const Cohort& cohort) {
  std::ostringstream out;
  out << "a,m,delta";
  auto emit_names = [&](const std::vector<std::string>& names, Eigen::Index cols,
                        const char* prefix) {
    for (Eigen::Index j = 0; j < cols; ++j)
      out << ','
          << (j < Eigen::Index(names.size()) ? names[std::size_t(j)]
                                             : prefix + std::to_string(j + 1));
  };
  emit_names(cohort.x_names, cohort.x.cols(), "x");
  emit_names(cohort.z_names, cohort.z.cols(), "z");
  emit_names(cohort.y_names, cohort.y.cols(), "y");
  out << '\n';
  for (Eigen::Index i = 0; i < cohort.n(); ++i) {
    out << fmt_double(cohort.a[i]) << ',' << fmt_double(cohort.m[i]) << ','
        << fmt_double(cohort.delta[i]);
    for (Eigen::Index j = 0; j < cohort.x.cols(); ++j)
      out << ',' << fmt_double(cohort.x(i, j));
    for (Eigen::Index j = 0; j < cohort.z.cols(); ++j)
      out << ',' << fmt_double(cohort.z(i, j));
    for (Eigen::Index j = 0; j < cohort.y.cols(); ++j)
      out << ',' << fmt_double(cohort.y(i, j));
    out << '\n';
  }
  return out.str();
}

void write_cohort_csv(const Cohort& cohort, const std::string& path) {
  write_text_file(path, cohort_to_csv(cohort));
}

// ---------- config ----------

bool ConfigMap::has(const std::string& section, const std::string& key) const {
  auto s = sections.find(section);
  return s != sections.end() && s->second.count(key) > 0;
}

std::string ConfigMap::get(const std::string& section, const std::string& key,
                           const std::string& fallback) const {
  auto s = sections.find(section);
  if (s == sections.end()) return fallback;
  auto k = s->second.find(key);
  return k == s->second.end() ? fallback : k->second;
}

double ConfigMap::get_num(const std::string& section, const std::string& key,
                          double fallback) const {
  return has(section, key) ? parse_number(get(section, key, "")) : fallback;
}

long ConfigMap::get_int(const std::string& section, const std::string& key,
                        long fallback) const {
  return has(section, key) ? std::lround(parse_number(get(section, key, "")))
                           : fallback;
}

bool ConfigMap::get_bool(const std::string& section, const std::string& key,
                         bool fallback) const {
  if (!has(section, key)) return fallback;
  const auto v = get(section, key, "");
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw io_error("config [" + section + "] " + key + ": not a boolean: " + v);
}

std::vector<std::string> ConfigMap::get_list(const std::string& section,
                                             const std::string& key) const {
  std::vector<std::string> out;
  for (auto& item : split(get(section, key, ""), ',')) {
    auto t = trim(item);
    if (!t.empty()) out.push_back(t);
  }
  return out;
}

void ConfigMap::set(const std::string& section, const std::string& key,
                    const std::string& value) {
  sections[section][key] = value;
}

std::string ConfigMap::to_text() const {
  std::ostringstream out;
  for (const auto& [name, entries] : sections) {
    out << '[' << name << "]\n";
    for (const auto& [k, v] : entries) out << k << " = " << v << '\n';
    out << '\n';
  }
  return out.str();
}

ConfigMap parse_config_text(const std::string& text) {
  ConfigMap cfg;
  std::string section;
  std::size_t lineno = 0;
  for (const auto& raw : split(text, '\n')) {
    ++lineno;
    auto line = trim(raw);
    auto hash = line.find('#');
    if (hash != std::string::npos) line = trim(line.substr(0, hash));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw io_error("config line " + std::to_string(lineno) +
                       ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      cfg.sections[section];
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw io_error("config line " + std::to_string(lineno) +
                     ": expected key = value");
    cfg.sections[section][trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return cfg;
}

ConfigMap read_config_file(const std::string& path) {
  return parse_config_text(read_text_file(path));
}

}  // namespace moco
