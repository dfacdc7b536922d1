#include "biasmech/cohort_csv.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "biasmech/errors.hpp"

namespace biasmech {

namespace {

std::string fmt_value(double v) {
  if (v == 0.0) return "0";
  if (v == 1.0) return "1";
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void fail(const std::string& name, std::size_t line, const std::string& what) {
  throw DataError(name + " line " + std::to_string(line) + ": " + what);
}

std::optional<int> parse_flag(const std::string& v, const std::string& col, const std::string& name,
                              std::size_t line) {
  if (v.empty()) return std::nullopt;
  if (v == "0") return 0;
  if (v == "1") return 1;
  fail(name, line, "column " + col + " must be 0, 1 or empty, got '" + v + "'");
}

double parse_real(const std::string& v, const std::string& col, const std::string& name,
                  std::size_t line) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size() || !std::isfinite(x)) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    fail(name, line, "column " + col + " is not a number: '" + v + "'");
  }
}

struct Layout {
  std::size_t r, s, a, y;
  std::vector<std::size_t> x;
  std::vector<std::string> x_names;
};

Layout resolve(const CsvTable& t, const ColumnMap& m, const std::string& name) {
  auto find = [&](const std::string& col) {
    const auto it = std::find(t.header.begin(), t.header.end(), col);
    if (it == t.header.end()) throw DataError(name + ": missing column '" + col + "'");
    return static_cast<std::size_t>(it - t.header.begin());
  };
  for (const std::string& h : t.header) {
    if (h == "u") throw DataError(name + ": latent column 'u' is not accepted in ingested data");
  }
  Layout l{find(m.r), find(m.s), find(m.a), find(m.y), {}, {}};
  if (m.covariates.empty()) {
    for (std::size_t i = 0; i < t.header.size(); ++i) {
      if (i == l.r || i == l.s || i == l.a || i == l.y) continue;
      l.x.push_back(i);
      l.x_names.push_back(t.header[i]);
    }
  } else {
    for (const std::string& c : m.covariates) {
      l.x.push_back(find(c));
      l.x_names.push_back(c);
    }
  }
  return l;
}

bool all_binary(const CsvTable& t, const Layout& l) {
  if (l.x.size() > kMaxEnumerableDim) return false;
  for (const auto& row : t.rows) {
    for (std::size_t j : l.x) {
      if (row[j] != "0" && row[j] != "1") return false;
    }
  }
  return true;
}

CsvTable read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  return read_csv_table(in, path);
}

}  // namespace

void write_cohort_csv(std::ostream& out, const Cohort& c) {
  out << "r,s,a,y";
  for (std::size_t j = 0; j < c.dim(); ++j) out << ",x_" << j;
  out << '\n';
  for (std::size_t i = 0; i < c.size(); ++i) {
    out << c.r() << ',' << c.s(i) << ',';
    if (auto a = c.a(i)) out << *a;
    out << ',';
    if (auto y = c.y(i)) out << *y;
    for (double v : c.x(i)) out << ',' << fmt_value(v);
    out << '\n';
  }
}

void write_cohort_csv(const std::string& path, const Cohort& cohort) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  write_cohort_csv(out, cohort);
}

void write_latent_csv(std::ostream& out, const Cohort& c) {
  const LatentColumns& l = c.oracle_view();
  out << "u,a,y\n";
  for (std::size_t i = 0; i < c.size(); ++i) {
    out << fmt_value(l.u[i]) << ',' << int(l.a[i]) << ',' << int(l.y[i]) << '\n';
  }
}

CsvTable read_csv_table(std::istream& in, const std::string& name) {
  CsvTable t;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (lineno == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
    if (line.empty()) continue;
    std::vector<std::string> f = split(line);
    for (auto& v : f) v = trim(v);
    if (t.header.empty()) {
      t.header = std::move(f);
      continue;
    }
    if (f.size() != t.header.size()) {
      fail(name, lineno, "expected " + std::to_string(t.header.size()) + " fields, got " +
                             std::to_string(f.size()));
    }
    t.rows.push_back(std::move(f));
    t.line.push_back(lineno);
  }
  if (t.header.empty()) throw DataError(name + ": missing header");
  return t;
}

Cohort cohort_from_table(const CsvTable& t, Population population, const ColumnMap& columns,
                         std::optional<CovariateType> type, const std::string& name) {
  const Layout l = resolve(t, columns, name);
  const CovariateType ct =
      type.value_or(all_binary(t, l) ? CovariateType::Binary : CovariateType::Continuous);
  if (ct == CovariateType::Binary && l.x.size() > kMaxEnumerableDim) {
    throw DataError(name + ": binary covariates limited to d <= 20");
  }
  const int want_r = population == Population::RCT ? 1 : 0;
  Cohort cohort(population, l.x.size(), ct);
  std::vector<double> x(l.x.size());
  for (std::size_t k = 0; k < t.rows.size(); ++k) {
    const auto& row = t.rows[k];
    const std::size_t line = t.line[k];
    const auto r = parse_flag(row[l.r], "r", name, line);
    if (!r || *r != want_r) {
      fail(name, line, "column r must be " + std::to_string(want_r) + " in the " +
                           std::string(to_string(population)) + " file");
    }
    const auto s = parse_flag(row[l.s], "s", name, line);
    if (!s) fail(name, line, "column s must not be empty");
    if (population == Population::RCT && *s != 1) fail(name, line, "RCT rows must have s = 1");
    const auto a = parse_flag(row[l.a], "a", name, line);
    const auto y = parse_flag(row[l.y], "y", name, line);
    for (std::size_t j = 0; j < l.x.size(); ++j) {
      x[j] = parse_real(row[l.x[j]], l.x_names[j], name, line);
    }
    try {
      cohort.add_row(x, *s, a, y);
    } catch (const DataError& e) {
      fail(name, line, e.what());
    }
  }
  return cohort;
}

Cohort read_cohort_csv(std::istream& in, Population population, const ColumnMap& columns,
                       std::optional<CovariateType> type, const std::string& name) {
  return cohort_from_table(read_csv_table(in, name), population, columns, type, name);
}

std::pair<Cohort, Cohort> load_cohorts(const IngestedDataset& spec) {
  const CsvTable rct = read_file(spec.rct_path);
  const CsvTable os = read_file(spec.os_path);
  const Layout lr = resolve(rct, spec.columns, spec.rct_path);
  const Layout lo = resolve(os, spec.columns, spec.os_path);
  if (lr.x_names != lo.x_names) {
    throw DataError("RCT and OS files have different covariate columns");
  }
  auto type = spec.covariate_type;
  if (!type) {
    type = all_binary(rct, lr) && all_binary(os, lo) ? CovariateType::Binary
                                                      : CovariateType::Continuous;
  }
  return {cohort_from_table(rct, Population::RCT, spec.columns, type, spec.rct_path),
          cohort_from_table(os, Population::OS, spec.columns, type, spec.os_path)};
}

}  // namespace biasmech
