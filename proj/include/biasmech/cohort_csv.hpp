#pragma once

// Cohort CSV interchange: header r,s,a,y,x_0,...,x_{d-1}; a and y are empty
// when s = 0. Latent columns of synthetic cohorts go to a separate sidecar.

#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "biasmech/synthgen.hpp"

namespace biasmech {

struct ColumnMap {
  std::string r = "r", s = "s", a = "a", y = "y";
  // Empty: every remaining column is a covariate, in file order.
  std::vector<std::string> covariates;
};

struct IngestedDataset {
  std::string rct_path;
  std::string os_path;
  ColumnMap columns;
  // Unset: binary when every covariate value is 0/1 and d <= 20.
  std::optional<CovariateType> covariate_type;
};

void write_cohort_csv(std::ostream& out, const Cohort& cohort);
void write_cohort_csv(const std::string& path, const Cohort& cohort);
// Sidecar with columns u,a,y holding the unmasked latent values.
void write_latent_csv(std::ostream& out, const Cohort& cohort);

// Parsed but untyped table; `name` labels error messages.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line;  // source line of each row
};
CsvTable read_csv_table(std::istream& in, const std::string& name);

Cohort cohort_from_table(const CsvTable& table, Population population, const ColumnMap& columns,
                         std::optional<CovariateType> type, const std::string& name);
Cohort read_cohort_csv(std::istream& in, Population population, const ColumnMap& columns = {},
                       std::optional<CovariateType> type = std::nullopt,
                       const std::string& name = "cohort");

// Both files share covariate columns and typing.
std::pair<Cohort, Cohort> load_cohorts(const IngestedDataset& spec);

}  // namespace biasmech
