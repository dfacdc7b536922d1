#pragma once

// End-to-end experiments: one seeded run (generate, fit, score, classify),
// seed batches, dimension / sample-size grids and the selection-correction
// replica, plus their CSV / JSON outputs.

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "biasmech/nuisance.hpp"
#include "biasmech/parallel.hpp"
#include "biasmech/signals.hpp"
#include "biasmech/synthgen.hpp"

namespace biasmech {

using Components = std::vector<MechanismKind>;

struct GridAxes {
  std::vector<std::size_t> d{5, 6, 7};
  std::vector<std::size_t> n_rct{2000, 50000};
  bool operator==(const GridAxes&) const = default;
};

struct ExperimentConfig {
  std::string mode = "batch";
  Components mechanism{MechanismKind::Confounding};
  std::vector<Components> mechanisms{{MechanismKind::NoBias},
                                     {MechanismKind::Transportability},
                                     {MechanismKind::Confounding},
                                     {MechanismKind::SelectionType1},
                                     {MechanismKind::SelectionType2}};
  std::size_t d = 6;
  std::size_t n_rct = 50000;
  std::size_t n_os = 50000;
  std::size_t n_val = 2000;
  UModel u_model = UModel::Binary;
  std::optional<SelectionTable> selection_table;
  std::array<double, 2> p_range{0.2, 0.5};
  double alpha = 0.01;
  ModelKind model = ModelKind::FrequencyTable;
  std::size_t n_seeds = 200;
  std::uint64_t base_seed = 1;
  double smoothing = 0.5;
  double l2 = 1.0;
  GridAxes grid;
  std::vector<double> oracle_p{0.2, 0.3, 0.4, 0.5};
  std::size_t n_mc = 1000000;

  // Table used when a mechanism includes SelectionType2.
  SelectionTable table_or_default() const {
    return selection_table.value_or(SelectionTable::collider_default());
  }
  void validate() const;
  bool operator==(const ExperimentConfig&) const = default;
};

struct RunRecord {
  std::uint64_t seed = 0;
  double p = 0;
  std::array<double, 3> r{};
  std::array<double, 3> p_value{1, 1, 1};
  std::array<bool, 3> defined{true, true, true};
  Verdict verdict = Verdict::Indeterminate;
  double mean_abs_b1 = 0;
  std::size_t empty_cells = 0;
  bool nonconverged = false;
  std::string error;  // non-empty when the run failed

  bool failed() const { return !error.empty(); }
  bool operator==(const RunRecord&) const = default;
};

struct BatchSummary {
  std::string mechanism;
  std::size_t d = 0;
  std::size_t n_rct = 0;
  std::size_t n_runs = 0;
  std::size_t n_failed = 0;
  double alpha = 0.01;
  std::optional<Verdict> expected;
  double match_fraction = 0;             // verdict == expected, successful runs
  double all_nonsignificant_fraction = 0;
  std::array<double, 3> significant_fraction{};
  std::array<double, 3> median_r{};
  double median_power = 0;

  nlohmann::json to_json() const;
};

struct Batch {
  BatchSummary summary;
  std::vector<RunRecord> records;
};

// Pure aggregation over records, in the order given.
BatchSummary summarize(const std::vector<RunRecord>& records, const Components& mechanism,
                       std::size_t d, std::size_t n_rct, double alpha);

// min over the channels a mechanism is expected to light up of -log10(p)
// (at most 5); NaN for NoBias and combinations.
double power_score(const RunRecord& rec, const Components& mechanism);

struct DiagnoseOptions {
  ModelKind model = ModelKind::FrequencyTable;
  FitOptions fit;
  ScoreOptions score;
};

struct DiagnoseResult {
  SignalReport report;
  double mean_abs_b1 = 0;
  std::size_t empty_cells = 0;
  bool nonconverged = false;
};

// Fits g1 on the RCT, the OS nuisances on os_train, and scores os_val.
DiagnoseResult diagnose_split(const Cohort& rct, const Cohort& os_train, const Cohort& os_val,
                              const DiagnoseOptions& opt);

DiagnoseOptions diagnose_options(const ExperimentConfig& config);

// Synthetic cohorts of one seeded run. The OS cohort has n_os + n_val rows;
// the last n_val rows are the validation split.
struct SimulatedRun {
  double p = 0;
  MechanismSpec spec;
  ProbabilityTables tables{0, UModel::Binary};
  Cohort rct{Population::RCT, 0};
  Cohort os{Population::OS, 0};
};
SimulatedRun simulate(const ExperimentConfig& config, const Components& mechanism,
                      std::uint64_t seed);

RunRecord run_single(const ExperimentConfig& config, std::uint64_t seed);
RunRecord run_single(const ExperimentConfig& config, const Components& mechanism,
                     std::uint64_t seed);

// Seeds base_seed .. base_seed + n_seeds - 1; failures are recorded, not thrown.
Batch run_batch(const ExperimentConfig& config, Execution exec = Execution::Parallel);
Batch run_batch(const ExperimentConfig& config, const Components& mechanism,
                Execution exec = Execution::Parallel);

struct GridCell {
  Components mechanism;
  std::size_t d = 0;
  std::size_t n_rct = 0;
  Batch batch;
};
std::vector<GridCell> run_grid(const ExperimentConfig& config,
                               Execution exec = Execution::Parallel);

struct WhiReplica {
  Batch combined;   // SelectionType2 + Transportability
  Batch corrected;  // same with every selection probability at 0.99
  std::array<double, 3> median_shift{};  // corrected - combined median r
  nlohmann::json to_json() const;
};
// Default table (0.9, 0.9, 0.3, 0.1) unless the config carries one.
WhiReplica run_whi_replica(const ExperimentConfig& config, Execution exec = Execution::Parallel);

std::string format_mechanism(const Components& mechanism);
// "Confounding" or a '+'-joined combination such as "SelectionType2+Transportability".
Components parse_components(std::string_view text);

void write_runs_csv(std::ostream& out, const std::vector<RunRecord>& records);
std::vector<RunRecord> read_runs_csv(std::istream& in);
void write_grid_csv(std::ostream& out, const std::vector<GridCell>& grid);

}  // namespace biasmech
