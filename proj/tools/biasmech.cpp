// biasmech command line: simulate, diagnose, oracle, batch, grid, whi-replica.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "biasmech/analytic.hpp"
#include "biasmech/cohort_csv.hpp"
#include "biasmech/config.hpp"
#include "biasmech/diagnose.hpp"
#include "biasmech/errors.hpp"
#include "biasmech/harness.hpp"

namespace fs = std::filesystem;
using namespace biasmech;

namespace {

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  return out;
}

SelectionTable table_from(const std::vector<double>& v) {
  if (v.size() != 4) throw ConfigError("--table expects four values p00 p01 p10 p11");
  return {{v[0], v[1], v[2], v[3]}};
}

ExperimentConfig load_config(const std::string& path, const std::string& mode) {
  ExperimentConfig c = path.empty() ? ExperimentConfig{} : parse_config(path);
  c.mode = mode;
  return c;
}

void emit(const std::string& out_path, const std::string& text) {
  if (out_path.empty()) {
    std::cout << text;
  } else {
    open_out(out_path) << text;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bias-mechanism simulator and covariance diagnostics"};
  app.require_subcommand(1);

  // simulate
  auto* sim = app.add_subcommand("simulate", "write a synthetic RCT / OS cohort pair as CSV");
  std::string sim_config, sim_mech = "Confounding", sim_dir = ".", sim_umodel;
  std::uint64_t sim_seed = 1;
  std::optional<std::size_t> sim_d, sim_nrct, sim_nos, sim_nval;
  std::vector<double> sim_table;
  bool sim_latent = false;
  sim->add_option("--config", sim_config, "JSON config");
  sim->add_option("--mechanism", sim_mech, "kind or '+'-joined combination");
  sim->add_option("--seed", sim_seed);
  sim->add_option("--d", sim_d);
  sim->add_option("--n-rct", sim_nrct);
  sim->add_option("--n-os", sim_nos);
  sim->add_option("--n-val", sim_nval);
  sim->add_option("--u-model", sim_umodel, "binary | continuous");
  sim->add_option("--table", sim_table, "type-2 selection table p00 p01 p10 p11")->expected(4);
  sim->add_option("--out-dir", sim_dir);
  sim->add_flag("--latent", sim_latent, "also write the latent sidecars");

  // diagnose
  auto* diag = app.add_subcommand("diagnose", "score an RCT / OS pair and classify the bias");
  std::string rct_path, os_path, diag_model = "logistic", diag_out;
  double diag_alpha = 0.01, diag_smoothing = 0.5, diag_l2 = 1.0, diag_train = 0.8;
  std::uint64_t diag_seed = 0;
  std::size_t diag_perm = 0;
  std::optional<std::size_t> diag_tail;
  diag->add_option("--rct", rct_path)->required();
  diag->add_option("--os", os_path)->required();
  diag->add_option("--alpha", diag_alpha);
  diag->add_option("--model", diag_model, "freq | logistic");
  diag->add_option("--smoothing", diag_smoothing);
  diag->add_option("--l2", diag_l2);
  diag->add_option("--seed", diag_seed, "train / validation shuffle seed");
  diag->add_option("--train-fraction", diag_train);
  diag->add_option("--val-tail", diag_tail, "use the last N OS rows as validation");
  diag->add_option("--permutations", diag_perm, "permutation p-values with N shuffles");
  diag->add_option("--out", diag_out);

  // oracle
  auto* orc = app.add_subcommand("oracle", "Monte-Carlo theoretical covariance signals");
  std::vector<std::string> orc_mech{"all"};
  std::vector<double> orc_p{0.2, 0.3, 0.4, 0.5}, orc_table;
  std::size_t orc_mc = 1000000;
  std::uint64_t orc_seed = 1;
  std::string orc_out;
  bool orc_serial = false;
  orc->add_option("--mechanism", orc_mech, "kinds, combinations, or 'all'");
  orc->add_option("--p", orc_p);
  orc->add_option("--mc", orc_mc);
  orc->add_option("--seed", orc_seed);
  orc->add_option("--table", orc_table, "type-2 selection table p00 p01 p10 p11")->expected(4);
  orc->add_option("--out", orc_out);
  orc->add_flag("--serial", orc_serial);

  // batch / grid / whi-replica
  std::string run_config, run_dir = ".";
  bool run_serial = false;
  auto* bat = app.add_subcommand("batch", "seeded batch of end-to-end runs");
  auto* grd = app.add_subcommand("grid", "mechanism x d x n_rct sweep");
  auto* whi = app.add_subcommand("whi-replica", "selection-correction replica");
  for (auto* sc : {bat, grd, whi}) {
    sc->add_option("--config", run_config, "JSON config");
    sc->add_option("--out-dir", run_dir);
    sc->add_flag("--serial", run_serial, "disable the OpenMP seed loop");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*sim) {
      ExperimentConfig c = load_config(sim_config, "simulate");
      if (sim_d) c.d = *sim_d;
      if (sim_nrct) c.n_rct = *sim_nrct;
      if (sim_nos) c.n_os = *sim_nos;
      if (sim_nval) c.n_val = *sim_nval;
      if (!sim_umodel.empty()) c.u_model = parse_u_model(sim_umodel);
      if (!sim_table.empty()) c.selection_table = table_from(sim_table);
      if (sim_config.empty() || sim->count("--mechanism")) c.mechanism = parse_components(sim_mech);
      c.validate();
      const SimulatedRun run = simulate(c, c.mechanism, sim_seed);
      const fs::path dir(sim_dir);
      auto rct = open_out(dir / "rct.csv");
      write_cohort_csv(rct, run.rct);
      auto os = open_out(dir / "os.csv");
      write_cohort_csv(os, run.os);
      if (sim_latent) {
        auto rl = open_out(dir / "rct_latent.csv");
        write_latent_csv(rl, run.rct);
        auto ol = open_out(dir / "os_latent.csv");
        write_latent_csv(ol, run.os);
      }
      std::cout << "mechanism=" << format_mechanism(c.mechanism) << " p=" << run.p
                << " n_rct=" << run.rct.size() << " n_os=" << run.os.size()
                << " (last " << c.n_val << " rows are validation)\n";
      return 0;
    }
    if (*diag) {
      IngestedDataset ds{rct_path, os_path, {}, std::nullopt};
      const auto [rct, os] = load_cohorts(ds);
      DiagnoseOptions opt;
      opt.model = parse_model_kind(diag_model);
      opt.fit.smoothing = diag_smoothing;
      opt.fit.l2 = diag_l2;
      opt.score.alpha = diag_alpha;
      opt.score.pearson.permutations = diag_perm;
      opt.score.pearson.seed = diag_seed;
      if (!(diag_alpha > 0 && diag_alpha < 1)) throw ConfigError("--alpha must lie in (0, 1)");
      SplitOptions split{diag_train, diag_seed, diag_tail};
      const Diagnosis d = diagnose(rct, os, opt, split);
      emit(diag_out, d.to_json().dump(2) + "\n");
      return 0;
    }
    if (*orc) {
      std::vector<Components> mechs;
      for (const std::string& m : orc_mech) {
        if (m == "all") {
          for (MechanismKind k : kPureKinds) mechs.push_back({k});
        } else {
          mechs.push_back(parse_components(m));
        }
      }
      std::optional<SelectionTable> table;
      if (!orc_table.empty()) table = table_from(orc_table);
      std::ostringstream csv;
      csv << "mechanism,p,rho_S,se_S,rho_A,se_A,rho_Y,se_Y\n";
      csv.precision(6);
      for (const Components& m : mechs) {
        SignalQuery q{m, std::nullopt};
        if (std::find(m.begin(), m.end(), MechanismKind::SelectionType2) != m.end()) {
          q.selection_table = table.value_or(SelectionTable::collider_default());
        }
        for (double p : orc_p) {
          const TheoreticalSignals t = theoretical_signals(
              q, p, orc_mc, orc_seed, orc_serial ? Execution::Serial : Execution::Parallel);
          csv << format_mechanism(m) << ',' << p;
          for (std::size_t k = 0; k < 3; ++k) {
            csv << ',';
            if (t.defined[k]) csv << t.rho[k];
            csv << ',';
            if (t.defined[k]) csv << t.se[k];
          }
          csv << '\n';
        }
      }
      emit(orc_out, csv.str());
      return 0;
    }
    const Execution exec = run_serial ? Execution::Serial : Execution::Parallel;
    const fs::path dir(run_dir);
    if (*bat) {
      const ExperimentConfig c = load_config(run_config, "batch");
      const Batch b = run_batch(c, exec);
      auto runs = open_out(dir / "runs.csv");
      write_runs_csv(runs, b.records);
      const std::string summary = b.summary.to_json().dump(2) + "\n";
      open_out(dir / "summary.json") << summary;
      std::cout << summary;
      return 0;
    }
    if (*grd) {
      const ExperimentConfig c = load_config(run_config, "grid");
      const std::vector<GridCell> g = run_grid(c, exec);
      std::ostringstream csv;
      write_grid_csv(csv, g);
      open_out(dir / "grid.csv") << csv.str();
      std::cout << csv.str();
      return 0;
    }
    if (*whi) {
      const ExperimentConfig c = load_config(run_config, "whi-replica");
      const WhiReplica w = run_whi_replica(c, exec);
      auto combined = open_out(dir / "runs_combined.csv");
      write_runs_csv(combined, w.combined.records);
      auto corrected = open_out(dir / "runs_corrected.csv");
      write_runs_csv(corrected, w.corrected.records);
      const std::string summary = w.to_json().dump(2) + "\n";
      open_out(dir / "summary.json") << summary;
      std::cout << summary;
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 4;
  }
  return 4;
}
