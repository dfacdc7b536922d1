#include "biasmech/harness.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <set>
#include <sstream>

#include "biasmech/errors.hpp"

namespace biasmech {

namespace {

constexpr const char* kRunsHeader =
    "seed,p,r_S,p_S,r_A,p_A,r_Y,p_Y,defined_S,defined_A,defined_Y,verdict,mean_abs_b1,"
    "empty_cells,nonconverged,error";

double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

std::string quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '\n') {
      out += ' ';
      continue;
    }
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

double parse_double(const std::string& s) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw DataError("bad number '" + s + "'");
    return v;
  } catch (const std::logic_error&) {
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    throw DataError("bad number '" + s + "'");
  }
}

std::uint64_t parse_u64(const std::string& s) {
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw DataError("bad integer '" + s + "'");
  return v;
}

std::vector<Channel> expected_channels(const Components& mechanism) {
  if (mechanism.size() != 1) return {};
  switch (mechanism.front()) {
    case MechanismKind::NoBias: return {};
    case MechanismKind::Transportability: return {Channel::Y};
    case MechanismKind::Confounding: return {Channel::A, Channel::Y};
    case MechanismKind::SelectionType1: return {Channel::S, Channel::Y};
    case MechanismKind::SelectionType2: return {Channel::S, Channel::Y};
  }
  return {};
}

std::optional<SelectionTable> table_for(const ExperimentConfig& config, const Components& mech) {
  if (std::find(mech.begin(), mech.end(), MechanismKind::SelectionType2) == mech.end()) {
    return std::nullopt;
  }
  return config.table_or_default();
}

}  // namespace

void ExperimentConfig::validate() const {
  static const std::set<std::string> modes = {"simulate", "diagnose", "oracle",
                                              "batch",    "grid",     "whi-replica"};
  if (!modes.contains(mode)) throw ConfigError("mode: unknown value '" + mode + "'");
  if (mechanism.empty()) throw ConfigError("mechanism: must name at least one kind");
  if (mechanisms.empty()) throw ConfigError("mechanisms: grid needs at least one mechanism");
  for (const auto& m : mechanisms) {
    if (m.empty()) throw ConfigError("mechanisms: empty combination");
  }
  if (d < 1 || d > kMaxEnumerableDim) throw ConfigError("d: must lie in [1, 20]");
  if (n_rct < 1) throw ConfigError("n_rct: must be positive");
  if (n_os < 1) throw ConfigError("n_os: must be positive");
  if (n_val < 3) throw ConfigError("n_val: must be at least 3");
  if (n_val > n_os) throw ConfigError("n_val: must not exceed n_os");
  if (!(p_range[0] > 0.1 && p_range[0] <= p_range[1] && p_range[1] <= 0.5)) {
    throw ConfigError("p_range: must satisfy 0.1 < lo <= hi <= 0.5");
  }
  if (!(alpha > 0 && alpha < 1)) throw ConfigError("alpha: must lie in (0, 1)");
  if (n_seeds < 1) throw ConfigError("n_seeds: must be positive");
  if (smoothing < 0) throw ConfigError("smoothing: must be non-negative");
  if (l2 < 0) throw ConfigError("l2: must be non-negative");
  if (selection_table) {
    for (double v : selection_table->p) {
      if (!(v >= 0 && v <= 1)) throw ConfigError("selection_table: entries must lie in [0, 1]");
    }
  }
  if (grid.d.empty() || grid.n_rct.empty()) throw ConfigError("grid: axes must be non-empty");
  for (std::size_t v : grid.d) {
    if (v < 1 || v > kMaxEnumerableDim) throw ConfigError("grid.d: values must lie in [1, 20]");
  }
  for (std::size_t v : grid.n_rct) {
    if (v < 1) throw ConfigError("grid.n_rct: values must be positive");
  }
  for (double p : oracle_p) {
    if (!(p > 0.1 && p <= 0.5)) throw ConfigError("oracle_p: values must lie in (0.1, 0.5]");
  }
  if (n_mc < 10000) throw ConfigError("n_mc: must be at least 10000");
}

std::string format_mechanism(const Components& mechanism) {
  std::string out;
  for (MechanismKind k : mechanism) {
    if (!out.empty()) out += '+';
    out += to_string(k);
  }
  return out;
}

Components parse_components(std::string_view text) {
  Components out;
  std::size_t start = 0;
  while (true) {
    const std::size_t plus = text.find('+', start);
    const std::string_view part = text.substr(start, plus == std::string_view::npos ? plus : plus - start);
    const MechanismKind k = parse_mechanism_kind(part);
    if (std::find(out.begin(), out.end(), k) == out.end()) out.push_back(k);
    if (plus == std::string_view::npos) break;
    start = plus + 1;
  }
  return out;
}

double power_score(const RunRecord& rec, const Components& mechanism) {
  const std::vector<Channel> want = expected_channels(mechanism);
  if (want.empty()) return std::numeric_limits<double>::quiet_NaN();
  if (rec.failed()) return 0.0;
  double score = 5.0;
  for (Channel c : want) {
    const auto k = static_cast<std::size_t>(c);
    const double s = rec.defined[k] && rec.r[k] > 0 ? -std::log10(rec.p_value[k]) : 0.0;
    score = std::min(score, s);
  }
  return std::clamp(score, 0.0, 5.0);
}

BatchSummary summarize(const std::vector<RunRecord>& records, const Components& mechanism,
                       std::size_t d, std::size_t n_rct, double alpha) {
  BatchSummary s;
  s.mechanism = format_mechanism(mechanism);
  s.d = d;
  s.n_rct = n_rct;
  s.alpha = alpha;
  s.n_runs = records.size();
  if (mechanism.size() == 1) s.expected = expected_verdict(mechanism.front());
  std::size_t ok = 0, match = 0, all_ns = 0;
  std::array<std::size_t, 3> sig{};
  std::array<std::vector<double>, 3> rs;
  std::vector<double> power;
  for (const RunRecord& rec : records) {
    if (rec.failed()) {
      ++s.n_failed;
      continue;
    }
    ++ok;
    if (s.expected && rec.verdict == *s.expected) ++match;
    bool any = false;
    for (std::size_t k = 0; k < 3; ++k) {
      const bool is_sig = rec.defined[k] && rec.p_value[k] < alpha;
      sig[k] += is_sig;
      any = any || is_sig;
      if (rec.defined[k]) rs[k].push_back(rec.r[k]);
    }
    all_ns += !any;
    const double pw = power_score(rec, mechanism);
    if (!std::isnan(pw)) power.push_back(pw);
  }
  const double denom = ok > 0 ? static_cast<double>(ok) : 1.0;
  s.match_fraction = static_cast<double>(match) / denom;
  s.all_nonsignificant_fraction = static_cast<double>(all_ns) / denom;
  for (std::size_t k = 0; k < 3; ++k) {
    s.significant_fraction[k] = static_cast<double>(sig[k]) / denom;
    s.median_r[k] = median(rs[k]);
  }
  s.median_power = median(power);
  return s;
}

nlohmann::json BatchSummary::to_json() const {
  auto num = [](double v) { return std::isnan(v) ? nlohmann::json() : nlohmann::json(v); };
  nlohmann::json j;
  j["mechanism"] = mechanism;
  j["d"] = d;
  j["n_rct"] = n_rct;
  j["n_runs"] = n_runs;
  j["n_failed"] = n_failed;
  j["alpha"] = alpha;
  j["expected"] = expected ? nlohmann::json(std::string(to_string(*expected))) : nlohmann::json();
  j["match_fraction"] = expected ? nlohmann::json(match_fraction) : nlohmann::json();
  j["all_nonsignificant_fraction"] = all_nonsignificant_fraction;
  for (Channel c : kChannels) {
    const auto k = static_cast<std::size_t>(c);
    j["significant_fraction"][std::string(to_string(c))] = significant_fraction[k];
    j["median_r"][std::string(to_string(c))] = num(median_r[k]);
  }
  j["median_power"] = num(median_power);
  return j;
}

DiagnoseOptions diagnose_options(const ExperimentConfig& config) {
  DiagnoseOptions opt;
  opt.model = config.model;
  opt.fit.smoothing = config.smoothing;
  opt.fit.l2 = config.l2;
  opt.score.alpha = config.alpha;
  return opt;
}

DiagnoseResult diagnose_split(const Cohort& rct, const Cohort& os_train, const Cohort& os_val,
                              const DiagnoseOptions& opt) {
  if (os_train.dim() != os_val.dim()) throw DataError("OS splits differ in covariate dimension");
  const BiasEstimate bias = estimate_bias(rct, os_train, opt.model, opt.fit);
  const Nuisances eta = fit_nuisances(os_train, opt.model, opt.fit);
  DiagnoseResult out;
  out.report = score_signals(bias, eta, os_val, opt.score);
  double total = 0;
  for (std::size_t i = 0; i < os_val.size(); ++i) total += std::abs(bias.b1(os_val, i));
  out.mean_abs_b1 = os_val.size() > 0 ? total / static_cast<double>(os_val.size()) : 0.0;
  for (const FittedEstimator* e : {&bias.g1_hat, &bias.f1_hat, &eta.eta_s, &eta.eta_a, &eta.eta_y}) {
    out.empty_cells += e->unsupported_cells().size();
    if (e->kind() == ModelKind::Logistic && !e->converged()) out.nonconverged = true;
  }
  if (out.empty_cells > 0) {
    out.report.flags.push_back("empty cells: " + std::to_string(out.empty_cells) +
                               " training strata had no rows");
  }
  if (out.nonconverged) out.report.flags.push_back("logistic fit did not converge");
  return out;
}

SimulatedRun simulate(const ExperimentConfig& config, const Components& mechanism,
                      std::uint64_t seed) {
  Rng law_rng = Rng::substream(seed, 0);
  Rng rct_rng = Rng::substream(seed, 1);
  Rng os_rng = Rng::substream(seed, 2);
  SimulatedRun run;
  run.p = law_rng.uniform(config.p_range[0], config.p_range[1]);
  run.spec = make_mechanism(mechanism, config.d, config.u_model, run.p, table_for(config, mechanism),
                            law_rng);
  run.tables = build_tables(run.spec, config.d, law_rng);
  run.rct = generate_cohort(run.tables, run.spec, Population::RCT, config.n_rct, rct_rng);
  run.os = generate_cohort(run.tables, run.spec, Population::OS, config.n_os + config.n_val, os_rng);
  return run;
}

RunRecord run_single(const ExperimentConfig& config, std::uint64_t seed) {
  return run_single(config, config.mechanism, seed);
}

RunRecord run_single(const ExperimentConfig& config, const Components& mechanism,
                     std::uint64_t seed) {
  RunRecord rec;
  rec.seed = seed;
  try {
    const SimulatedRun run = simulate(config, mechanism, seed);
    rec.p = run.p;
    const Cohort rct = run.rct.masked();
    const Cohort train = run.os.slice(0, config.n_os).masked();
    const Cohort val = run.os.slice(config.n_os, config.n_os + config.n_val).masked();
    const DiagnoseResult res = diagnose_split(rct, train, val, diagnose_options(config));
    for (std::size_t k = 0; k < 3; ++k) {
      rec.r[k] = res.report.channels[k].pearson_r;
      rec.p_value[k] = res.report.channels[k].p_value;
      rec.defined[k] = res.report.channels[k].defined;
    }
    rec.verdict = res.report.verdict;
    rec.mean_abs_b1 = res.mean_abs_b1;
    rec.empty_cells = res.empty_cells;
    rec.nonconverged = res.nonconverged;
  } catch (const std::exception& e) {
    rec.error = "seed " + std::to_string(seed) + ": " + e.what();
  }
  return rec;
}

Batch run_batch(const ExperimentConfig& config, Execution exec) {
  return run_batch(config, config.mechanism, exec);
}

Batch run_batch(const ExperimentConfig& config, const Components& mechanism, Execution exec) {
  config.validate();
  Batch batch;
  batch.records.resize(config.n_seeds);
  const auto n = static_cast<std::ptrdiff_t>(config.n_seeds);
  if (exec == Execution::Parallel) {
#pragma omp parallel for schedule(dynamic, 1)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
      batch.records[i] = run_single(config, mechanism, config.base_seed + static_cast<std::uint64_t>(i));
    }
  } else {
    for (std::ptrdiff_t i = 0; i < n; ++i) {
      batch.records[i] = run_single(config, mechanism, config.base_seed + static_cast<std::uint64_t>(i));
    }
  }
  batch.summary = summarize(batch.records, mechanism, config.d, config.n_rct, config.alpha);
  return batch;
}

std::vector<GridCell> run_grid(const ExperimentConfig& config, Execution exec) {
  config.validate();
  std::vector<GridCell> out;
  for (const Components& mech : config.mechanisms) {
    for (std::size_t d : config.grid.d) {
      for (std::size_t n_rct : config.grid.n_rct) {
        ExperimentConfig cell = config;
        cell.d = d;
        cell.n_rct = n_rct;
        out.push_back({mech, d, n_rct, run_batch(cell, mech, exec)});
      }
    }
  }
  return out;
}

WhiReplica run_whi_replica(const ExperimentConfig& config, Execution exec) {
  const Components mech{MechanismKind::SelectionType2, MechanismKind::Transportability};
  ExperimentConfig combined = config;
  combined.selection_table = config.selection_table.value_or(SelectionTable{{0.9, 0.9, 0.3, 0.1}});
  ExperimentConfig corrected = config;
  corrected.selection_table = SelectionTable::uniform(0.99);
  WhiReplica out;
  out.combined = run_batch(combined, mech, exec);
  out.corrected = run_batch(corrected, mech, exec);
  for (std::size_t k = 0; k < 3; ++k) {
    out.median_shift[k] = out.corrected.summary.median_r[k] - out.combined.summary.median_r[k];
  }
  return out;
}

nlohmann::json WhiReplica::to_json() const {
  nlohmann::json j;
  j["combined"] = combined.summary.to_json();
  j["corrected"] = corrected.summary.to_json();
  for (Channel c : kChannels) {
    j["median_shift"][std::string(to_string(c))] = median_shift[static_cast<std::size_t>(c)];
  }
  return j;
}

void write_runs_csv(std::ostream& out, const std::vector<RunRecord>& records) {
  out << kRunsHeader << '\n';
  for (const RunRecord& r : records) {
    out << r.seed << ',' << fmt(r.p);
    for (std::size_t k = 0; k < 3; ++k) out << ',' << fmt(r.r[k]) << ',' << fmt(r.p_value[k]);
    for (std::size_t k = 0; k < 3; ++k) out << ',' << (r.defined[k] ? 1 : 0);
    out << ',' << to_string(r.verdict) << ',' << fmt(r.mean_abs_b1) << ',' << r.empty_cells << ','
        << (r.nonconverged ? 1 : 0) << ',' << quote(r.error) << '\n';
  }
}

std::vector<RunRecord> read_runs_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kRunsHeader) throw DataError("runs.csv: bad header");
  std::vector<RunRecord> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::vector<std::string> f = split_csv(line);
    if (f.size() != 16) {
      throw DataError("runs.csv line " + std::to_string(lineno) + ": expected 16 fields");
    }
    RunRecord r;
    r.seed = parse_u64(f[0]);
    r.p = parse_double(f[1]);
    for (std::size_t k = 0; k < 3; ++k) {
      r.r[k] = parse_double(f[2 + 2 * k]);
      r.p_value[k] = parse_double(f[3 + 2 * k]);
      r.defined[k] = f[8 + k] == "1";
    }
    r.verdict = parse_verdict(f[11]);
    r.mean_abs_b1 = parse_double(f[12]);
    r.empty_cells = parse_u64(f[13]);
    r.nonconverged = f[14] == "1";
    r.error = f[15];
    out.push_back(std::move(r));
  }
  return out;
}

void write_grid_csv(std::ostream& out, const std::vector<GridCell>& grid) {
  out << "mechanism,d,n_rct,n_runs,n_failed,match_fraction,all_nonsignificant_fraction,"
         "sig_S,sig_A,sig_Y,median_r_S,median_r_A,median_r_Y,median_power\n";
  for (const GridCell& c : grid) {
    const BatchSummary& s = c.batch.summary;
    out << format_mechanism(c.mechanism) << ',' << c.d << ',' << c.n_rct << ',' << s.n_runs << ','
        << s.n_failed << ',' << (s.expected ? fmt(s.match_fraction) : "") << ','
        << fmt(s.all_nonsignificant_fraction);
    for (double v : s.significant_fraction) out << ',' << fmt(v);
    for (double v : s.median_r) out << ',' << fmt(v);
    out << ',' << fmt(s.median_power) << '\n';
  }
}

}  // namespace biasmech
