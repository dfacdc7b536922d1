#include <doctest.h>

#include <cmath>
#include <sstream>

#include "biasmech/errors.hpp"
#include "biasmech/harness.hpp"

using namespace biasmech;

namespace {

ExperimentConfig small_config(MechanismKind k) {
  ExperimentConfig c;
  c.mechanism = {k};
  c.d = 3;
  c.n_rct = 4000;
  c.n_os = 4000;
  c.n_val = 1000;
  c.n_seeds = 6;
  c.base_seed = 10;
  return c;
}

RunRecord record(std::uint64_t seed, std::array<double, 3> r, std::array<double, 3> p, Verdict v) {
  RunRecord rec;
  rec.seed = seed;
  rec.r = r;
  rec.p_value = p;
  rec.verdict = v;
  return rec;
}

}  // namespace

TEST_SUITE("harness") {

TEST_CASE("config validation") {
  ExperimentConfig c;
  CHECK_NOTHROW(c.validate());
  CHECK(c.d == 6);
  CHECK(c.n_os == 50000);
  CHECK(c.n_val == 2000);
  CHECK(c.n_seeds == 200);
  CHECK(c.alpha == 0.01);
  auto bad = [](auto mutate) {
    ExperimentConfig x;
    mutate(x);
    CHECK_THROWS_AS(x.validate(), ConfigError);
  };
  bad([](ExperimentConfig& x) { x.n_val = x.n_os + 1; });
  bad([](ExperimentConfig& x) { x.p_range = {0.2, 0.6}; });
  bad([](ExperimentConfig& x) { x.p_range = {0.1, 0.4}; });
  bad([](ExperimentConfig& x) { x.alpha = 0; });
  bad([](ExperimentConfig& x) { x.d = 21; });
  bad([](ExperimentConfig& x) { x.n_seeds = 0; });
  bad([](ExperimentConfig& x) { x.mode = "dance"; });
  bad([](ExperimentConfig& x) { x.grid.d.clear(); });
}

TEST_CASE("simulate sizes and substreams") {
  const ExperimentConfig c = small_config(MechanismKind::Confounding);
  const SimulatedRun a = simulate(c, c.mechanism, 3);
  CHECK(a.rct.size() == c.n_rct);
  CHECK(a.os.size() == c.n_os + c.n_val);
  CHECK(a.p >= 0.2);
  CHECK(a.p <= 0.5);
  // The law stream does not depend on the cohort sizes.
  ExperimentConfig bigger = c;
  bigger.n_rct = 100;
  bigger.n_os = 200;
  bigger.n_val = 50;
  const SimulatedRun b = simulate(bigger, c.mechanism, 3);
  CHECK(a.p == b.p);
  CHECK(a.spec.p_u_os == b.spec.p_u_os);
  CHECK(b.os.size() == 250);
}

TEST_CASE("run_single is deterministic") {
  const ExperimentConfig c = small_config(MechanismKind::SelectionType1);
  const RunRecord a = run_single(c, 5);
  const RunRecord b = run_single(c, 5);
  CHECK(a == b);
  CHECK_FALSE(a.failed());
  CHECK(a.seed == 5);
  CHECK_FALSE(run_single(c, 6) == a);
}

TEST_CASE("run_single matches diagnose_split on the tail split") {
  const ExperimentConfig c = small_config(MechanismKind::Confounding);
  const SimulatedRun run = simulate(c, c.mechanism, 8);
  const DiagnoseResult res = diagnose_split(run.rct.masked(), run.os.slice(0, c.n_os).masked(),
                                            run.os.slice(c.n_os, c.n_os + c.n_val).masked(),
                                            diagnose_options(c));
  const RunRecord rec = run_single(c, 8);
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(rec.r[k] == res.report.channels[k].pearson_r);
    CHECK(rec.p_value[k] == res.report.channels[k].p_value);
  }
  CHECK(rec.verdict == res.report.verdict);
}

TEST_CASE("failures are recorded with the seed") {
  ExperimentConfig c = small_config(MechanismKind::NoBias);
  c.model = ModelKind::Logistic;
  c.n_rct = 1;  // a single RCT row cannot hold both outcome classes
  c.n_seeds = 3;
  const Batch b = run_batch(c, Execution::Serial);
  CHECK(b.summary.n_failed == 3);
  CHECK(b.records[0].failed());
  CHECK(b.records[0].error.rfind("seed 10: ", 0) == 0);
  CHECK(std::isnan(b.summary.median_r[0]));
}

TEST_CASE("batch runs the seed range in order") {
  const ExperimentConfig c = small_config(MechanismKind::Transportability);
  const Batch b = run_batch(c);
  REQUIRE(b.records.size() == 6);
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(b.records[i].seed == 10 + i);
    CHECK(b.records[i] == run_single(c, 10 + i));
  }
  CHECK(b.summary.n_runs == 6);
  CHECK(b.summary.mechanism == "Transportability");
  CHECK(b.summary.expected == Verdict::Transportability);
}

TEST_CASE("summary aggregation") {
  const Components conf{MechanismKind::Confounding};
  std::vector<RunRecord> recs{
      record(1, {0.01, 0.2, 0.3}, {0.5, 1e-5, 1e-5}, Verdict::Confounding),
      record(2, {0.02, 0.1, 0.2}, {0.4, 0.001, 0.1}, Verdict::Indeterminate),
      record(3, {-0.01, 0.05, 0.1}, {0.6, 0.3, 0.2}, Verdict::NoBias),
  };
  RunRecord failed;
  failed.seed = 4;
  failed.error = "seed 4: boom";
  recs.push_back(failed);
  const BatchSummary s = summarize(recs, conf, 6, 50000, 0.01);
  CHECK(s.n_runs == 4);
  CHECK(s.n_failed == 1);
  CHECK(s.match_fraction == doctest::Approx(1.0 / 3.0));
  CHECK(s.all_nonsignificant_fraction == doctest::Approx(1.0 / 3.0));
  CHECK(s.significant_fraction[0] == 0.0);
  CHECK(s.significant_fraction[1] == doctest::Approx(2.0 / 3.0));
  CHECK(s.significant_fraction[2] == doctest::Approx(1.0 / 3.0));
  CHECK(s.median_r[0] == doctest::Approx(0.01));
  CHECK(s.median_r[1] == doctest::Approx(0.1));
  // power: min(-log10 p_A, -log10 p_Y) = 5, 1, ~0.52
  CHECK(power_score(recs[0], conf) == doctest::Approx(5.0));
  CHECK(power_score(recs[1], conf) == doctest::Approx(1.0));
  CHECK(s.median_power == doctest::Approx(1.0));
  for (double f : s.significant_fraction) {
    CHECK(f >= 0);
    CHECK(f <= 1);
  }
  const nlohmann::json j = s.to_json();
  CHECK(j["expected"] == "Confounding");
  CHECK(j["significant_fraction"]["A"].get<double>() == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("power score conventions") {
  const RunRecord neg = record(1, {-0.2, 0.1, 0.3}, {1e-5, 1e-5, 1e-5}, Verdict::SelectionType2);
  CHECK(power_score(neg, {MechanismKind::SelectionType1}) == 0.0);
  CHECK(power_score(neg, {MechanismKind::Transportability}) == doctest::Approx(5.0));
  CHECK(std::isnan(power_score(neg, {MechanismKind::NoBias})));
  CHECK(std::isnan(power_score(neg, {MechanismKind::Confounding, MechanismKind::Transportability})));
  const BatchSummary s = summarize({neg}, {MechanismKind::NoBias}, 6, 1, 0.01);
  CHECK(std::isnan(s.median_power));
  CHECK(s.to_json()["median_power"].is_null());
}

TEST_CASE("runs.csv round trip recomputes the summary") {
  ExperimentConfig c = small_config(MechanismKind::Confounding);
  c.n_seeds = 5;
  Batch b = run_batch(c);
  RunRecord failed;
  failed.seed = 99;
  failed.error = "seed 99: bad, \"quoted\" message";
  b.records.push_back(failed);
  std::ostringstream out;
  write_runs_csv(out, b.records);
  std::istringstream in(out.str());
  const std::vector<RunRecord> back = read_runs_csv(in);
  CHECK(back == b.records);
  const BatchSummary s1 = summarize(b.records, c.mechanism, c.d, c.n_rct, c.alpha);
  const BatchSummary s2 = summarize(back, c.mechanism, c.d, c.n_rct, c.alpha);
  CHECK(s1.to_json() == s2.to_json());
  std::ostringstream again;
  write_runs_csv(again, back);
  CHECK(again.str() == out.str());

  std::istringstream bad("seed,p\n1,2\n");
  CHECK_THROWS_AS(read_runs_csv(bad), DataError);
}

TEST_CASE("grid shape") {
  ExperimentConfig c = small_config(MechanismKind::Confounding);
  c.mechanisms = {{MechanismKind::Confounding}, {MechanismKind::NoBias}};
  c.grid.d = {2, 3, 4};
  c.grid.n_rct = {500, 1000};
  c.n_seeds = 2;
  const std::vector<GridCell> g = run_grid(c);
  CHECK(g.size() == 2 * 3 * 2);
  CHECK(g[0].d == 2);
  CHECK(g[1].n_rct == 1000);
  CHECK(g[6].mechanism == Components{MechanismKind::NoBias});
  std::ostringstream csv;
  write_grid_csv(csv, g);
  std::size_t lines = 0;
  std::string line;
  std::istringstream in(csv.str());
  while (std::getline(in, line)) ++lines;
  CHECK(lines == 13);
}

TEST_CASE("whi replica uses the combined and corrected tables") {
  ExperimentConfig c = small_config(MechanismKind::Confounding);
  c.n_seeds = 3;
  const WhiReplica w = run_whi_replica(c);
  CHECK(w.combined.summary.mechanism == "SelectionType2+Transportability");
  CHECK_FALSE(w.combined.summary.expected.has_value());
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(w.median_shift[k] ==
          doctest::Approx(w.corrected.summary.median_r[k] - w.combined.summary.median_r[k]));
  }
  CHECK(w.to_json().contains("median_shift"));
}

TEST_CASE("mechanism labels") {
  CHECK(parse_components("Confounding+Transportability") ==
        Components{MechanismKind::Confounding, MechanismKind::Transportability});
  CHECK(format_mechanism({MechanismKind::SelectionType2, MechanismKind::Transportability}) ==
        "SelectionType2+Transportability");
  CHECK_THROWS_AS(parse_components("Confounding+"), ConfigError);
}

}  // TEST_SUITE
