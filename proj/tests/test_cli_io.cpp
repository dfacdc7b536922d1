#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "biasmech/cohort_csv.hpp"
#include "biasmech/config.hpp"
#include "biasmech/diagnose.hpp"
#include "biasmech/errors.hpp"

using namespace biasmech;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("biasmech_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(BIASMECH_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_file(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

SimulatedRun small_run(MechanismKind k, std::uint64_t seed) {
  ExperimentConfig c;
  c.mechanism = {k};
  c.d = 3;
  c.n_rct = 3000;
  c.n_os = 3000;
  c.n_val = 800;
  return simulate(c, c.mechanism, seed);
}

Cohort reread(const Cohort& c) {
  std::ostringstream out;
  write_cohort_csv(out, c);
  std::istringstream in(out.str());
  return read_cohort_csv(in, c.population());
}

}  // namespace

TEST_SUITE("cli_io") {

TEST_CASE("empty config gives the defaults") {
  CHECK(parse_config_text("") == ExperimentConfig{});
  CHECK(parse_config_text("{}") == ExperimentConfig{});
  CHECK(parse_config_text("null") == ExperimentConfig{});
  const ExperimentConfig c = parse_config_text("{}");
  CHECK(c.d == 6);
  CHECK(c.n_os == 50000);
  CHECK(c.n_val == 2000);
  CHECK(c.n_seeds == 200);
  CHECK(c.alpha == 0.01);
}

TEST_CASE("config rejections") {
  CHECK_THROWS_AS(parse_config_text(R"({"p_range": [0.2, 0.6]})"), ConfigError);
  CHECK_THROWS_AS(parse_config_text(R"({"colour": 3})"), ConfigError);
  CHECK_THROWS_AS(parse_config_text(R"({"grid": {"d": [5], "speed": 1}})"), ConfigError);
  CHECK_THROWS_AS(parse_config_text(R"({"selection_table": [0.1, 0.2]})"), ConfigError);
  CHECK_THROWS_AS(parse_config_text(R"({"d": "six"})"), ConfigError);
  CHECK_THROWS_AS(parse_config_text(R"({"n_val": 60000})"), ConfigError);
  CHECK_THROWS_AS(parse_config_text(R"({"mechanism": "Wobble"})"), ConfigError);
  try {
    parse_config_text("{\n  \"d\": 4,\n  \"alpha\": ,\n}");
    FAIL("expected a parse error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
  try {
    parse_config_text(R"({"p_range": [0.2, 0.6]})");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("p_range") != std::string::npos);
  }
}

TEST_CASE("config round trip") {
  const std::string text = R"({
    "mode": "grid",
    "mechanism": "SelectionType2+Transportability",
    "mechanisms": ["Confounding", ["Confounding", "Transportability"]],
    "d": 5, "n_rct": 2000, "u_model": "continuous",
    "selection_table": {"p00": 0.9, "p01": 0.9, "p10": 0.3, "p11": 0.1},
    "model": "logistic", "n_seeds": 20, "grid": {"d": [5, 7]}
  })";
  const ExperimentConfig c = parse_config_text(text);
  CHECK(c.mechanism == Components{MechanismKind::SelectionType2, MechanismKind::Transportability});
  CHECK(c.mechanisms.size() == 2);
  CHECK(c.selection_table->p == std::array<double, 4>{0.9, 0.9, 0.3, 0.1});
  CHECK(c.u_model == UModel::Continuous);
  CHECK(c.grid.d == std::vector<std::size_t>{5, 7});
  CHECK(c.grid.n_rct == GridAxes{}.n_rct);
  const std::string once = serialize_config(c);
  CHECK(parse_config_text(once) == c);
  CHECK(serialize_config(parse_config_text(once)) == once);
  const fs::path dir = scratch("config");
  write_file(dir / "c.json", once);
  CHECK(parse_config((dir / "c.json").string()) == c);
  CHECK_THROWS_AS(parse_config((dir / "missing.json").string()), ConfigError);
}

TEST_CASE("cohort CSV round trip is byte-identical") {
  const SimulatedRun run = small_run(MechanismKind::SelectionType1, 4);
  for (const Cohort* c : {&run.rct, &run.os}) {
    std::ostringstream first;
    write_cohort_csv(first, *c);
    std::istringstream in(first.str());
    const Cohort back = read_cohort_csv(in, c->population());
    std::ostringstream second;
    write_cohort_csv(second, back);
    CHECK(first.str() == second.str());
    CHECK(back == c->masked());
  }
  std::ostringstream out;
  write_cohort_csv(out, run.os);
  CHECK(out.str().rfind("r,s,a,y,x_0,x_1,x_2\n", 0) == 0);
  std::ostringstream lat;
  write_latent_csv(lat, run.os);
  CHECK(lat.str().rfind("u,a,y\n", 0) == 0);
}

TEST_CASE("schema errors") {
  auto read = [](const std::string& text, Population pop = Population::OS) {
    std::istringstream in(text);
    return read_cohort_csv(in, pop);
  };
  CHECK_THROWS_AS(read("r,s,a,y,x_0,x_1\n0,0,1,,0,1\n"), DataError);
  CHECK_THROWS_AS(read("r,s,a,y,x_0\n0,1,1,,0\n"), DataError);
  CHECK_THROWS_AS(read("r,s,a,y,x_0\n0,2,1,1,0\n"), DataError);
  CHECK_THROWS_AS(read("r,s,a,y,x_0\n0,1,1,0.5,0\n"), DataError);
  CHECK_THROWS_AS(read("r,s,a,y,u,x_0\n0,1,1,1,0,0\n"), DataError);
  CHECK_THROWS_AS(read("r,s,a,y,x_0\n1,1,1,1,0\n"), DataError);
  CHECK_THROWS_AS(read("r,s,a,y,x_0\n1,0,,,0\n", Population::RCT), DataError);
  CHECK_THROWS_AS(read("s,a,y,x_0\n1,1,1,0\n"), DataError);
  CHECK_THROWS_AS(read("r,s,a,y,x_0\n0,1,1\n"), DataError);
  try {
    read("r,s,a,y,x_0\n0,1,1,1,0\n0,0,1,,1\n");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
  const Cohort ok = read("r,s,a,y,x_0,x_1\n0,0,,,0,1\n0,1,1,0,1,1\n");
  CHECK(ok.size() == 2);
  CHECK(ok.dim() == 2);
  CHECK_FALSE(ok.has_latent());
  CHECK(ok.covariate_type() == CovariateType::Binary);
}

TEST_CASE("continuous covariates select the logistic estimator") {
  std::ostringstream rct, os;
  rct << "r,s,a,y,x_0,x_1\n";
  os << "r,s,a,y,x_0,x_1\n";
  Rng rng(3);
  for (int i = 0; i < 600; ++i) {
    const double x0 = rng.uniform(-2, 2), x1 = rng.uniform(-2, 2);
    rct << "1,1," << (i % 2) << ',' << rng.bernoulli(0.4) << ',' << x0 << ',' << x1 << '\n';
    if (rng.bernoulli(0.6)) {
      os << "0,1," << rng.bernoulli(0.5) << ',' << rng.bernoulli(0.3) << ',' << x0 << ',' << x1 << '\n';
    } else {
      os << "0,0,,," << x0 << ',' << x1 << '\n';
    }
  }
  std::istringstream rin(rct.str()), oin(os.str());
  const Cohort r = read_cohort_csv(rin, Population::RCT);
  const Cohort o = read_cohort_csv(oin, Population::OS);
  CHECK(r.covariate_type() == CovariateType::Continuous);
  DiagnoseOptions freq;
  freq.model = ModelKind::FrequencyTable;
  CHECK_THROWS_AS(diagnose(r, o, freq), ConfigError);
  DiagnoseOptions logit;
  logit.model = ModelKind::Logistic;
  const Diagnosis d = diagnose(r, o, logit);
  CHECK(d.n_train + d.n_val == o.size());
  CHECK(d.split_method == "shuffle");
}

TEST_CASE("seeded OS split") {
  const SimulatedRun run = small_run(MechanismKind::NoBias, 2);
  const Cohort os = run.os.masked();
  const OsSplit a = split_os(os, {0.8, 5, std::nullopt});
  const OsSplit b = split_os(os, {0.8, 5, std::nullopt});
  CHECK(a.train == b.train);
  CHECK(a.val == b.val);
  CHECK(a.train.size() == 3040);
  CHECK(a.val.size() == os.size() - 3040);
  CHECK_FALSE(split_os(os, {0.8, 6, std::nullopt}).val == a.val);
  const OsSplit t = split_os(os, {0.8, 0, 800});
  CHECK(t.method == "tail");
  CHECK(t.val == os.slice(3000, 3800));
  CHECK_THROWS_AS(split_os(os, {1.0, 0, std::nullopt}), ConfigError);
  CHECK_THROWS_AS(split_os(os, {0.8, 0, os.size()}), ConfigError);
}

TEST_CASE("re-ingested cohorts reproduce the harness report") {
  ExperimentConfig c;
  c.mechanism = {MechanismKind::Confounding};
  c.d = 3;
  c.n_rct = 3000;
  c.n_os = 3000;
  c.n_val = 800;
  const SimulatedRun run = simulate(c, c.mechanism, 12);
  const DiagnoseResult mem = diagnose_split(run.rct.masked(), run.os.slice(0, 3000).masked(),
                                            run.os.slice(3000, 3800).masked(), diagnose_options(c));
  const Diagnosis file = diagnose(reread(run.rct), reread(run.os), diagnose_options(c),
                                  {0.8, 0, c.n_val});
  CHECK(file.result.report == mem.report);
  const RunRecord rec = run_single(c, 12);
  CHECK(rec.verdict == file.result.report.verdict);
  CHECK(rec.r[2] == file.result.report.channels[2].pearson_r);
}

TEST_CASE("load_cohorts checks the pair") {
  const fs::path dir = scratch("load");
  const SimulatedRun run = small_run(MechanismKind::NoBias, 1);
  write_cohort_csv((dir / "rct.csv").string(), run.rct);
  write_cohort_csv((dir / "os.csv").string(), run.os);
  const auto [rct, os] = load_cohorts({(dir / "rct.csv").string(), (dir / "os.csv").string()});
  CHECK(rct.dim() == os.dim());
  CHECK(rct == run.rct.masked());
  write_file(dir / "os2.csv", "r,s,a,y,z_0,z_1,z_2\n0,0,,,0,1,1\n");
  CHECK_THROWS_AS(load_cohorts({(dir / "rct.csv").string(), (dir / "os2.csv").string()}), DataError);
  CHECK_THROWS_AS(load_cohorts({(dir / "nope.csv").string(), (dir / "os.csv").string()}), DataError);
}

TEST_CASE("command line exit codes and outputs") {
  const fs::path dir = scratch("cli");
  const std::string d = dir.string();
  CHECK(run_cli("simulate --mechanism Confounding --d 3 --n-rct 3000 --n-os 3000 --n-val 800 "
                "--seed 4 --latent --out-dir " + d) == 0);
  CHECK(fs::exists(dir / "rct.csv"));
  CHECK(fs::exists(dir / "os_latent.csv"));
  CHECK(run_cli("diagnose --rct " + d + "/rct.csv --os " + d + "/os.csv --model freq --val-tail 800 --out " +
                d + "/report.json") == 0);
  const nlohmann::json rep = nlohmann::json::parse(slurp(dir / "report.json"));
  CHECK(rep["channels"].size() == 3);
  CHECK(rep["split"]["method"] == "tail");
  CHECK(rep.contains("verdict"));

  CHECK(run_cli("oracle --mechanism Confounding --p 0.3 --mc 20000 --out " + d + "/oracle.csv") == 0);
  CHECK(slurp(dir / "oracle.csv").rfind("mechanism,p,rho_S,se_S,rho_A,se_A,rho_Y,se_Y\n", 0) == 0);

  write_file(dir / "batch.json", R"({"mechanism": "NoBias", "d": 2, "n_rct": 500, "n_os": 500,
                                     "n_val": 200, "n_seeds": 3})");
  CHECK(run_cli("batch --config " + d + "/batch.json --out-dir " + d + "/b") == 0);
  std::ifstream runs(dir / "b" / "runs.csv");
  CHECK(read_runs_csv(runs).size() == 3);
  CHECK(nlohmann::json::parse(slurp(dir / "b" / "summary.json"))["n_runs"] == 3);

  write_file(dir / "bad.json", R"({"p_range": [0.2, 0.6]})");
  CHECK(run_cli("batch --config " + d + "/bad.json --out-dir " + d) == 2);
  CHECK(run_cli("frobnicate") == 2);
  CHECK(run_cli("diagnose --rct " + d + "/rct.csv") == 2);
  write_file(dir / "broken.csv", "r,s,a,y,x_0\n0,0,1,,0\n");
  CHECK(run_cli("diagnose --rct " + d + "/rct.csv --os " + d + "/broken.csv") == 3);
  CHECK(run_cli("diagnose --rct " + d + "/missing.csv --os " + d + "/os.csv") == 3);
  CHECK(run_cli("oracle --mechanism Confounding --mc 10") == 2);
}

}  // TEST_SUITE
