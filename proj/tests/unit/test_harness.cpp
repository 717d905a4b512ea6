#include "tclt/harness/config.hpp"
#include "tclt/harness/experiments.hpp"
#include "tclt/harness/report.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;
using namespace tclt;
using namespace tclt::harness;

namespace {

const char* kMeanfield = R"(experiment: meanfield
seed: 11
physics:
  sigma: 0.1
  kernel: {type: zero}
  rho0: {type: taylor-green, amplitude: 0.3}
numerics:
  grid: 16
  dt_pde: 0.01
  horizon: 0.05
statistics:
  times: [0.05]
assertions:
  - {metric: meanfield/t=0.05/tg_max_error, max: 1.0e-8, label: "closed form"}
)";

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("tclt_harness_" + std::to_string(::getpid())) / name;
  fs::remove_all(p);
  fs::create_directories(p.parent_path());
  return p;
}

void write(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream(p) << text;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Runs the CLI; returns the exit status, stdout and stderr land in files.
int cli(const std::string& args, const fs::path& out, const fs::path& err) {
  const std::string cmd = std::string("\"") + TCLT_CLI_PATH + "\" " + args + " >\"" + out.string() + "\" 2>\"" +
                          err.string() + "\"";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

Plan plan_from(const std::string& yaml, const std::string& kind, RunOptions opt = {}) {
  return load_plan(parse_yaml(yaml), kind, opt);
}

}  // namespace

TEST_CASE("config hash ignores key order and number spelling") {
  const std::string a = kMeanfield;
  const std::string b = R"(statistics: {times: [0.05]}
numerics: {horizon: 0.05, dt_pde: 1.0e-2, grid: 16}
physics:
  rho0: {amplitude: 0.3, type: taylor-green}
  kernel: {type: zero}
  sigma: 0.1
seed: 11
assertions:
  - {label: "closed form", max: 1.0e-8, metric: meanfield/t=0.05/tg_max_error}
experiment: meanfield
)";
  const Plan pa = plan_from(a, "meanfield"), pb = plan_from(b, "meanfield");
  CHECK(pa.hash == pb.hash);
  // JSON input of the same logical config
  const std::string j = nlohmann::json(pa.normalized).dump();
  CHECK(load_plan(parse_json(j), "meanfield", {}).hash == pa.hash);
  // A different value or a --seed override changes it; the output path does not.
  RunOptions o;
  o.seed = 12;
  CHECK(plan_from(a, "meanfield", o).hash != pa.hash);
  CHECK(plan_from(a + "output: somewhere\n", "meanfield").hash == pa.hash);
}

TEST_CASE("defaults are written into the normalized config") {
  const Plan p = plan_from(kMeanfield, "meanfield");
  CHECK(p.normalized["numerics"]["dealias"].get<double>() == Catch::Approx(2.0 / 3.0));
  CHECK(p.normalized["numerics"]["horizon"].is_number_float());
  CHECK(p.normalized["experiment"] == "meanfield");
  CHECK_FALSE(p.normalized.contains("output"));
}

TEST_CASE("validation errors carry the field path and line") {
  std::string text = kMeanfield;
  text.replace(text.find("  kernel: {type: zero}\n"), 23, "");
  try {
    plan_from(text, "meanfield");
    FAIL("expected a ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.field() == "physics.kernel");
    CHECK(e.line() == 3);
    CHECK(exit_code_for(e) == 1);
  }
  std::string unknown = kMeanfield;
  unknown.replace(unknown.find("  grid: 16"), 10, "  grids: 16");
  try {
    plan_from(unknown, "meanfield");
    FAIL("expected a ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.field() == "numerics.grids");
    CHECK(std::string(e.what()).find("unknown key") != std::string::npos);
  }
  CHECK_THROWS_AS(plan_from(kMeanfield, "clt"), ConfigError);  // experiment mismatch
  std::string bad_time = kMeanfield;
  bad_time.replace(bad_time.find("times: [0.05]"), 13, "times: [0.5]");
  CHECK_THROWS_AS(plan_from(bad_time, "meanfield"), ConfigError);
  CHECK_THROWS_AS(parse_yaml("a: [1, 2\n"), ConfigError);
}

TEST_CASE("kernel and test function forms") {
  const std::string clt = R"(experiment: clt
seed: 3
physics:
  sigma: 0.2
  kernel: {type: bounded-fourier, x: [{sin: [0, 1]}], y: [[1, 0, 0, -0.5], [-1, 0, 0, 0.5]]}
  rho0: {type: uniform}
numerics: {grid: 16, horizon: 0.1, n: [20], dt: 0.05}
statistics:
  phi: [{name: c, terms: [{cos: [1, 0], amplitude: 2}]}]
  times: [0.1]
  replicas: 4
)";
  const Plan p = plan_from(clt, "clt");
  const auto& bf = std::get<BoundedFourierKernel>(p.physics.kernel.variant());
  // sin x1 = (e^{ix1} - e^{-ix1}) / 2i
  CHECK(std::abs(bf.field.c[1].coeff({1, 0}) - cd(0, -0.5)) < 1e-15);
  CHECK(std::abs(bf.field.c[0].coeff({0, 1}) - cd(0, -0.5)) < 1e-15);
  CHECK(std::abs(p.phi[0].phi.coeff({1, 0}) - cd(1, 0)) < 1e-15);
  std::string nonreal = clt;
  nonreal.replace(nonreal.find("[-1, 0, 0, 0.5]"), 15, "[-1, 0, 0, 0.4]");
  CHECK_THROWS_AS(plan_from(nonreal, "clt"), ConfigError);
  // singular kernel with particles: delta radii accepted, nonpositive rejected
  std::string bs = clt;
  bs.replace(bs.find("{type: bounded-fourier"), bs.find("\n", bs.find("{type: bounded-fourier")) - bs.find("{type: bounded-fourier"),
             "{type: biot-savart}");
  bs.replace(bs.find("dt: 0.05}"), 9, "dt: 0.05, delta: [0.001]}");
  CHECK(plan_from(bs, "clt").delta == std::vector<double>{0.001});
  bs.replace(bs.find("delta: [0.001]"), 14, "delta: [0]");
  CHECK_THROWS_AS(plan_from(bs, "clt"), ConfigError);
}

TEST_CASE("run directory lifecycle") {
  const fs::path dir = scratch("meanfield");
  RunOptions opt;
  opt.out = dir;
  opt.quiet = true;
  const Plan p = plan_from(kMeanfield, "meanfield");
  std::ostringstream log;
  run_plan(p, opt, log);
  for (const char* f : {"config.json", "metadata.json", "results.json", "diagnostics.csv", "snapshots.csv"})
    CHECK(fs::exists(dir / f));
  const auto meta = nlohmann::json::parse(slurp(dir / "metadata.json"));
  CHECK(meta["deterministic"] == true);
  CHECK(meta.contains("rng_algorithm"));
  CHECK(meta["config_hash"] == p.hash);
  const auto res = read_results(dir);
  CHECK(res["config_hash"] == p.hash);
  CHECK(res["metrics"]["meanfield/t=0.05/tg_max_error"].get<double>() < 1e-12);

  const std::string first = slurp(dir / "results.json");
  CHECK_THROWS_AS(run_plan(p, opt, log), ConfigError);  // same hash, no --force
  RunOptions other = opt;
  other.seed = 99;
  CHECK_THROWS_AS(run_plan(plan_from(kMeanfield, "meanfield", other), other, log), ConfigError);
  opt.force = true;
  run_plan(p, opt, log);
  CHECK(slurp(dir / "results.json") == first);

  std::ostringstream rep;
  CHECK(report(dir, rep) == 0);
  CHECK(rep.str().find("closed form") != std::string::npos);
  CHECK(rep.str().find("PASS") != std::string::npos);
}

TEST_CASE("report on incomplete runs") {
  const fs::path empty = scratch("empty");
  fs::create_directories(empty);
  std::ostringstream out;
  CHECK_THROWS_AS(report(empty, out), IncompleteRun);

  const fs::path dir = scratch("corrupt");
  RunOptions opt;
  opt.out = dir;
  opt.quiet = true;
  std::ostringstream log;
  run_plan(plan_from(kMeanfield, "meanfield"), opt, log);
  write(dir / "results.json", "{\"metrics\": {");
  try {
    report(dir, out);
    FAIL("expected IncompleteRun");
  } catch (const IncompleteRun& e) {
    CHECK(e.file() == (dir / "results.json").string());
  }
  // a metric the assertion names is absent
  write(dir / "results.json", R"({"experiment": "meanfield", "metrics": {}})");
  CHECK_THROWS_AS(report(dir, out), IncompleteRun);
  // failing assertion
  write(dir / "results.json", R"({"experiment": "meanfield", "metrics": {"meanfield/t=0.05/tg_max_error": 1.0}})");
  CHECK(report(dir, out) == 5);
}

TEST_CASE("exit codes and structured errors") {
  CHECK(exit_code_for(ValidationError("x")) == 1);
  CHECK(exit_code_for(NumericalError("blow-up", 0.5)) == 2);
  CHECK(exit_code_for(SingularityError("x")) == 2);
  CHECK(exit_code_for(ReplicaError(7, "x")) == 3);
  const auto rec = error_record(ReplicaError(7, "boom"));
  CHECK(rec["error"]["kind"] == "replica");
  CHECK(rec["error"]["replica"] == 7);
  CHECK(rec["error"]["exit_code"] == 3);
}

TEST_CASE("cli: dry run, validation failure, report exit codes") {
  const fs::path base = scratch("cli");
  const fs::path cfg = base / "mf.yaml", out = base / "stdout", err = base / "stderr";
  write(cfg, kMeanfield);

  const fs::path never = base / "never";
  CHECK(cli("meanfield --config \"" + cfg.string() + "\" --out \"" + never.string() + "\" --dry-run", out, err) == 0);
  CHECK_FALSE(fs::exists(never));
  const auto plan = nlohmann::json::parse(slurp(out));
  CHECK(plan["plan"]["experiment"] == "meanfield");
  CHECK(plan["plan"]["pde_steps"] == 5);

  std::string text = kMeanfield;
  text.replace(text.find("  kernel: {type: zero}\n"), 23, "");
  write(base / "nokernel.yaml", text);
  CHECK(cli("meanfield --config \"" + (base / "nokernel.yaml").string() + "\" --out x", out, err) == 1);
  const auto e = nlohmann::json::parse(slurp(err));
  CHECK(e["error"]["field"] == "physics.kernel");
  CHECK(e["error"]["kind"] == "validation");

  const fs::path run = base / "run";
  CHECK(cli("meanfield -q --emit-plot-script --config \"" + cfg.string() + "\" --out \"" + run.string() + "\"", out,
            err) == 0);
  CHECK(fs::exists(run / "plot.gp"));
  CHECK(cli("report \"" + run.string() + "\"", out, err) == 0);
  CHECK(slurp(out).find("PASS") != std::string::npos);
  CHECK(slurp(out).find("\033[") == std::string::npos);  // not a terminal: no color
  CHECK(cli("meanfield -q --config \"" + cfg.string() + "\" --out \"" + run.string() + "\"", out, err) == 1);

  const fs::path empty = base / "empty";
  fs::create_directories(empty);
  CHECK(cli("report \"" + empty.string() + "\"", out, err) == 4);
  write(run / "results.json", "not json");
  CHECK(cli("report \"" + run.string() + "\"", out, err) == 4);
  CHECK(slurp(err).find("results.json") != std::string::npos);
}

TEST_CASE("clt pipeline writes one comparison row per (N, phi, t)") {
  const std::string clt = R"(experiment: clt
seed: 5
physics:
  sigma: 0.5
  kernel: {type: zero}
  rho0: {type: uniform}
numerics: {grid: 16, horizon: 0.1, n: [30, 60], dt: 0.05}
statistics:
  phi:
    - {name: a, terms: [{cos: [1, 0], amplitude: 1.4142135623730951}]}
    - {name: b, terms: [{sin: [0, 1], amplitude: 1.4142135623730951}]}
  times: [0, 0.1]
  replicas: 40
)";
  const fs::path dir = scratch("clt");
  RunOptions opt;
  opt.out = dir;
  opt.quiet = true;
  std::ostringstream log;
  run_plan(plan_from(clt, "clt"), opt, log);
  std::ifstream in(dir / "comparison.csv");
  std::string line;
  std::size_t rows = 0;
  std::getline(in, line);
  CHECK(line.rfind("run,N,dt,delta,phi,t,", 0) == 0);
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 2 * 2 * 2);
  const auto m = read_results(dir)["metrics"];
  CHECK(m["clt/ou/a/t=0.1"].get<double>() == Catch::Approx(1.0).epsilon(1e-10));
  CHECK(m.contains("clt/N=60/b/t=0.1/ratio"));

  // worker count does not change any result file
  const fs::path dir2 = scratch("clt_workers");
  opt.out = dir2;
  opt.workers = 3;
  run_plan(plan_from(clt, "clt"), opt, log);
  for (const char* f : {"results.json", "comparison.csv", "samples.csv"}) CHECK(slurp(dir / f) == slurp(dir2 / f));
}
