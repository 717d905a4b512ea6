// Acceptance suite: runs the shipped configs through the harness and checks each criterion
// against oracles computed here from the run artifacts.
//
//   tclt_acceptance <A1..A10|all> [--root DIR] [--configs DIR] [--cli PATH] [--workers W]

#include "tclt/harness/config.hpp"
#include "tclt/harness/experiments.hpp"
#include "tclt/spectral_field.hpp"

#include <boost/math/distributions/normal.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace tclt;

namespace {

struct Env {
  fs::path root = "acceptance_runs";
  fs::path configs = TCLT_ACCEPTANCE_CONFIGS;
  fs::path cli = TCLT_CLI_PATH;
  int workers = std::max(1u, std::thread::hardware_concurrency());
};

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) pass = false;
    detail += (detail.empty() ? "" : "; ") + what + (ok ? "" : " [violated]");
  }
};

std::string fmt(double v, int digits = 4) {
  char b[48];
  std::snprintf(b, sizeof b, "%.*g", digits, v);
  return b;
}

using Row = std::map<std::string, std::string>;

std::vector<Row> read_csv(const fs::path& f) {
  std::ifstream in(f);
  if (!in) throw std::runtime_error("missing " + f.string());
  auto split = [](const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    return out;
  };
  std::string line;
  std::getline(in, line);
  const auto header = split(line);
  std::vector<Row> rows;
  while (std::getline(in, line)) {
    const auto cells = split(line);
    Row r;
    for (std::size_t i = 0; i < header.size() && i < cells.size(); ++i) r[header[i]] = cells[i];
    rows.push_back(std::move(r));
  }
  return rows;
}

double num(const Row& r, const std::string& k) { return std::stod(r.at(k)); }

/// Unbiased sample variance, two-pass.
double variance(const std::vector<double>& x) {
  double m = 0.0;
  for (double v : x) m += v;
  m /= static_cast<double>(x.size());
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return s / static_cast<double>(x.size() - 1);
}

/// Normal-theory standard error of a sample variance.
double variance_se(double var, std::size_t m) { return var * std::sqrt(2.0 / static_cast<double>(m - 1)); }

double zq(double p) { return boost::math::quantile(boost::math::normal(), p); }

std::string kind_of(const fs::path& config) {
  harness::Document doc = harness::load_document(config);
  return doc.raw().at("experiment").get<std::string>();
}

/// Runs a shipped config into root/<stem>; returns the run directory and the wall time.
std::pair<fs::path, double> run_config(const Env& env, const std::string& stem) {
  const fs::path config = env.configs / (stem + ".yaml");
  harness::RunOptions opt;
  opt.out = env.root / stem;
  opt.workers = env.workers;
  opt.force = true;
  opt.quiet = true;
  const auto t0 = std::chrono::steady_clock::now();
  const harness::Plan plan = harness::load_plan(config, kind_of(config), opt);
  harness::run_plan(plan, opt, std::cerr);
  return {opt.out, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()};
}

void runtime(Outcome& o, double seconds, double limit) {
  o.require(seconds <= limit, "runtime " + fmt(seconds, 3) + " s <= " + fmt(limit) + " s");
}

// Samples grouped by (run, phi, t).
std::map<std::tuple<std::string, std::string, double>, std::vector<double>> grouped_samples(const fs::path& f) {
  std::map<std::tuple<std::string, std::string, double>, std::vector<double>> g;
  for (const auto& r : read_csv(f)) {
    const std::string run = r.count("run") ? r.at("run") : "";
    g[{run, r.at("phi"), num(r, "t")}].push_back(num(r, "value"));
  }
  return g;
}

std::map<std::pair<std::string, double>, double> ou_table(const fs::path& f) {
  std::map<std::pair<std::string, double>, double> m;
  for (const auto& r : read_csv(f)) m[{r.at("phi"), num(r, "t")}] = num(r, "var");
  return m;
}

// ---------------------------------------------------------------------------------------------

Outcome a1(const Env& env) {
  const auto [dir, secs] = run_config(env, "a1_taylor_green");
  Outcome o;
  const double sigma = 0.05, amp = 0.5;
  for (double t : {0.5, 1.0, 2.0}) {
    std::ifstream in(dir / "fields" / ("rho_t" + fmt(t) + ".json"));
    const SpectralField f = spectral_field_from_json(json::parse(in));
    const GridArray g = transform_to_grid(f);
    const int m = f.grid_size();
    const double h = 2.0 * M_PI / m;
    double err = 0.0;
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < m; ++j) {
        const double exact =
            (1.0 + amp * std::exp(-2.0 * sigma * t) * std::cos(i * h) * std::cos(j * h)) / (4.0 * M_PI * M_PI);
        err = std::max(err, std::abs(g(i, j) - exact));
      }
    o.require(err <= 1e-4, "t=" + fmt(t) + " max error " + fmt(err, 3));
  }
  runtime(o, secs, 30);
  return o;
}

Outcome a2(const Env& env) {
  const auto [dir, secs] = run_config(env, "a2_stationary");
  Outcome o;
  const auto ou = ou_table(dir / "covariance.csv");
  const auto samples = grouped_samples(dir / "samples.csv");
  for (double t : {0.0, 0.5, 1.0}) {
    const double v = ou.at({"cos1", t});
    o.require(std::abs(v - 1.0) <= 1e-10, "OU var t=" + fmt(t) + " off by " + fmt(std::abs(v - 1.0), 2));
    const auto& x = samples.at({"N=1000", "cos1", t});
    const double ev = variance(x);
    o.require(x.size() == 2000 && ev >= 0.85 && ev <= 1.15, "sample var t=" + fmt(t) + " " + fmt(ev));
  }
  runtime(o, secs, 300);
  return o;
}

Outcome a3(const Env& env) {
  const auto [dir, secs] = run_config(env, "a3_hminus");
  Outcome o;
  // Uniform density: every nonzero mode contributes <k>^-4 exactly.
  double exact = 0.0;
  for (int k1 = -32; k1 <= 32; ++k1)
    for (int k2 = -32; k2 <= 32; ++k2)
      if (k1 || k2) exact += 1.0 / std::pow(1.0 + k1 * k1 + k2 * k2, 2);
  for (const auto& r : read_csv(dir / "hminus.csv")) {
    const double est = num(r, "estimate"), se = num(r, "se");
    o.require(std::abs(est - exact) <= 3.0 * se && std::stoul(r.at("samples")) == 2000,
              "N=" + r.at("N") + " " + fmt(est, 5) + " vs " + fmt(exact, 5) + " (" + fmt((est - exact) / se, 2) + " SE)");
  }
  runtime(o, secs, 120);
  return o;
}

// Simultaneous (Bonferroni) log-intervals share a point.
bool flat(const std::vector<Row>& rows, double level) {
  const double z = zq(1.0 - (1.0 - level) / (2.0 * static_cast<double>(rows.size())));
  double lo = -INFINITY, hi = INFINITY;
  for (const auto& r : rows) {
    const double e = num(r, "estimate"), w = z * num(r, "se") / e;
    lo = std::max(lo, std::log(e) - w);
    hi = std::min(hi, std::log(e) + w);
  }
  return lo <= hi;
}

Outcome a4(const Env& env) {
  const auto [dir, secs] = run_config(env, "a4_exp_integrals");
  Outcome o;
  for (const char* name : {"marginal_cancelling", "joint_cancelling"}) {
    const auto rows = read_csv(dir / (std::string(name) + ".csv"));
    o.require(rows.size() == 6 && flat(rows, 0.99),
              std::string(name) + " flat (" + fmt(num(rows.front(), "estimate"), 5) + " .. " +
                  fmt(num(rows.back(), "estimate"), 5) + ")");
  }
  const auto ctl = read_csv(dir / "constant_control.csv");
  o.require(!flat(ctl, 0.99) && num(ctl.back(), "estimate") > num(ctl.front(), "estimate"),
            "constant control grows to " + fmt(num(ctl.back(), "estimate"), 4));
  runtime(o, secs, 600);
  return o;
}

Outcome a5(const Env& env) {
  const auto [dir, secs] = run_config(env, "a5_duality");
  Outcome o;
  const auto rows = read_csv(dir / "duality.csv");
  double worst = 0.0;
  for (const auto& r : rows) {
    const double rel = std::abs(num(r, "forward") - num(r, "dual")) / (std::abs(num(r, "dual")) + 1e-12);
    worst = std::max(worst, rel);
    o.require(rel <= 1e-3, r.at("case") + " " + fmt(rel, 2));
  }
  o.require(rows.size() == 6, fmt(static_cast<double>(rows.size())) + " cases, worst " + fmt(worst, 2));
  runtime(o, secs, 120);
  return o;
}

Outcome a6(const Env& env) {
  const auto [dir, secs] = run_config(env, "a6_spde");
  Outcome o;
  std::map<std::string, double> ou;
  for (const auto& r : read_csv(dir / "comparison.csv")) ou[r.at("phi")] = num(r, "ou_var");
  for (const auto& [key, x] : grouped_samples(dir / "samples.csv")) {
    const auto& phi = std::get<1>(key);
    const double v = variance(x), se = variance_se(v, x.size());
    o.require(x.size() == 500 && std::abs(v - ou.at(phi)) <= 3.0 * se,
              phi + " var " + fmt(v) + " vs " + fmt(ou.at(phi)) + " (" + fmt((v - ou.at(phi)) / se, 2) + " SE)");
  }
  runtime(o, secs, 600);
  return o;
}

Outcome a7(const Env& env) {
  const auto [dir, secs] = run_config(env, "a7_clt_bounded");
  Outcome o;
  const auto ou = ou_table(dir / "covariance.csv");
  const auto samples = grouped_samples(dir / "samples.csv");
  std::map<std::string, Row> cmp;
  for (const auto& r : read_csv(dir / "comparison.csv")) cmp[r.at("run") + "|" + r.at("phi")] = r;
  const double z = zq(0.99);
  for (const std::string phi : {"cos1", "cos11"}) {
    const double target = ou.at({phi, 1.0});
    double prev_err = NAN, prev_se = NAN;
    std::string trend;
    bool monotone = true;
    for (const std::string n : {"250", "1000", "4000"}) {
      const auto& x = samples.at({"N=" + n, phi, 1.0});
      const double v = variance(x), err = std::abs(v - target), se = variance_se(v, x.size());
      // Non-increase up to sampling noise: a rise must stay within the one-sided 99% band.
      if (!std::isnan(prev_err) && err > prev_err + z * std::hypot(se, prev_se)) monotone = false;
      trend += (trend.empty() ? "" : " ") + fmt(err / target, 3);
      prev_err = err;
      prev_se = se;
      if (n == "4000") o.require(err / target <= 0.10, phi + " rel err N=4000 " + fmt(err / target, 3));
      if (n != "250")
        o.require(cmp.at("N=" + n + "|" + phi).at("normal") == "true", phi + " normal N=" + n);
    }
    o.require(monotone, phi + " |err|/ou by N " + trend + " non-increasing");
    const Row& a = cmp.at("N=1000|" + phi);
    const Row& b = cmp.at("N=1000/dt=0.0005|" + phi);
    o.require(std::max(num(a, "ci_low"), num(b, "ci_low")) <= std::min(num(a, "ci_high"), num(b, "ci_high")),
              phi + " dt/2 var " + fmt(num(b, "var")) + " vs " + fmt(num(a, "var")));
  }
  runtime(o, secs, 3600);
  return o;
}

Outcome a8(const Env& env) {
  const auto [dir, secs] = run_config(env, "a8_clt_vortex");
  Outcome o;
  const auto ou = ou_table(dir / "covariance.csv");
  const double target = ou.at({"cos1", 0.5});
  std::vector<Row> rows;
  for (const auto& r : read_csv(dir / "comparison.csv")) rows.push_back(r);
  const auto samples = grouped_samples(dir / "samples.csv");
  for (const auto& r : rows) {
    const auto& x = samples.at({r.at("run"), "cos1", 0.5});
    const double v = variance(x);
    o.require(r.at("normal") == "true", "normal " + r.at("run"));
    o.require(std::abs(v - target) / target <= 0.15,
              r.at("run") + " var " + fmt(v) + " vs OU " + fmt(target) + " (" + fmt(std::abs(v - target) / target, 3) + ")");
  }
  o.require(rows.size() == 2 && std::max(num(rows[0], "ci_low"), num(rows[1], "ci_low")) <=
                                    std::min(num(rows[0], "ci_high"), num(rows[1], "ci_high")),
            "delta CIs overlap");
  runtime(o, secs, 7200);
  return o;
}

Outcome a9(const Env& env) {
  const auto [dir, secs] = run_config(env, "a9_marginal");
  Outcome o;
  const auto rows = read_csv(dir / "marginal.csv");
  double sw = 0, sx = 0;
  std::string scaled;
  for (const auto& r : rows) {
    const double w = 1.0 / std::pow(num(r, "excess_sd"), 2);
    sw += w;
    sx += w * std::log(num(r, "N"));
    scaled += (scaled.empty() ? "" : " ") + fmt(num(r, "scaled"), 3);
  }
  const double xbar = sx / sw;
  double sxx = 0, sxy = 0;
  for (const auto& r : rows) {
    const double w = 1.0 / std::pow(num(r, "excess_sd"), 2), dx = std::log(num(r, "N")) - xbar;
    sxx += w * dx * dx;
    sxy += w * dx * num(r, "excess");
  }
  const double z = sxy / std::sqrt(sxx);
  o.require(rows.size() == 3 && z < zq(0.99), "sqrt(N) W1 " + scaled + ", growth z " + fmt(z, 3));
  runtime(o, secs, 1800);
  return o;
}

bool same_bytes(const fs::path& a, const fs::path& b) {
  std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
  if (!fa || !fb) return false;
  return std::string(std::istreambuf_iterator<char>(fa), {}) == std::string(std::istreambuf_iterator<char>(fb), {});
}

Outcome a10(const Env& env) {
  Outcome o;
  std::vector<fs::path> configs;
  for (const auto& e : fs::directory_iterator(env.configs))
    if (e.path().extension() == ".yaml") configs.push_back(e.path());
  std::sort(configs.begin(), configs.end());
  for (const auto& c : configs) {
    const std::string stem = c.stem().string();
    const fs::path first = env.root / stem, again = env.root / "rerun" / stem;
    if (!fs::exists(first / "results.json")) {
      o.require(false, stem + " has no completed first run");
      continue;
    }
    const std::string cmd = "\"" + env.cli.string() + "\" " + kind_of(c) + " --config \"" + c.string() + "\" --out \"" +
                            again.string() + "\" --force --deterministic -q --workers " + std::to_string(env.workers);
    if (std::system(cmd.c_str()) != 0) {
      o.require(false, stem + " rerun failed");
      continue;
    }
    std::size_t files = 0, diff = 0;
    std::string first_diff;
    auto compare = [&](const fs::path& base, const fs::path& other) {
      for (const auto& e : fs::recursive_directory_iterator(base)) {
        if (!e.is_regular_file() || e.path().filename() == "metadata.json") continue;
        const fs::path rel = fs::relative(e.path(), base);
        ++files;
        if (!same_bytes(e.path(), other / rel)) {
          ++diff;
          if (first_diff.empty()) first_diff = rel.string();
        }
      }
    };
    compare(first, again);
    const std::size_t n1 = files;
    compare(again, first);  // files only present in the rerun
    o.require(diff == 0, stem + " " + std::to_string(n1) + " files" + (diff ? " differ at " + first_diff : " identical"));
  }
  return o;
}

const std::vector<std::pair<std::string, std::function<Outcome(const Env&)>>>& criteria() {
  static const std::vector<std::pair<std::string, std::function<Outcome(const Env&)>>> c{
      {"A1", a1}, {"A2", a2}, {"A3", a3}, {"A4", a4}, {"A5", a5},
      {"A6", a6}, {"A7", a7}, {"A8", a8}, {"A9", a9}, {"A10", a10}};
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  Env env;
  std::vector<std::string> wanted;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    auto next = [&]() -> std::string {
      if (i + 1 >= argc) {
        std::cerr << a << " needs a value\n";
        std::exit(2);
      }
      return argv[++i];
    };
    if (a == "--root")
      env.root = next();
    else if (a == "--configs")
      env.configs = next();
    else if (a == "--cli")
      env.cli = next();
    else if (a == "--workers")
      env.workers = std::stoi(next());
    else
      wanted.push_back(a);
  }
  if (wanted.empty() || (wanted.size() == 1 && wanted[0] == "all")) {
    wanted.clear();
    for (const auto& [name, fn] : criteria()) wanted.push_back(name);
  }
  fs::create_directories(env.root);
  int failures = 0;
  for (const auto& w : wanted) {
    auto it = std::find_if(criteria().begin(), criteria().end(), [&](const auto& c) { return c.first == w; });
    if (it == criteria().end()) {
      std::cerr << "unknown criterion " << w << "\n";
      return 2;
    }
    Outcome o;
    try {
      o = it->second(env);
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("error: ") + e.what();
    }
    std::cout << w << " " << (o.pass ? "PASS" : "FAIL") << "  " << o.detail << std::endl;
    failures += !o.pass;
  }
  return failures ? 1 : 0;
}
