#include "tclt/harness/experiments.hpp"

#include "tclt/errors.hpp"
#include "tclt/mean_field.hpp"
#include "tclt/ou_limit.hpp"
#include "tclt/parallel.hpp"
#include "tclt/particles.hpp"
#include "tclt/rng.hpp"
#include "tclt/statistics.hpp"

#include <Eigen/Core>
#include <boost/math/distributions/normal.hpp>
#include <boost/version.hpp>
#include <fftw3.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;

namespace tclt::harness {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string tag(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  Engine e = make_stream(seed, (a << 32) | b, StreamTag::statistics);
  return e();
}

// -- config parsing ---------------------------------------------------------------------------

WaveVector wave_vector(const Section& s, const std::string& key) {
  const auto v = s.integers(key);
  if (v.size() != 2) s.fail(key, "expected a wave vector [k1, k2]");
  return {static_cast<int>(v[0]), static_cast<int>(v[1])};
}

// Entries are [k1, k2, re(, im)] coefficients or {cos|sin: [k1, k2], amplitude} / {constant: c}.
TestFunction trig_list(const Section& parent, const std::string& key) {
  const json& v = parent.value(key);
  if (!v.is_array()) parent.fail(key, "expected a list of trigonometric terms");
  TestFunction out;
  std::vector<TestFunction::Term> raw;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const std::string item = key + "." + std::to_string(i);
    const json& e = v[i];
    if (e.is_array()) {
      if (e.size() != 3 && e.size() != 4)
        parent.fail(item, "coefficient entries are [k1, k2, re] or [k1, k2, re, im]");
      for (const auto& x : e)
        if (!x.is_number()) parent.fail(item, "coefficient entries must be numbers");
      if (!e[0].is_number_integer() || !e[1].is_number_integer())
        parent.fail(item, "wave numbers must be integers");
      raw.emplace_back(WaveVector{e[0].get<int>(), e[1].get<int>()},
                       cd(e[2].get<double>(), e.size() == 4 ? e[3].get<double>() : 0.0));
      continue;
    }
    if (!e.is_object()) parent.fail(item, "expected a coefficient list or a {cos|sin|constant} mapping");
    const Section t = parent.element(key, i);
    const int kinds = t.has("cos") + t.has("sin") + t.has("constant");
    if (kinds != 1) t.fail("", "exactly one of cos, sin, constant is required");
    if (t.has("constant")) {
      out += TestFunction::constant(t.number("constant"));
    } else {
      const double a = t.number("amplitude", 1.0);
      if (t.has("cos"))
        out += TestFunction::cosine(wave_vector(t, "cos"), a);
      else
        out += TestFunction::sine(wave_vector(t, "sin"), a);
    }
    t.finish();
  }
  if (!raw.empty()) {
    try {
      out += TestFunction(raw);
    } catch (const ValidationError& err) {
      parent.fail(key, err.what());
    }
  }
  return out;
}

VectorField vector_field(const Section& s) {
  VectorField f;
  f.c[0] = s.has("x") ? trig_list(s, "x") : TestFunction();
  f.c[1] = s.has("y") ? trig_list(s, "y") : TestFunction();
  if (!s.has("x") && !s.has("y")) s.fail("", "needs an x or y component");
  s.finish();
  return f;
}

KernelSpec parse_kernel(const Section& s) {
  const std::string type = s.string("type");
  KernelSpec k;
  if (type == "zero") {
    k = KernelSpec::zero();
  } else if (type == "bounded-fourier") {
    VectorField f;
    f.c[0] = trig_list(s, "x");
    f.c[1] = trig_list(s, "y");
    k = KernelSpec::bounded_fourier(std::move(f));
  } else if (type == "biot-savart") {
    const auto kmax = s.integer("kmax", 0);
    if (kmax < 0) s.fail("kmax", "must be >= 0");
    k = KernelSpec::biot_savart(static_cast<int>(kmax), s.boolean("near_field_split", true));
  } else {
    s.fail("type", "unknown kernel type '" + type + "' (zero, bounded-fourier, biot-savart)");
  }
  s.finish();
  return k;
}

void parse_rho0(const Section& s, PhysicsSpec& p) {
  p.rho0_type = s.string("type");
  if (p.rho0_type == "uniform") {
  } else if (p.rho0_type == "taylor-green") {
    p.tg_amplitude = s.number("amplitude", 0.5);
    if (!(std::abs(p.tg_amplitude) < 1.0)) s.fail("amplitude", "|amplitude| must be < 1 for a positive density");
    // cos x1 cos x2 = (cos(x1 + x2) + cos(x1 - x2)) / 2
    p.rho0_perturbation = TestFunction::cosine({1, 1}, p.tg_amplitude / 2) +
                          TestFunction::cosine({1, -1}, p.tg_amplitude / 2);
  } else if (p.rho0_type == "trig") {
    p.rho0_perturbation = trig_list(s, "perturbation");
    if (std::abs(p.rho0_perturbation.coeff({0, 0})) > 0.0)
      s.fail("perturbation", "must have no constant term (the density is (2pi)^-2 (1 + p))");
  } else {
    s.fail("type", "unknown rho0 type '" + p.rho0_type + "' (uniform, taylor-green, trig)");
  }
  s.finish();
}

PhysicsSpec parse_physics(const Section& s, bool needs_dynamics) {
  PhysicsSpec p;
  p.sigma = needs_dynamics ? s.number("sigma") : s.number("sigma", 0.0);
  if (p.sigma < 0.0) s.fail("sigma", "must be >= 0");
  if (needs_dynamics || s.has("kernel"))
    p.kernel = parse_kernel(s.child("kernel"));
  if (auto d = s.optional_child("drift")) p.drift = vector_field(*d);
  parse_rho0(s.child("rho0"), p);
  s.finish();
  return p;
}

std::vector<NamedPhi> parse_phi_list(const Section& s) {
  std::vector<NamedPhi> out;
  std::set<std::string> names;
  for (const Section& e : s.children("phi")) {
    NamedPhi p;
    p.name = e.string("name");
    if (p.name.empty() || p.name.find_first_of("/ =") != std::string::npos)
      e.fail("name", "must be nonempty without '/', '=' or spaces");
    if (!names.insert(p.name).second) e.fail("name", "duplicate test function name");
    p.phi = trig_list(e, "terms");
    if (p.phi.empty()) e.fail("terms", "test function is zero");
    e.finish();
    out.push_back(std::move(p));
  }
  if (out.empty()) s.fail("phi", "at least one test function is required");
  return out;
}

std::vector<std::size_t> sizes(const Section& s, const std::string& key) {
  std::vector<std::size_t> out;
  for (auto v : s.integers(key)) {
    if (v < 1) s.fail(key, "particle numbers must be >= 1");
    out.push_back(static_cast<std::size_t>(v));
  }
  if (out.empty()) s.fail(key, "at least one value is required");
  return out;
}

void parse_times(const Section& s, Plan& plan, bool check_horizon) {
  plan.times = s.numbers("times");
  if (plan.times.empty()) s.fail("times", "at least one time is required");
  for (double t : plan.times) {
    if (t < 0.0) s.fail("times", "times must be >= 0");
    if (check_horizon && t > plan.horizon + 1e-12) s.fail("times", "time " + tag(t) + " exceeds the horizon");
  }
}

bool uses_particles(const std::string& kind) {
  return kind == "simulate" || kind == "clt" || kind == "marginal-w1";
}

void parse_numerics(const Section& s, Plan& p) {
  const std::string& kind = p.kind;
  p.grid = static_cast<int>(s.integer("grid", 64));
  if (p.grid < 8 || p.grid % 2 != 0) s.fail("grid", "must be an even number >= 8");
  if (kind != "ldp-check") {
    p.dt_pde = s.number("dt_pde", 1e-3);
    if (!(p.dt_pde > 0.0)) s.fail("dt_pde", "must be positive");
    p.dealias = s.number("dealias", 2.0 / 3.0);
    if (!(p.dealias > 0.0 && p.dealias <= 1.0)) s.fail("dealias", "must lie in (0, 1]");
    p.horizon = s.number("horizon");
    if (!(p.horizon > 0.0)) s.fail("horizon", "must be positive");
  }
  if (uses_particles(kind)) {
    p.n = sizes(s, "n");
    p.dt = s.number("dt", 1e-3);
    if (!(p.dt > 0.0)) s.fail("dt", "must be positive");
    if (!p.physics.kernel.bounded()) {
      p.delta = s.numbers("delta", {});
      for (double d : p.delta)
        if (!(d > 0.0)) s.fail("delta", "mollification radii must be positive");
    }
  }
  if (kind == "clt") {
    if (auto c = s.optional_child("dt_check")) {
      const auto n = c->integer("n");
      if (n < 1) c->fail("n", "must be >= 1");
      p.dt_check_n = static_cast<std::size_t>(n);
      p.dt_check_factor = c->number("factor", 0.5);
      if (!(p.dt_check_factor > 0.0)) c->fail("factor", "must be positive");
      c->finish();
    }
  }
  if (kind == "spde-sim") {
    p.cutoff = static_cast<int>(s.integer("cutoff", -1));
    if (p.cutoff == 0 || p.cutoff >= p.grid / 2) s.fail("cutoff", "must be -1 (M/3) or in [1, M/2)");
  }
  s.finish();
}

std::size_t replica_count(const Section& s, std::size_t min, std::size_t fallback = 0) {
  const std::size_t r = fallback ? s.unsigned_integer("replicas", fallback) : s.unsigned_integer("replicas");
  if (r < min) s.fail("replicas", "must be >= " + std::to_string(min));
  return r;
}

void parse_level(const Section& s, Plan& p) {
  p.level = s.number("level", 0.99);
  if (!(p.level > 0.0 && p.level < 1.0)) s.fail("level", "must lie in (0, 1)");
}

void parse_statistics(const Section& s, Plan& p) {
  const std::string& kind = p.kind;
  if (kind == "meanfield") {
    parse_times(s, p, true);
  } else if (kind == "backward") {
    p.phi = parse_phi_list(s);
    parse_times(s, p, true);
    p.eta0_radius = static_cast<int>(s.integer("eta0_radius", 4));
  } else if (kind == "clt") {
    p.phi = parse_phi_list(s);
    parse_times(s, p, true);
    p.replicas = replica_count(s, 2);
    parse_level(s, p);
    p.alpha = s.number("alpha", 0.01);
    if (!(p.alpha > 0.0 && p.alpha < 0.5)) s.fail("alpha", "must lie in (0, 0.5)");
  } else if (kind == "spde-sim") {
    p.phi = parse_phi_list(s);
    parse_times(s, p, true);
    p.replicas = replica_count(s, 2);
    parse_level(s, p);
    p.eta0_radius = static_cast<int>(s.integer("eta0_radius", -1));
  } else if (kind == "marginal-w1") {
    parse_times(s, p, true);
    p.replicas = replica_count(s, 1);
    parse_level(s, p);
    const auto d = s.integer("directions", 8);
    if (d < 1 || d > 8) s.fail("directions", "must lie in [1, 8]");
    p.directions = static_cast<std::size_t>(d);
    p.null_replicas = s.unsigned_integer("null_replicas", 20);
    if (p.null_replicas < 2) s.fail("null_replicas", "must be >= 2");
  } else if (kind == "simulate") {
    parse_times(s, p, true);
    p.replicas = replica_count(s, 1, 1);
    for (const auto& m : s.value("modes")) {
      if (!m.is_array() || m.size() != 2 || !m[0].is_number_integer() || !m[1].is_number_integer())
        s.fail("modes", "expected a list of [k1, k2]");
      p.record_modes.push_back({m[0].get<int>(), m[1].get<int>()});
    }
    p.keep_positions = s.boolean("keep_positions", false);
  } else if (kind == "ldp-check") {
    parse_level(s, p);
  }
  s.finish();
}

void parse_checks(const Section& root, Plan& p) {
  std::set<std::string> labels;
  for (const Section& c : root.children("checks")) {
    LdpCheck k;
    k.type = c.string("type");
    static const std::set<std::string> types{"hminus", "exp-jw", "exp-us", "exp-us-constant", "cross-term"};
    if (!types.count(k.type)) c.fail("type", "unknown check type '" + k.type + "'");
    k.label = c.string("label", k.type);
    if (!labels.insert(k.label).second) c.fail("label", "duplicate check label");
    k.n = sizes(c, "n");
    k.samples = c.unsigned_integer("samples");
    if (k.samples < 2) c.fail("samples", "must be >= 2");
    if (k.type == "hminus") {
      k.alpha = c.number("alpha", 2.0);
      if (!(k.alpha > 1.0)) c.fail("alpha", "must exceed 1 (d/2)");
      k.truncation = static_cast<int>(c.integer("truncation", 32));
      if (k.truncation < 1) c.fail("truncation", "must be >= 1");
    } else if (k.type == "cross-term") {
      NamedPhi phi;
      phi.name = "phi";
      phi.phi = trig_list(c, "phi");
      k.phi = phi;
    } else {
      k.amplitude = c.number("amplitude", 0.2);
      if (k.type == "exp-jw") k.k = c.has("k") ? wave_vector(c, "k") : WaveVector{1, 0};
    }
    c.finish();
    p.checks.push_back(std::move(k));
  }
  if (p.checks.empty()) root.fail("checks", "at least one check is required");
}

void parse_assertions(const Section& root, Plan& p) {
  if (!root.has("assertions")) return;
  for (const Section& a : root.children("assertions")) {
    Assertion x;
    x.metric = a.string("metric");
    x.label = a.string("label", x.metric);
    if (a.has("min")) x.min = a.number("min");
    if (a.has("max")) x.max = a.number("max");
    if (a.has("equals")) {
      const json& v = a.value("equals");
      if (!v.is_boolean()) a.fail("equals", "expected true/false");
      x.equals = v.get<bool>();
    }
    if (!x.min && !x.max && !x.equals) a.fail("", "an assertion needs min, max or equals");
    a.finish();
    p.assertions.push_back(std::move(x));
  }
}

// -- output helpers -----------------------------------------------------------------------------

class Table {
 public:
  explicit Table(std::vector<std::string> header) : header_(std::move(header)) {}

  template <class... Args>
  void add(const Args&... cells) {
    std::vector<std::string> r;
    (r.push_back(cell(cells)), ...);
    if (r.size() != header_.size()) throw std::logic_error("table row width mismatch");
    rows_.push_back(std::move(r));
  }

  void write(const fs::path& path) const {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write " + path.string());
    auto line = [&](const std::vector<std::string>& r) {
      for (std::size_t i = 0; i < r.size(); ++i) out << (i ? "," : "") << r[i];
      out << '\n';
    };
    line(header_);
    for (const auto& r : rows_) line(r);
  }

  const std::vector<std::string>& header() const { return header_; }

 private:
  static std::string cell(const std::string& s) { return s; }
  static std::string cell(const char* s) { return s; }
  static std::string cell(double v) { return format_double(v); }
  static std::string cell(bool v) { return v ? "true" : "false"; }
  static std::string cell(int v) { return std::to_string(v); }
  static std::string cell(std::size_t v) { return std::to_string(v); }

  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

/// Collects metrics and table files of a run.
class Output {
 public:
  Output(fs::path dir, std::ostream& log, bool quiet) : dir_(std::move(dir)), log_(log), quiet_(quiet) {}

  void metric(const std::string& name, double v) { metrics_[name] = std::isfinite(v) ? json(v) : json(nullptr); }
  void metric(const std::string& name, bool v) { metrics_[name] = v; }
  void table(const std::string& name, const Table& t) {
    t.write(dir_ / name);
    files_.insert(name);
    plots_.emplace_back(name, t.header());
  }
  void file(const std::string& name, const json& j) {
    const fs::path p = dir_ / name;
    fs::create_directories(p.parent_path());
    write_json(p, j);
    files_.insert(name);
  }
  void note(const std::string& s) {
    if (!quiet_) log_ << s << std::endl;
  }

  const fs::path& dir() const { return dir_; }
  const json& metrics() const { return metrics_; }
  const std::set<std::string>& files() const { return files_; }
  const std::vector<std::pair<std::string, std::vector<std::string>>>& plots() const { return plots_; }

 private:
  fs::path dir_;
  std::ostream& log_;
  bool quiet_;
  json metrics_ = json::object();
  std::set<std::string> files_;
  std::vector<std::pair<std::string, std::vector<std::string>>> plots_;
};

// -- physics helpers ----------------------------------------------------------------------------

MFSolverConfig mf_config(const Plan& p, const PhysicsSpec& ph) {
  MFSolverConfig c;
  c.grid_size = p.grid;
  c.dt = p.dt_pde;
  c.dealias = p.dealias;
  c.sigma = ph.sigma;
  c.kernel = ph.kernel;
  c.drift = ph.drift;
  return c;
}

LinearConfig linear_config(const Plan& p, const PhysicsSpec& ph) {
  LinearConfig c;
  c.sigma = ph.sigma;
  c.kernel = ph.kernel;
  c.drift = ph.drift;
  c.dt = p.dt_pde;
  c.dealias = p.dealias;
  return c;
}

double max_time(const Plan& p) {
  double t = p.horizon;
  for (double s : p.times) t = std::max(t, s);
  return t;
}

/// <u, phi> = sum_k c_k u-hat(-k)
double pair_field(const TestFunction& phi, const SpectralField& u) {
  cd s = 0.0;
  for (const auto& [k, c] : phi.terms()) s += c * u[-k];
  return s.real();
}

std::vector<WaveVector> observed_modes(const std::vector<NamedPhi>& phis) {
  std::set<WaveVector> m;
  for (const auto& p : phis)
    for (const auto& [k, c] : p.phi.terms()) {
      m.insert(k);
      m.insert(-k);
    }
  return {m.begin(), m.end()};
}

double pair_field_modes(const TestFunction& phi, const std::vector<WaveVector>& modes, const std::vector<cd>& eta) {
  return pair_fluctuation(phi, modes, eta);
}

double mean_of(const Samples& x) { return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size()); }

// -- experiment runners -------------------------------------------------------------------------

void run_meanfield(const Plan& p, Output& out) {
  const MFSolverConfig mfc = mf_config(p, p.physics);
  const SpectralField rho0 = p.physics.rho0(p.grid);
  const MeanFieldHistory hist = mf_solve(rho0, max_time(p), mfc);

  Table diag({"t", "mass", "min_value", "tail_fraction", "max_velocity"});
  double mass_drift = 0.0, min_value = INFINITY, tail = 0.0;
  const double mass0 = hist.diagnostics().front().mass;
  for (const auto& d : hist.diagnostics()) {
    diag.add(d.t, d.mass, d.min_value, d.tail_fraction, d.max_velocity);
    mass_drift = std::max(mass_drift, std::abs(d.mass - mass0));
    min_value = std::min(min_value, d.min_value);
    tail = std::max(tail, d.tail_fraction);
  }
  out.table("diagnostics.csv", diag);
  out.metric("meanfield/mass_drift", mass_drift);
  out.metric("meanfield/min_value", min_value);
  out.metric("meanfield/max_tail_fraction", tail);

  // Taylor-Green decays in closed form when the transport term vanishes on it.
  const SpectralField tr = mf_transport(rho0, mfc);
  const bool closed_form = p.physics.rho0_type == "taylor-green" && p.physics.drift.is_zero() &&
                           tr.coeffs().abs().maxCoeff() < 1e-12;
  Table snaps({"t", "min_value", "max_value", "tg_max_error"});
  for (double t : p.times) {
    const SpectralField f = hist.at(t);
    json rec = to_json(f);
    rec["t"] = t;
    out.file("fields/rho_t" + tag(t) + ".json", rec);
    const GridArray g = transform_to_grid(f);
    double err = kNaN;
    if (closed_form) {
      const double h = grid_spacing(p.grid);
      const double a = p.physics.tg_amplitude * std::exp(-2.0 * p.physics.sigma * t);
      err = 0.0;
      for (int i = 0; i < p.grid; ++i)
        for (int j = 0; j < p.grid; ++j) {
          const double exact = (1.0 + a * std::cos(i * h) * std::cos(j * h)) / kTorusArea;
          err = std::max(err, std::abs(g(i, j) - exact));
        }
      out.metric("meanfield/t=" + tag(t) + "/tg_max_error", err);
    }
    snaps.add(t, g.minCoeff(), g.maxCoeff(), err);
    out.metric("meanfield/t=" + tag(t) + "/min_value", g.minCoeff());
  }
  out.table("snapshots.csv", snaps);
}

void run_backward(const Plan& p, Output& out) {
  Table cov({"case", "phi", "t", "var", "initial", "noise"});
  Table dual({"case", "phi", "T", "forward", "dual", "rel_error"});
  double worst = 0.0;
  for (std::size_t ci = 0; ci < p.cases.size(); ++ci) {
    const Case& c = p.cases[ci];
    out.note("backward: case " + c.label);
    const MFSolverConfig mfc = mf_config(p, c.physics);
    const LinearConfig lc = linear_config(p, c.physics);
    const SpectralField rho0 = c.physics.rho0(p.grid);
    const MeanFieldHistory hist = mf_solve(rho0, p.horizon, mfc);

    const Eta0Sampler sampler(rho0, square_modes(p.eta0_radius));
    Engine eng = make_stream(p.seed, ci, StreamTag::initial);
    const SpectralField u0 = sampler.draw_field(eng, p.grid);
    const LinearSeries fwd = forward_linearized(u0, p.horizon, hist, lc);

    for (const auto& np : p.phi) {
      const BackwardSolution bs = backward_solve(np.phi, p.horizon, hist, lc);
      json exp = {{"t", p.horizon}, {"s", json::array()}, {"fields", json::array()}};
      std::set<double> export_s{0.0};
      for (double t : p.times) export_s.insert(t);
      for (double s : export_s) {
        exp["s"].push_back(s);
        exp["fields"].push_back(to_json(bs.at(s)));
      }
      out.file("backward/" + c.label + "_" + np.name + ".json", exp);

      const double lhs = pair_field(np.phi, fwd.u.back());
      const double rhs = pairing(u0, bs.initial()).real();
      const double rel = std::abs(lhs - rhs) / (std::abs(rhs) + 1e-12);
      worst = std::max(worst, rel);
      dual.add(c.label, np.name, p.horizon, lhs, rhs, rel);
      const std::string key = "backward/" + c.label + "/" + np.name;
      out.metric(key + "/duality_rel_error", rel);

      for (double t : p.times) {
        const OUCovariance v = ou_covariance(np.phi, t, hist, lc);
        cov.add(c.label, np.name, t, v.var, v.initial, v.noise);
        out.metric(key + "/t=" + tag(t) + "/ou_var", v.var);
      }
    }
  }
  out.metric("backward/duality_max_rel_error", worst);
  out.table("duality.csv", dual);
  out.table("covariance.csv", cov);
}

struct CltRun {
  std::size_t n = 0;
  double dt = 0.0;
  double delta = kNaN;  // NaN: bounded kernel, no mollification
  std::string key;
  std::size_t stream = 0;  // runs differing only in delta share random numbers
};

void run_clt(const Plan& p, Output& out, const RunOptions& opt) {
  const PhysicsSpec& ph = p.physics;
  const MFSolverConfig mfc = mf_config(p, ph);
  const LinearConfig lc = linear_config(p, ph);
  const SpectralField rho0 = ph.rho0(p.grid);
  const MeanFieldHistory hist = mf_solve(rho0, max_time(p), mfc);
  const std::vector<WaveVector> modes = observed_modes(p.phi);

  Table cov({"phi", "t", "var", "initial", "noise"});
  std::map<std::pair<std::string, double>, double> ou;
  for (const auto& np : p.phi)
    for (double t : p.times) {
      const OUCovariance v = ou_covariance(np.phi, t, hist, lc);
      ou[{np.name, t}] = v.var;
      cov.add(np.name, t, v.var, v.initial, v.noise);
      out.metric("clt/ou/" + np.name + "/t=" + tag(t), v.var);
    }
  out.table("covariance.csv", cov);

  std::vector<CltRun> runs;
  auto add_runs = [&](std::size_t n, double dt, bool dt_variant) {
    std::vector<double> deltas = ph.kernel.bounded() ? std::vector<double>{kNaN} : p.delta;
    if (deltas.empty()) deltas.push_back(default_mollification_radius(n));
    const std::size_t stream = runs.empty() ? 0 : runs.back().stream + 1;
    for (double d : deltas) {
      std::string key = "N=" + std::to_string(n);
      if (dt_variant) key += "/dt=" + tag(dt);
      if (!std::isnan(d)) key += "/delta=" + tag(d);
      runs.push_back({n, dt, d, key, stream});
    }
  };
  for (std::size_t n : p.n) add_runs(n, p.dt, false);
  if (p.dt_check_n) add_runs(*p.dt_check_n, p.dt * p.dt_check_factor, true);

  Table cmp({"run", "N", "dt", "delta", "phi", "t", "replicas", "mean", "var", "ci_low", "ci_high",
             "boot_low", "boot_high", "ou_var", "ratio", "rel_error", "skewness", "excess_kurtosis",
             "ks", "normal"});
  Table samples({"run", "replica", "phi", "t", "value"});
  for (std::size_t ri = 0; ri < runs.size(); ++ri) {
    const CltRun& run = runs[ri];
    out.note("clt: run " + run.key);
    SimConfig sc;
    sc.n = run.n;
    sc.dt = run.dt;
    sc.horizon = max_time(p);
    sc.sigma = ph.sigma;
    sc.kernel = std::isnan(run.delta) ? ph.kernel : mollify(ph.kernel, run.delta);
    sc.drift = ph.drift;
    sc.seed = derive_seed(p.seed, 1, run.stream);
    sc.deterministic = opt.deterministic;
    std::vector<Observer> obs;
    for (double t : p.times) obs.push_back({t, modes, false});
    const auto trajs = replica_run(sc, rho0, obs, p.replicas, opt.workers);

    // values[phi][t] over replicas
    std::map<std::pair<std::string, double>, Samples> values;
    for (const auto& tr : trajs) {
      const FluctuationSeries fs = fluctuation_series(tr, hist, modes);
      for (std::size_t ti = 0; ti < p.times.size(); ++ti)
        for (const auto& np : p.phi) {
          const double v = pair_fluctuation(np.phi, fs.modes, fs.values[ti]);
          values[{np.name, p.times[ti]}].push_back(v);
          samples.add(run.key, static_cast<std::size_t>(tr.replica_id), np.name, p.times[ti], v);
        }
    }
    for (const auto& np : p.phi)
      for (std::size_t ti = 0; ti < p.times.size(); ++ti) {
        const double t = p.times[ti];
        const Samples& x = values[{np.name, t}];
        const VarianceCI ci = variance_ci(x, p.level, derive_seed(p.seed, 2, ri * 1000 + ti), true);
        // The calibrated normality bands need at least 200 samples.
        const bool tested = x.size() >= 200;
        const NormalityReport nr = tested ? normality_test(x, p.alpha) : NormalityReport{};
        const double o = ou[{np.name, t}];
        const double ratio = ci.variance / o;
        const double rel = std::abs(ci.variance - o) / o;
        cmp.add(run.key, run.n, run.dt, run.delta, np.name, t, p.replicas, ci.mean, ci.variance, ci.ci_low,
                ci.ci_high, ci.boot_low, ci.boot_high, o, ratio, rel, tested ? nr.skewness : kNaN,
                tested ? nr.excess_kurtosis : kNaN, tested ? nr.ks : kNaN,
                std::string(tested ? (nr.pass ? "true" : "false") : "untested"));
        const std::string key = "clt/" + run.key + "/" + np.name + "/t=" + tag(t);
        out.metric(key + "/mean", ci.mean);
        out.metric(key + "/var", ci.variance);
        out.metric(key + "/ci_low", ci.ci_low);
        out.metric(key + "/ci_high", ci.ci_high);
        out.metric(key + "/ou_var", o);
        out.metric(key + "/ratio", ratio);
        out.metric(key + "/rel_error", rel);
        if (tested) out.metric(key + "/normal", nr.pass);
      }
  }
  out.table("comparison.csv", cmp);
  out.table("samples.csv", samples);
}

void run_ldp(const Plan& p, Output& out, const RunOptions& opt) {
  const SpectralField rho = p.physics.rho0(p.grid);
  for (std::size_t ci = 0; ci < p.checks.size(); ++ci) {
    const LdpCheck& c = p.checks[ci];
    out.note("ldp-check: " + c.label);
    const std::uint64_t seed = derive_seed(p.seed, 3, ci);
    const std::string key = "ldp/" + c.label;
    if (c.type == "hminus" || c.type == "cross-term") {
      std::vector<ScalingRow> rows;
      if (c.type == "hminus")
        rows = hminus_scaling(c.n, rho, c.alpha, c.samples, c.truncation, seed, opt.workers);
      else
        rows = cross_term_scaling(c.n, p.physics.kernel, c.phi->phi, rho, c.samples, seed, opt.workers);
      Table t({"N", "samples", "estimate", "se", "analytic", "z"});
      for (const auto& r : rows) {
        const double z = std::isnan(r.analytic) ? kNaN : (r.estimate - r.analytic) / r.se;
        t.add(r.n, r.m, r.estimate, r.se, r.analytic, z);
        const std::string rk = key + "/N=" + std::to_string(r.n);
        out.metric(rk + "/estimate", r.estimate);
        out.metric(rk + "/se", r.se);
        if (!std::isnan(r.analytic)) {
          out.metric(rk + "/analytic", r.analytic);
          out.metric(rk + "/z", z);
        }
      }
      out.table(c.label + ".csv", t);
      continue;
    }
    TwoPointFunction phi;
    ExpIntegralKind kind = ExpIntegralKind::squared;
    if (c.type == "exp-jw") {
      phi = TwoPointFunction::jabin_wang(c.amplitude, c.k, rho);
      kind = ExpIntegralKind::linear;
    } else if (c.type == "exp-us") {
      phi = TwoPointFunction::joint_cancelling(c.amplitude, rho);
    } else {
      phi = TwoPointFunction::constant(c.amplitude);
    }
    std::vector<ExpIntegral> rows;
    Table t({"N", "samples", "estimate", "se", "ci_low", "ci_high", "heavy_tail"});
    for (std::size_t n : c.n) {
      const ExpIntegral e = exp_integral(phi, kind, rho, n, c.samples, seed, p.level, opt.workers);
      rows.push_back(e);
      t.add(e.n, e.m, e.estimate, e.se, e.ci_low, e.ci_high, e.heavy_tail);
      const std::string rk = key + "/N=" + std::to_string(n);
      out.metric(rk + "/estimate", e.estimate);
      out.metric(rk + "/se", e.se);
      out.metric(rk + "/heavy_tail", e.heavy_tail);
    }
    const bool flat = flat_in_n(rows, p.level);
    out.metric(key + "/flat", flat);
    // Growth: no common point of the simultaneous intervals and the largest N on top.
    const auto& lo = rows.front();
    const auto& hi = rows.back();
    out.metric(key + "/growth_ratio", hi.estimate / lo.estimate);
    out.metric(key + "/significant_growth", !flat && hi.estimate > lo.estimate);
    out.table(c.label + ".csv", t);
  }
}

void run_spde(const Plan& p, Output& out, const RunOptions& opt) {
  const PhysicsSpec& ph = p.physics;
  const MFSolverConfig mfc = mf_config(p, ph);
  const LinearConfig lc = linear_config(p, ph);
  const SpectralField rho0 = ph.rho0(p.grid);
  const double horizon = max_time(p);
  const MeanFieldHistory hist = mf_solve(rho0, horizon, mfc);
  const Background bg(hist, lc, forward_nodes(horizon, p.dt_pde));
  const int cutoff = p.cutoff < 0 ? p.grid / 3 : p.cutoff;
  const int radius = p.eta0_radius < 0 ? std::min(cutoff, 15) : p.eta0_radius;
  const Eta0Sampler sampler(rho0, square_modes(radius));
  const std::vector<WaveVector> modes = observed_modes(p.phi);

  SPDEOptions so;
  so.cutoff = p.cutoff;
  so.record_times = p.times;
  so.record_modes = modes;
  std::vector<OUPath> paths(p.replicas);
  for_each_replica(p.replicas, opt.workers, [&](std::size_t r) {
    Engine eng = make_stream(p.seed, r, StreamTag::initial);
    const SpectralField eta0 = sampler.draw_field(eng, p.grid);
    paths[r] = spde_simulate(eta0, horizon, bg, lc, p.seed, r, so);
  });

  Table cmp({"phi", "t", "paths", "mean", "var", "se", "ou_var", "z", "rel_error"});
  Table samples({"replica", "phi", "t", "value"});
  for (const auto& np : p.phi)
    for (std::size_t ti = 0; ti < p.times.size(); ++ti) {
      const double t = p.times[ti];
      Samples x;
      for (const auto& path : paths) {
        x.push_back(pair_field_modes(np.phi, modes, path.values[ti]));
        samples.add(static_cast<std::size_t>(path.replica_id), np.name, t, x.back());
      }
      const VarianceCI ci = variance_ci(x, p.level, 0, false);
      const double o = ou_covariance(np.phi, t, hist, lc).var;
      const double z = (ci.variance - o) / ci.se;
      cmp.add(np.name, t, p.replicas, ci.mean, ci.variance, ci.se, o, z, std::abs(ci.variance - o) / o);
      const std::string key = "spde/" + np.name + "/t=" + tag(t);
      out.metric(key + "/var", ci.variance);
      out.metric(key + "/se", ci.se);
      out.metric(key + "/ou_var", o);
      out.metric(key + "/z", z);
      out.metric(key + "/abs_z", std::abs(z));
    }
  out.table("comparison.csv", cmp);
  out.table("samples.csv", samples);
}

void run_marginal(const Plan& p, Output& out, const RunOptions& opt) {
  const PhysicsSpec& ph = p.physics;
  const SpectralField rho0 = ph.rho0(p.grid);
  const MeanFieldHistory hist = mf_solve(rho0, max_time(p), mf_config(p, ph));
  const std::vector<WaveVector> dirs = lattice_directions(p.directions, derive_seed(p.seed, 4));
  const double zcrit = boost::math::quantile(boost::math::normal(), p.level);

  Table tab({"N", "t", "replicas", "w1", "scaled", "null_mean", "null_sd", "excess", "excess_sd"});
  // excess[t] per N: sqrt(N) (W - mean null floor)
  std::map<double, std::vector<std::array<double, 3>>> trend;
  for (std::size_t ni = 0; ni < p.n.size(); ++ni) {
    const std::size_t n = p.n[ni];
    out.note("marginal-w1: N = " + std::to_string(n));
    SimConfig sc;
    sc.n = n;
    sc.dt = p.dt;
    sc.horizon = max_time(p);
    sc.sigma = ph.sigma;
    sc.kernel = ph.kernel.bounded() ? ph.kernel
                                    : mollify(ph.kernel, p.delta.empty() ? default_mollification_radius(n)
                                                                         : p.delta.front());
    sc.drift = ph.drift;
    sc.seed = derive_seed(p.seed, 5, ni);
    sc.deterministic = opt.deterministic;
    std::vector<Observer> obs;
    for (double t : p.times) obs.push_back({t, {}, true});
    std::vector<Trajectory> trajs;
    if (p.replicas == 1) {
      trajs.push_back(simulate(sc, rho0, obs));
    } else {
      trajs = replica_run(sc, rho0, obs, p.replicas, opt.workers);
    }
    for (std::size_t ti = 0; ti < p.times.size(); ++ti) {
      const double t = p.times[ti];
      // Pooling all particles of all replicas samples the one-particle marginal law.
      Points pooled(2, static_cast<Eigen::Index>(n * trajs.size()));
      for (std::size_t r = 0; r < trajs.size(); ++r)
        pooled.middleCols(static_cast<Eigen::Index>(r * n), static_cast<Eigen::Index>(n)) =
            trajs[r].snapshots[ti].state->positions;
      const SpectralField rho_t = hist.at(t);
      const double w = sliced_marginal_w1(pooled, rho_t, dirs);

      // Sampling floor of the same statistic for i.i.d. draws of the same size from rho_t.
      const DensitySampler sampler(rho_t);
      Samples floor(p.null_replicas);
      const std::uint64_t null_seed = derive_seed(p.seed, 6, ni * 1000 + ti);
      for_each_replica(p.null_replicas, opt.workers, [&](std::size_t j) {
        Engine eng = make_stream(null_seed, j, StreamTag::initial);
        floor[j] = sliced_marginal_w1(sampler.draw(static_cast<std::size_t>(pooled.cols()), eng), rho_t, dirs);
      });
      const double m0 = mean_of(floor);
      double v0 = 0.0;
      for (double f : floor) v0 += (f - m0) * (f - m0);
      v0 /= static_cast<double>(floor.size() - 1);
      const double sn = std::sqrt(static_cast<double>(n));
      const double excess = sn * (w - m0);
      // Observed statistic and floor mean both fluctuate.
      const double excess_sd = sn * std::sqrt(v0 * (1.0 + 1.0 / static_cast<double>(floor.size())));
      tab.add(n, t, trajs.size(), w, sn * w, m0, std::sqrt(v0), excess, excess_sd);
      const std::string key = "marginal/t=" + tag(t) + "/N=" + std::to_string(n);
      out.metric(key + "/w1", w);
      out.metric(key + "/scaled", sn * w);
      out.metric(key + "/excess", excess);
      out.metric(key + "/excess_sd", excess_sd);
      trend[t].push_back({std::log(static_cast<double>(n)), excess, excess_sd});
    }
  }
  for (const auto& [t, rows] : trend) {
    const std::string key = "marginal/t=" + tag(t);
    if (rows.size() < 2) continue;
    // Weighted least-squares slope of the excess against log N, one-sided test for growth.
    double sw = 0, sx = 0;
    for (const auto& r : rows) {
      const double w = 1.0 / (r[2] * r[2]);
      sw += w;
      sx += w * r[0];
    }
    const double xbar = sx / sw;
    double sxx = 0, sxy = 0;
    for (const auto& r : rows) {
      const double w = 1.0 / (r[2] * r[2]);
      sxx += w * (r[0] - xbar) * (r[0] - xbar);
      sxy += w * (r[0] - xbar) * r[1];
    }
    const double slope = sxy / sxx;
    const double z = slope * std::sqrt(sxx);
    out.metric(key + "/slope", slope);
    out.metric(key + "/growth_z", z);
    out.metric(key + "/bounded", z < zcrit);
  }
  out.table("marginal.csv", tab);
}

void run_simulate(const Plan& p, Output& out, const RunOptions& opt) {
  const PhysicsSpec& ph = p.physics;
  const SpectralField rho0 = ph.rho0(p.grid);
  Table modes({"N", "replica", "t", "k1", "k2", "re", "im"});
  for (std::size_t ni = 0; ni < p.n.size(); ++ni) {
    const std::size_t n = p.n[ni];
    SimConfig sc;
    sc.n = n;
    sc.dt = p.dt;
    sc.horizon = p.horizon;
    sc.sigma = ph.sigma;
    sc.kernel = ph.kernel.bounded() ? ph.kernel
                                    : mollify(ph.kernel, p.delta.empty() ? default_mollification_radius(n)
                                                                         : p.delta.front());
    sc.drift = ph.drift;
    sc.seed = derive_seed(p.seed, 7, ni);
    sc.deterministic = opt.deterministic;
    std::vector<Observer> obs;
    for (double t : p.times) obs.push_back({t, p.record_modes, p.keep_positions});
    std::vector<Trajectory> trajs;
    if (p.replicas == 1)
      trajs.push_back(simulate(sc, rho0, obs));
    else
      trajs = replica_run(sc, rho0, obs, p.replicas, opt.workers);
    for (const auto& tr : trajs)
      for (const auto& snap : tr.snapshots) {
        for (std::size_t m = 0; m < p.record_modes.size(); ++m)
          modes.add(n, static_cast<std::size_t>(tr.replica_id), snap.t, p.record_modes[m].k1, p.record_modes[m].k2,
                    snap.empirical[m].real(), snap.empirical[m].imag());
        if (snap.state) {
          Table pos({"i", "x1", "x2"});
          for (Eigen::Index i = 0; i < snap.state->positions.cols(); ++i)
            pos.add(static_cast<std::size_t>(i), snap.state->positions(0, i), snap.state->positions(1, i));
          out.table("positions/N" + std::to_string(n) + "_r" + std::to_string(tr.replica_id) + "_t" + tag(snap.t) +
                        ".csv",
                    pos);
        }
      }
    out.metric("simulate/N=" + std::to_string(n) + "/steps", static_cast<double>(sc.steps()));
  }
  out.table("modes.csv", modes);
}

void write_plot_script(const Output& out) {
  std::ofstream gp(out.dir() / "plot.gp");
  gp << "set datafile separator ','\nset key autotitle columnhead\n";
  for (const auto& [file, header] : out.plots()) {
    if (file.find('/') != std::string::npos) continue;
    gp << "\n# " << file << "\nset title '" << file << "'\nplot ";
    for (std::size_t c = 2; c <= header.size(); ++c)
      gp << (c > 2 ? ", \\\n     " : "") << "'" << file << "' using 1:" << c << " with points";
    gp << "\npause -1\n";
  }
}

json metadata(const Plan& p, const RunOptions& opt) {
  char when[32];
  const std::time_t now = std::time(nullptr);
  std::strftime(when, sizeof when, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  return {{"tclt_version", TCLT_VERSION},
          {"compiler", __VERSION__},
          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                        std::to_string(EIGEN_MINOR_VERSION)},
          {"boost", BOOST_LIB_VERSION},
          {"fftw", std::string(fftw_version)},
          {"rng_algorithm", rng_algorithm()},
          {"deterministic", opt.deterministic},
          {"workers", opt.workers},
          {"experiment", p.kind},
          {"config_hash", p.hash},
          {"started", when}};
}

}  // namespace

const std::vector<std::string>& experiment_kinds() {
  static const std::vector<std::string> k{"simulate", "meanfield", "backward", "clt",
                                          "ldp-check", "spde-sim", "marginal-w1"};
  return k;
}

SpectralField PhysicsSpec::rho0(int grid_size) const {
  TestFunction f = TestFunction::constant(1.0) + rho0_perturbation;
  f *= 1.0 / kTorusArea;
  return to_field(f, grid_size);
}

Plan load_plan(Document doc, const std::string& kind, const RunOptions& options) {
  const auto& kinds = experiment_kinds();
  if (std::find(kinds.begin(), kinds.end(), kind) == kinds.end())
    throw ValidationError("unknown experiment kind '" + kind + "'");
  Section root(doc, "");
  Plan p;
  p.kind = kind;
  const std::string declared = root.string("experiment", kind);
  if (declared != kind)
    root.fail("experiment", "config is for '" + declared + "' but the subcommand is '" + kind + "'");
  p.seed = root.unsigned_integer("seed");
  if (options.seed) {
    p.seed = *options.seed;
    doc.normalized()["seed"] = p.seed;
  }
  p.output = root.string("output", "");

  p.physics = parse_physics(root.child("physics"), kind != "ldp-check");
  if (kind == "ldp-check") {
    if (auto n = root.optional_child("numerics")) parse_numerics(*n, p);
    if (auto s = root.optional_child("statistics")) parse_statistics(*s, p);
    parse_checks(root, p);
  } else {
    parse_numerics(root.child("numerics"), p);
    parse_statistics(root.child("statistics"), p);
  }

  if (kind == "backward") {
    if (p.eta0_radius < 1 || p.eta0_radius > 15) root.fail("statistics.eta0_radius", "must lie in [1, 15]");
    if (root.has("cases")) {
      std::set<std::string> labels;
      for (const Section& c : root.children("cases")) {
        Case x{c.string("label"), p.physics};
        if (x.label.empty() || x.label.find_first_of("/ =") != std::string::npos)
          c.fail("label", "must be nonempty without '/', '=' or spaces");
        if (!labels.insert(x.label).second) c.fail("label", "duplicate case label");
        if (c.has("sigma")) {
          x.physics.sigma = c.number("sigma");
          if (x.physics.sigma < 0.0) c.fail("sigma", "must be >= 0");
        }
        if (c.has("kernel")) x.physics.kernel = parse_kernel(c.child("kernel"));
        if (auto d = c.optional_child("drift")) x.physics.drift = vector_field(*d);
        c.finish();
        p.cases.push_back(std::move(x));
      }
    } else {
      p.cases.push_back({"main", p.physics});
    }
  }
  if (kind == "spde-sim") {
    if (!(p.physics.sigma > 0.0)) root.fail("physics.sigma", "the SPDE needs sigma > 0");
    if (p.eta0_radius > 15) root.fail("statistics.eta0_radius", "at most 15 (1000 modes)");
  }
  if (kind == "clt" || kind == "spde-sim")
    for (const auto& np : p.phi)
      if (np.phi.degree() >= p.grid / 3) root.fail("statistics.phi", "test function '" + np.name + "' exceeds the grid band");
  parse_assertions(root, p);
  root.finish();

  p.normalized = doc.normalized();
  p.normalized.erase("output");
  p.hash = config_hash(p.normalized);
  return p;
}

Plan load_plan(const fs::path& config, const std::string& kind, const RunOptions& options) {
  return load_plan(load_document(config), kind, options);
}

json Plan::describe() const {
  json d = {{"experiment", kind}, {"config_hash", hash}, {"seed", seed}, {"grid", grid}};
  if (kind != "ldp-check") {
    d["horizon"] = horizon;
    d["pde_steps"] = static_cast<std::size_t>(std::ceil(horizon / dt_pde - 1e-9));
  }
  if (uses_particles(kind)) {
    const auto steps = static_cast<std::size_t>(std::ceil(horizon / dt - 1e-9));
    json runs = json::array();
    double total = 0.0;
    auto add = [&](std::size_t n, std::size_t st) {
      const std::size_t reps = std::max<std::size_t>(replicas, 1);
      const std::size_t copies = physics.kernel.bounded() ? 1 : std::max<std::size_t>(delta.size(), 1);
      runs.push_back({{"n", n}, {"steps", st}, {"replicas", reps}, {"variants", copies}});
      total += static_cast<double>(n) * static_cast<double>(st) * static_cast<double>(reps * copies);
    };
    for (std::size_t n : this->n) add(n, steps);
    if (dt_check_n) add(*dt_check_n, static_cast<std::size_t>(std::ceil(horizon / (dt * dt_check_factor) - 1e-9)));
    d["particle_runs"] = runs;
    d["particle_steps"] = total;
    d["pair_interactions"] = physics.kernel.bounded() ? "spectral O(N modes)" : "direct O(N^2)";
  }
  if (kind == "backward") {
    json c = json::array();
    for (const auto& x : cases) c.push_back({{"label", x.label}, {"sigma", x.physics.sigma}, {"kernel", x.physics.kernel.name()}});
    d["cases"] = c;
  }
  if (kind == "ldp-check") {
    json c = json::array();
    for (const auto& x : checks) c.push_back({{"label", x.label}, {"type", x.type}, {"n", x.n}, {"samples", x.samples}});
    d["checks"] = c;
  }
  if (!phi.empty()) {
    json names = json::array();
    for (const auto& np : phi) names.push_back(np.name);
    d["phi"] = names;
  }
  if (!times.empty()) d["times"] = times;
  if (replicas) d["replicas"] = replicas;
  d["assertions"] = assertions.size();
  return d;
}

void run_plan(const Plan& plan, const RunOptions& options, std::ostream& log) {
  const fs::path dir = options.out.empty() ? fs::path(plan.output) : options.out;
  if (dir.empty()) throw ConfigError("output", "no output directory (set `output` or pass --out)");
  const fs::path cfg = dir / "config.json";
  if (fs::exists(cfg)) {
    std::string old;
    try {
      std::ifstream in(cfg);
      old = config_hash(json::parse(in));
    } catch (const json::exception&) {
      old = "unreadable";
    }
    if (!options.force) {
      if (old == plan.hash)
        throw ConfigError("output", "run directory " + dir.string() + " already holds this config (hash " + old +
                                        "); pass --force to overwrite");
      throw ConfigError("output", "run directory " + dir.string() + " holds a different run (hash " + old +
                                      "); choose another --out or pass --force");
    }
    // Drop previous artifacts so a failed rerun never looks complete.
    try {
      const json prev = read_results(dir);
      for (const auto& f : prev.value("files", json::array())) fs::remove(dir / f.get<std::string>());
    } catch (const std::exception&) {
    }
    for (const char* f : {"results.json", "metadata.json", "config.json", "plot.gp"}) fs::remove(dir / f);
  }
  fs::create_directories(dir);
  write_json(cfg, plan.normalized);
  json meta = metadata(plan, options);
  meta["status"] = "running";
  write_json(dir / "metadata.json", meta);

  const auto t0 = std::chrono::steady_clock::now();
  Output out(dir, log, options.quiet);
  if (plan.kind == "meanfield")
    run_meanfield(plan, out);
  else if (plan.kind == "backward")
    run_backward(plan, out);
  else if (plan.kind == "clt")
    run_clt(plan, out, options);
  else if (plan.kind == "ldp-check")
    run_ldp(plan, out, options);
  else if (plan.kind == "spde-sim")
    run_spde(plan, out, options);
  else if (plan.kind == "marginal-w1")
    run_marginal(plan, out, options);
  else
    run_simulate(plan, out, options);
  if (options.emit_plot_script) write_plot_script(out);

  json results = {{"experiment", plan.kind},
                  {"config_hash", plan.hash},
                  {"metrics", out.metrics()},
                  {"files", json(out.files())}};
  write_json(dir / "results.json", results);
  meta["status"] = "complete";
  meta["wall_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_json(dir / "metadata.json", meta);
}

json read_results(const fs::path& dir) {
  const fs::path f = dir / "results.json";
  std::ifstream in(f);
  if (!in) throw ValidationError("missing " + f.string());
  json j = json::parse(in);
  if (!j.is_object() || !j.contains("metrics") || !j["metrics"].is_object())
    throw ValidationError("malformed " + f.string());
  return j;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ReplicaError*>(&e)) return 3;
  if (dynamic_cast<const NumericalError*>(&e) || dynamic_cast<const SingularityError*>(&e)) return 2;
  return 1;
}

json error_record(const std::exception& e) {
  json r = {{"message", e.what()}};
  if (const auto* c = dynamic_cast<const ConfigError*>(&e)) {
    r["kind"] = "validation";
    if (!c->field().empty()) r["field"] = c->field();
    if (c->line() > 0) r["line"] = c->line();
  } else if (const auto* x = dynamic_cast<const ReplicaError*>(&e)) {
    r["kind"] = "replica";
    r["replica"] = x->replica_id();
  } else if (const auto* n = dynamic_cast<const NumericalError*>(&e)) {
    r["kind"] = "numerical";
    r["time"] = n->time();
  } else if (dynamic_cast<const SingularityError*>(&e)) {
    r["kind"] = "numerical";
  } else {
    r["kind"] = "validation";
  }
  r["exit_code"] = exit_code_for(e);
  return {{"error", r}};
}

}  // namespace tclt::harness
