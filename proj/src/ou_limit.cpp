#include "tclt/ou_limit.hpp"

#include "tclt/errors.hpp"

#include <Eigen/Eigenvalues>
#include <boost/random/normal_distribution.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

namespace tclt {
namespace {

int radius_of(const LinearConfig& c, int m) {
  return std::min(m / 2 - 1, static_cast<int>(std::floor(c.dealias * m / 2.0 + 1e-12)));
}

void scale_by_heat(SpectralField& f, double sigma, double h) {
  if (sigma == 0.0) return;
  const int m = f.grid_size();
  for (int j = 0; j < m; ++j) {
    const int k2 = f.wavenumber(j);
    for (int i = 0; i < m; ++i) {
      const int k1 = f.wavenumber(i);
      f.coeffs()(i, j) *= std::exp(-sigma * double(k1 * k1 + k2 * k2) * h);
    }
  }
}

// Integrating-factor RK2 for du/dt = sigma Lap u + A(u), A evaluated at the two end nodes.
template <class OpA, class OpB>
SpectralField if_rk2(const SpectralField& u, double h, double sigma, int radius, OpA&& a_start,
                     OpB&& a_end, bool trivial) {
  SpectralField out = u;
  if (trivial) {
    scale_by_heat(out, sigma, h);
    truncate_modes(out, radius);
    return out;
  }
  SpectralField n0 = a_start(u);
  SpectralField stage = u;
  stage.coeffs() += h * n0.coeffs();
  scale_by_heat(stage, sigma, h);
  truncate_modes(stage, radius);
  const SpectralField n1 = a_end(stage);
  scale_by_heat(out, sigma, h);
  scale_by_heat(n0, sigma, h);
  out.coeffs() += (0.5 * h) * (n0.coeffs() + n1.coeffs());
  truncate_modes(out, radius);
  return out;
}

bool no_transport(const LinearConfig& c) { return c.kernel.is_zero() && c.drift.is_zero(); }

void require_finite(const SpectralField& f, double t, const char* what) {
  if (!f.coeffs().allFinite()) throw NumericalError(std::string(what) + ": non-finite coefficients", t);
}

}  // namespace

void LinearConfig::validate() const {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw ValidationError("linear solver: sigma must be >= 0");
  if (!(dt > 0.0) || !std::isfinite(dt)) throw ValidationError("linear solver: dt must be positive");
  if (!(dealias > 0.0 && dealias <= 1.0)) throw ValidationError("linear solver: dealias must lie in (0, 1]");
  if (std::holds_alternative<MollifiedKernel>(kernel.variant()))
    throw ValidationError("linear solver: use the unmollified kernel");
}

Background::Background(const MeanFieldHistory& rho, const LinearConfig& config,
                       std::vector<double> nodes)
    : m_(rho.grid_size()), nodes_(std::move(nodes)) {
  rho_.reserve(nodes_.size());
  sqrt_rho_.reserve(nodes_.size());
  vel_.reserve(nodes_.size());
  const std::array<SpectralField, 2> f =
      config.drift.is_zero() ? std::array<SpectralField, 2>{SpectralField(m_), SpectralField(m_)}
                             : to_field(config.drift, m_);
  for (double t : nodes_) {
    const SpectralField r = rho.at(t);
    GridArray g = transform_to_grid(r);
    clipped_ += static_cast<std::size_t>((g < 0.0).count());
    sqrt_rho_.push_back(g.max(0.0).sqrt());
    rho_.push_back(std::move(g));
    auto v = convolve_velocity(config.kernel, r);
    vel_.push_back({transform_to_grid(v[0] + f[0]), transform_to_grid(v[1] + f[1])});
  }
}

SpectralField backward_operator(const SpectralField& f, const Background& bg, std::size_t n,
                                const LinearConfig& config) {
  const int m = f.grid_size();
  const int radius = radius_of(config, m);
  const auto g = gradient(f);
  const GridArray g0 = transform_to_grid(g[0]);
  const GridArray g1 = transform_to_grid(g[1]);
  const auto& v = bg.velocity(n);
  SpectralField out = transform_to_coeffs(v[0] * g0 + v[1] * g1);
  if (!config.kernel.is_zero()) {
    std::array<SpectralField, 2> rg{transform_to_coeffs(bg.rho(n) * g0),
                                    transform_to_coeffs(bg.rho(n) * g1)};
    truncate_modes(rg[0], radius);
    truncate_modes(rg[1], radius);
    out += convolve_reflected(config.kernel, rg);
  }
  truncate_modes(out, radius);
  return out;
}

SpectralField forward_operator(const SpectralField& u, const Background& bg, std::size_t n,
                               const LinearConfig& config) {
  const int m = u.grid_size();
  const int radius = radius_of(config, m);
  const GridArray ug = transform_to_grid(u);
  const auto& v = bg.velocity(n);
  GridArray f0 = ug * v[0];
  GridArray f1 = ug * v[1];
  if (!config.kernel.is_zero()) {
    const auto w = convolve_velocity(config.kernel, u);
    f0 += bg.rho(n) * transform_to_grid(w[0]);
    f1 += bg.rho(n) * transform_to_grid(w[1]);
  }
  std::array<SpectralField, 2> flux{transform_to_coeffs(f0), transform_to_coeffs(f1)};
  truncate_modes(flux[0], radius);
  truncate_modes(flux[1], radius);
  SpectralField out = divergence(flux);
  out *= -1.0;
  truncate_modes(out, radius);
  return out;
}

const SpectralField& BackwardSolution::at(double time) const {
  for (std::size_t k = 0; k < s.size(); ++k)
    if (std::abs(s[k] - time) <= 1e-9 * std::max(1.0, t)) return f[k];
  throw ValidationError("BackwardSolution: time is not a grid node");
}

BackwardSolution backward_solve(const SpectralField& terminal, double t,
                                const MeanFieldHistory& rho, const LinearConfig& config) {
  config.validate();
  if (!(t >= 0.0) || t > rho.horizon() + 1e-9)
    throw ValidationError("backward_solve: terminal time outside the mean-field horizon");
  const int m = terminal.grid_size();
  if (m != rho.grid_size()) throw ValidationError("backward_solve: grid size mismatch");
  const int radius = radius_of(config, m);

  const auto steps = static_cast<std::size_t>(std::ceil(t / config.dt - 1e-9));
  std::vector<double> nodes(steps + 1);
  for (std::size_t k = 0; k <= steps; ++k) nodes[k] = std::max(0.0, t - static_cast<double>(k) * config.dt);
  nodes.back() = 0.0;
  const bool trivial = no_transport(config);
  const Background bg(rho, config, trivial ? std::vector<double>{} : nodes);

  std::vector<SpectralField> f{terminal};
  truncate_modes(f.back(), radius);
  for (std::size_t k = 0; k < steps; ++k) {
    const double h = nodes[k] - nodes[k + 1];
    f.push_back(if_rk2(
        f.back(), h, config.sigma, radius,
        [&](const SpectralField& x) { return backward_operator(x, bg, k, config); },
        [&](const SpectralField& x) { return backward_operator(x, bg, k + 1, config); }, trivial));
    require_finite(f.back(), nodes[k + 1], "backward_solve");
  }
  BackwardSolution out;
  out.t = t;
  out.s.assign(nodes.rbegin(), nodes.rend());
  out.f.assign(std::make_move_iterator(f.rbegin()), std::make_move_iterator(f.rend()));
  return out;
}

BackwardSolution backward_solve(const TestFunction& phi, double t, const MeanFieldHistory& rho,
                                const LinearConfig& config) {
  const int m = rho.grid_size();
  if (phi.degree() > radius_of(config, m))
    throw ValidationError("backward_solve: test function degree exceeds the dealias radius");
  SpectralField terminal = to_field(phi, m);
  return backward_solve(terminal, t, rho, config);
}

double integrate_nodes(const std::vector<double>& s, const std::vector<double>& g) {
  const std::size_t n = s.size() - 1;  // intervals
  if (s.size() < 2) return 0.0;
  const double h = (s.back() - s.front()) / static_cast<double>(n);
  bool uniform = true;
  for (std::size_t k = 0; k < n; ++k)
    if (std::abs((s[k + 1] - s[k]) - h) > 1e-9 * std::max(h, 1e-300)) uniform = false;
  if (!uniform || n == 1) {
    double sum = 0.0;
    for (std::size_t k = 0; k < n; ++k) sum += 0.5 * (s[k + 1] - s[k]) * (g[k] + g[k + 1]);
    return sum;
  }
  double sum = 0.0;
  std::size_t simpson_end = n;
  if (n % 2 == 1) {
    // Simpson 3/8 on the last three intervals.
    simpson_end = n - 3;
    sum += 3.0 * h / 8.0 * (g[n - 3] + 3.0 * g[n - 2] + 3.0 * g[n - 1] + g[n]);
  }
  for (std::size_t k = 0; k + 2 <= simpson_end; k += 2)
    sum += h / 3.0 * (g[k] + 4.0 * g[k + 1] + g[k + 2]);
  return sum;
}

OUCovariance ou_covariance(const TestFunction& phi, double t, const MeanFieldHistory& rho,
                           const LinearConfig& config) {
  const BackwardSolution q = backward_solve(phi, t, rho, config);
  const int m = rho.grid_size();
  const double h2 = grid_spacing(m) * grid_spacing(m);
  OUCovariance out;
  out.t = t;
  out.grid_size = m;
  out.dt = config.dt;

  const GridArray r0 = transform_to_grid(rho.at(0.0));
  const GridArray f0 = transform_to_grid(q.initial());
  const double m1 = h2 * (f0 * r0).sum();
  const double m2 = h2 * (f0 * f0 * r0).sum();
  out.initial = m2 - m1 * m1;

  if (config.sigma > 0.0 && t > 0.0) {
    std::vector<double> g(q.s.size());
    for (std::size_t k = 0; k < q.s.size(); ++k) {
      const auto grad = gradient(q.f[k]);
      const GridArray a = transform_to_grid(grad[0]);
      const GridArray b = transform_to_grid(grad[1]);
      g[k] = h2 * ((a * a + b * b) * transform_to_grid(rho.at(q.s[k]))).sum();
    }
    out.noise = 2.0 * config.sigma * integrate_nodes(q.s, g);
  }
  out.var = out.initial + out.noise;
  return out;
}

std::vector<double> forward_nodes(double horizon, double dt) {
  const auto steps = static_cast<std::size_t>(std::ceil(horizon / dt - 1e-9));
  std::vector<double> t(steps + 1);
  for (std::size_t n = 0; n <= steps; ++n) t[n] = std::min(horizon, static_cast<double>(n) * dt);
  return t;
}

SpectralField linear_drift_step(const SpectralField& u, const Background& bg, std::size_t n,
                                const LinearConfig& config, int radius) {
  const double h = bg.time(n + 1) - bg.time(n);
  return if_rk2(
      u, h, config.sigma, radius,
      [&](const SpectralField& x) { return forward_operator(x, bg, n, config); },
      [&](const SpectralField& x) { return forward_operator(x, bg, n + 1, config); },
      no_transport(config));
}

LinearSeries forward_linearized(const SpectralField& u0, double horizon, const MeanFieldHistory& rho,
                                const LinearConfig& config) {
  config.validate();
  if (!(horizon >= 0.0) || horizon > rho.horizon() + 1e-9)
    throw ValidationError("forward_linearized: horizon outside the mean-field horizon");
  if (u0.grid_size() != rho.grid_size()) throw ValidationError("forward_linearized: grid size mismatch");
  const Background bg(rho, config, forward_nodes(horizon, config.dt));
  const int radius = radius_of(config, u0.grid_size());
  LinearSeries out;
  out.t.push_back(0.0);
  out.u.push_back(u0);
  truncate_modes(out.u.back(), radius);
  for (std::size_t n = 0; n + 1 < bg.size(); ++n) {
    out.u.push_back(linear_drift_step(out.u.back(), bg, n, config, radius));
    out.t.push_back(bg.time(n + 1));
    require_finite(out.u.back(), bg.time(n + 1), "forward_linearized");
  }
  return out;
}

std::vector<WaveVector> square_modes(int radius) {
  std::vector<WaveVector> out;
  for (int k2 = -radius; k2 <= radius; ++k2)
    for (int k1 = -radius; k1 <= radius; ++k1) out.push_back({k1, k2});
  return out;
}

Eta0Sampler::Eta0Sampler(const SpectralField& rho0, std::vector<WaveVector> modes)
    : rho_(rho0), modes_(std::move(modes)) {
  if (modes_.size() > 1000) throw ValidationError("sample_eta0: more than 1000 modes");
  const std::set<WaveVector> set(modes_.begin(), modes_.end());
  for (WaveVector k : modes_)
    if (!set.count(-k)) throw ValidationError("sample_eta0: mode set is not Hermitian-closed");
  for (WaveVector k : set)
    if (k.k2 > 0 || (k.k2 == 0 && k.k1 > 0)) half_.push_back(k);

  const auto h = static_cast<Eigen::Index>(half_.size());
  Eigen::MatrixXd cov(2 * h, 2 * h);
  for (Eigen::Index p = 0; p < h; ++p) {
    for (Eigen::Index q = 0; q < h; ++q) {
      const WaveVector k = half_[p], l = half_[q];
      const cd c = rho_[k - l] - rho_[k] * std::conj(rho_[l]);
      const cd d = rho_[k + l] - rho_[k] * rho_[l];  // C(k, -l)
      cov(p, q) = 0.5 * (c + d).real();
      cov(h + p, h + q) = 0.5 * (c - d).real();
      cov(h + p, q) = 0.5 * (c + d).imag();
      cov(p, h + q) = 0.5 * (d - c).imag();
    }
  }
  if (h == 0) return;
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (cov + cov.transpose()));
  const Eigen::VectorXd ev = es.eigenvalues();
  const double scale = std::max(1.0, ev.maxCoeff());
  if (ev.minCoeff() < -1e-10 * scale)
    throw ValidationError("sample_eta0: covariance is not positive semidefinite");
  factor_ = es.eigenvectors() * ev.cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

Eigen::MatrixXcd Eta0Sampler::covariance() const {
  const auto n = static_cast<Eigen::Index>(modes_.size());
  Eigen::MatrixXcd c(n, n);
  for (Eigen::Index p = 0; p < n; ++p)
    for (Eigen::Index q = 0; q < n; ++q) {
      const WaveVector k = modes_[p], l = modes_[q];
      c(p, q) = rho_[k - l] - rho_[k] * std::conj(rho_[l]);
    }
  return c;
}

std::vector<cd> Eta0Sampler::draw(Engine& eng) const {
  const auto h = static_cast<Eigen::Index>(half_.size());
  std::map<WaveVector, cd> value;
  if (h > 0) {
    boost::random::normal_distribution<double> nd;
    Eigen::VectorXd z(2 * h);
    for (Eigen::Index i = 0; i < 2 * h; ++i) z[i] = nd(eng);
    const Eigen::VectorXd x = factor_ * z;
    for (Eigen::Index p = 0; p < h; ++p) {
      value[half_[p]] = cd(x[p], x[h + p]);
      value[-half_[p]] = cd(x[p], -x[h + p]);
    }
  }
  std::vector<cd> out;
  out.reserve(modes_.size());
  for (WaveVector k : modes_) out.push_back(k.is_zero() ? cd{} : value[k]);
  return out;
}

SpectralField Eta0Sampler::draw_field(Engine& eng, int grid_size) const {
  const std::vector<cd> v = draw(eng);
  SpectralField f(grid_size, false);
  for (std::size_t i = 0; i < modes_.size(); ++i) f.at(modes_[i]) = v[i];
  return SpectralField(std::move(f.coeffs()), true);
}

std::vector<cd> sample_eta0(const SpectralField& rho0, const std::vector<WaveVector>& modes,
                            std::uint64_t seed, std::uint64_t replica_id) {
  Engine eng = make_stream(seed, replica_id, StreamTag::initial);
  return Eta0Sampler(rho0, modes).draw(eng);
}

OUPath spde_simulate(const SpectralField& eta0, double horizon, const Background& bg,
                     const LinearConfig& config, std::uint64_t seed, std::uint64_t replica_id,
                     const SPDEOptions& options) {
  config.validate();
  if (!(config.sigma > 0.0))
    throw UnsupportedError("spde_simulate: sigma = 0 is deterministic, use forward_linearized");
  const int m = eta0.grid_size();
  if (m != bg.grid_size()) throw ValidationError("spde_simulate: grid size mismatch");
  const int dealias_r = radius_of(config, m);
  const int cutoff = options.cutoff < 0 ? m / 3 : options.cutoff;
  if (cutoff > dealias_r) throw ValidationError("spde_simulate: cutoff exceeds the dealias radius");
  const auto steps = static_cast<std::size_t>(std::ceil(horizon / config.dt - 1e-9));
  if (steps + 1 > bg.size() || std::abs(bg.time(steps) - horizon) > 1e-9)
    throw ValidationError("spde_simulate: background does not cover [0, T] on the forward grid");

  std::map<std::size_t, std::vector<std::size_t>> at_step;
  for (std::size_t r = 0; r < options.record_times.size(); ++r) {
    const double t = options.record_times[r];
    if (!(t >= 0.0) || t > horizon + 1e-12) throw ValidationError("spde_simulate: record time outside [0, T]");
    at_step[std::min(steps, static_cast<std::size_t>(std::llround(t / config.dt)))].push_back(r);
  }

  OUPath path;
  path.replica_id = replica_id;
  path.t.resize(options.record_times.size());
  path.values.resize(options.record_times.size());
  SpectralField eta = eta0;
  truncate_modes(eta, cutoff);
  auto record = [&](std::size_t step) {
    auto it = at_step.find(step);
    if (it == at_step.end()) return;
    for (std::size_t r : it->second) {
      path.t[r] = bg.time(step);
      path.values[r].clear();
      for (WaveVector k : options.record_modes) path.values[r].push_back(eta[k]);
    }
  };

  Engine eng = make_stream(seed, replica_id, StreamTag::noise);
  boost::random::normal_distribution<double> nd;
  const double inv_h = 1.0 / grid_spacing(m);
  GridArray w(m, m);
  record(0);
  for (std::size_t n = 0; n < steps; ++n) {
    const double h = bg.time(n + 1) - bg.time(n);
    SpectralField next = linear_drift_step(eta, bg, n, config, cutoff);
    if (options.noise) {
      std::array<SpectralField, 2> zeta;
      for (int c = 0; c < 2; ++c) {
        for (Eigen::Index q = 0; q < w.size(); ++q) w(q) = nd(eng) * inv_h;
        zeta[c] = transform_to_coeffs(bg.sqrt_rho(n) * w);
      }
      SpectralField inc = divergence(zeta);
      inc *= -std::sqrt(2.0 * config.sigma * h);
      scale_by_heat(inc, config.sigma, h);
      truncate_modes(inc, cutoff);
      next += inc;
    }
    eta = std::move(next);
    require_finite(eta, bg.time(n + 1), "spde_simulate");
    record(n + 1);
  }
  path.final_state = std::move(eta);
  return path;
}

nlohmann::json to_json(const OUCovariance& c) {
  return {{"t", c.t},
          {"var", c.var},
          {"terms", {{"initial", c.initial}, {"noise", c.noise}}},
          {"grid", {{"M", c.grid_size}, {"dt", c.dt}}}};
}

}  // namespace tclt
