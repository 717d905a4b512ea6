#include "tclt/mean_field.hpp"

#include "tclt/errors.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <cmath>

namespace tclt {
namespace {

void require_finite(const SpectralField& f, double t) {
  if (!f.coeffs().allFinite()) throw NumericalError("mean field: non-finite coefficients", t);
}

ComplexGrid diffusion_factor(int m, double sigma, double dt) {
  ComplexGrid e(m, m);
  for (int j = 0; j < m; ++j) {
    const int k2 = j < m / 2 ? j : j - m;
    for (int i = 0; i < m; ++i) {
      const int k1 = i < m / 2 ? i : i - m;
      e(i, j) = std::exp(-sigma * double(k1 * k1 + k2 * k2) * dt);
    }
  }
  return e;
}

SpectralField multiply(const ComplexGrid& e, SpectralField f) {
  f.coeffs() *= e;
  return f;
}

std::atomic<bool> cfl_warned{false};

}  // namespace

void MFSolverConfig::validate() const {
  if (grid_size <= 0 || grid_size % 2 != 0) throw ValidationError("mean field: M must be even");
  if (!(dealias > 0.0 && dealias <= 1.0)) throw ValidationError("mean field: dealias must lie in (0, 1]");
  if (!(dt > 0.0) || !std::isfinite(dt)) throw ValidationError("mean field: dt_pde must be positive");
  if (!(sigma >= 0.0)) throw ValidationError("mean field: sigma must be nonnegative");
  if (std::holds_alternative<MollifiedKernel>(kernel.variant()))
    throw ValidationError("mean field: use the unmollified kernel in the PDE");
}

int MFSolverConfig::dealias_radius() const {
  return static_cast<int>(std::floor(dealias * grid_size / 2.0 + 1e-12));
}

void dealias(SpectralField& f, int radius) {
  truncate_modes(f, std::min(radius, f.grid_size() / 2 - 1));
}

SpectralField mf_transport(const SpectralField& rho, const MFSolverConfig& config) {
  const int m = rho.grid_size();
  auto vel = convolve_velocity(config.kernel, rho);
  if (!config.drift.is_zero()) {
    auto f = to_field(config.drift, m);
    vel[0] += f[0];
    vel[1] += f[1];
  }
  const GridArray r = transform_to_grid(rho);
  std::array<SpectralField, 2> flux;
  double vmax = 0.0;
  for (int c = 0; c < 2; ++c) {
    const GridArray u = transform_to_grid(vel[c]);
    vmax = std::max(vmax, u.abs().maxCoeff());
    flux[c] = transform_to_coeffs(u * r);
    dealias(flux[c], config.dealias_radius());
  }
  if (config.dt * vmax * m / 2.0 > 0.5 && !cfl_warned.exchange(true))
    spdlog::warn("mean field: dt_pde * max|u| * M/2 = {:.3g} exceeds 0.5", config.dt * vmax * m / 2.0);
  SpectralField out = divergence(flux);
  out *= -1.0;
  dealias(out, config.dealias_radius());
  return out;
}

SpectralField mf_rhs(const SpectralField& rho, const MFSolverConfig& config) {
  SpectralField out = config.sigma * laplacian(rho);
  out += mf_transport(rho, config);
  return out;
}

MeanFieldState mf_step(const MeanFieldState& state, const MFSolverConfig& config) {
  const int m = state.rho.grid_size();
  if (m != config.grid_size) throw ValidationError("mf_step: field size differs from config M");
  const ComplexGrid e = diffusion_factor(m, config.sigma, config.dt);
  const double dt = config.dt;
  const SpectralField n0 = mf_transport(state.rho, config);
  SpectralField stage = state.rho;
  stage.coeffs() += dt * n0.coeffs();
  stage = multiply(e, std::move(stage));
  require_finite(stage, state.t);
  const SpectralField n1 = mf_transport(stage, config);
  MeanFieldState next{state.rho, state.t + dt};
  next.rho.coeffs() = e * state.rho.coeffs() + (0.5 * dt) * (e * n0.coeffs() + n1.coeffs());
  // The mean is untouched by transport (k = 0 of a divergence); keep it bitwise.
  next.rho.at({0, 0}) = state.rho[{0, 0}];
  require_finite(next.rho, next.t);
  return next;
}

MFDiagnostics mf_diagnostics(const SpectralField& rho, double t, const MFSolverConfig& config) {
  MFDiagnostics d;
  d.t = t;
  d.mass = integral(rho).real();
  d.min_value = transform_to_grid(rho).minCoeff();
  const int r = config.dealias_radius();
  const int m = rho.grid_size();
  double total = 0.0, tail = 0.0;
  for (int j = 0; j < m; ++j)
    for (int i = 0; i < m; ++i) {
      const double a = std::norm(rho.coeffs()(i, j));
      total += a;
      if (3 * std::max(std::abs(rho.wavenumber(i)), std::abs(rho.wavenumber(j))) > 2 * r) tail += a;
    }
  d.tail_fraction = total > 0.0 ? tail / total : 0.0;
  const auto vel = convolve_velocity(config.kernel, rho);
  d.max_velocity = std::max(transform_to_grid(vel[0]).abs().maxCoeff(),
                            transform_to_grid(vel[1]).abs().maxCoeff());
  return d;
}

MeanFieldHistory::MeanFieldHistory(std::vector<double> times, std::vector<SpectralField> fields,
                                   std::vector<MFDiagnostics> diagnostics)
    : times_(std::move(times)), fields_(std::move(fields)), diag_(std::move(diagnostics)) {
  if (times_.empty() || times_.size() != fields_.size())
    throw ValidationError("MeanFieldHistory: times and fields must be nonempty and aligned");
  horizon_ = times_.back();
}

MeanFieldHistory::MeanFieldHistory(SpectralField rho, double horizon)
    : times_{0.0}, fields_{std::move(rho)}, horizon_(horizon) {}

SpectralField MeanFieldHistory::at(double t) const {
  if (fields_.empty()) throw ValidationError("MeanFieldHistory: empty history");
  const double tol = 1e-9 * std::max(1.0, horizon_);
  if (t < -tol || t > horizon_ + tol) throw ValidationError("MeanFieldHistory: time outside [0, T]");
  if (fields_.size() == 1) return fields_.front();
  const auto n = static_cast<std::ptrdiff_t>(times_.size());
  auto it = std::upper_bound(times_.begin(), times_.end(), t);
  std::ptrdiff_t i = std::clamp<std::ptrdiff_t>((it - times_.begin()) - 1, 0, n - 2);
  for (std::ptrdiff_t q : {i, i + 1})
    if (std::abs(times_[q] - t) <= 1e-12 * std::max(1.0, horizon_)) return fields_[q];
  const std::ptrdiff_t lo = std::clamp<std::ptrdiff_t>(i - 1, 0, std::max<std::ptrdiff_t>(n - 4, 0));
  const std::ptrdiff_t hi = std::min(lo + 4, n);
  SpectralField out(fields_.front().grid_size(), fields_.front().is_real());
  for (std::ptrdiff_t a = lo; a < hi; ++a) {
    double w = 1.0;
    for (std::ptrdiff_t b = lo; b < hi; ++b)
      if (b != a) w *= (t - times_[b]) / (times_[a] - times_[b]);
    out.coeffs() += w * fields_[a].coeffs();
  }
  return out;
}

MeanFieldHistory mf_solve(const SpectralField& rho0, double horizon, const MFSolverConfig& config) {
  config.validate();
  if (!(horizon >= 0.0)) throw ValidationError("mf_solve: T must be nonnegative");
  if (rho0.grid_size() != config.grid_size) throw ValidationError("mf_solve: rho0 size differs from M");
  if (!rho0.is_real()) throw ValidationError("mf_solve: rho0 must be real");
  if (std::abs(integral(rho0).real() - 1.0) > 1e-8)
    throw ValidationError("mf_solve: rho0 must integrate to 1");

  std::vector<double> times{0.0};
  std::vector<SpectralField> fields{rho0};
  std::vector<MFDiagnostics> diag{mf_diagnostics(rho0, 0.0, config)};
  if (diag.back().min_value < -1e-8) throw ValidationError("mf_solve: rho0 has negative values");

  const auto steps = static_cast<std::size_t>(std::ceil(horizon / config.dt - 1e-9));
  MeanFieldState s{rho0, 0.0};
  MFSolverConfig c = config;
  for (std::size_t n = 1; n <= steps; ++n) {
    c.dt = std::min(config.dt, horizon - s.t);
    s = mf_step(s, c);
    s.t = std::min(horizon, static_cast<double>(n) * config.dt);
    MFDiagnostics d = mf_diagnostics(s.rho, s.t, config);
    if (d.min_value < -1e-8) throw NumericalError("mean field: density below -1e-8", s.t);
    times.push_back(s.t);
    fields.push_back(s.rho);
    diag.push_back(d);
  }
  return MeanFieldHistory(std::move(times), std::move(fields), std::move(diag));
}

nlohmann::json to_json(const MFDiagnostics& d) {
  return {{"t", d.t},
          {"mass", d.mass},
          {"min", d.min_value},
          {"tail_fraction", d.tail_fraction},
          {"max_velocity", d.max_velocity}};
}

}  // namespace tclt
