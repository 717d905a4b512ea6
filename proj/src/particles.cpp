#include "tclt/particles.hpp"

#include "tclt/errors.hpp"
#include "tclt/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <thread>

namespace tclt {
namespace {

void rethrow_with_pair(const SingularityError& e, std::size_t i, std::size_t j) {
  throw SingularityError(std::string(e.what()) + " (pair " + std::to_string(i) + ", " +
                             std::to_string(j) + ")",
                         static_cast<std::ptrdiff_t>(i), static_cast<std::ptrdiff_t>(j));
}

// Direct sum, j in index order for every i. Antisymmetric kernels evaluate each pair once.
Points direct_deterministic(const Points& x, const KernelSpec& k) {
  const std::size_t n = static_cast<std::size_t>(x.cols());
  Points v = Points::Zero(2, x.cols());
  std::size_t i = 0, j = 0;
  try {
    if (k.antisymmetric()) {
      for (i = 0; i < n; ++i) {
        for (j = i + 1; j < n; ++j) {
          const Vec2 f = kernel_eval(k, x.col(i) - x.col(j));
          v.col(i) += f;
          v.col(j) -= f;
        }
      }
    } else {
      for (i = 0; i < n; ++i)
        for (j = 0; j < n; ++j)
          if (j != i) v.col(i) += kernel_eval(k, x.col(i) - x.col(j));
    }
  } catch (const SingularityError& e) {
    rethrow_with_pair(e, i, j);
  }
  return v / static_cast<double>(n);
}

Points direct_parallel(const Points& x, const KernelSpec& k, int threads) {
  const std::size_t n = static_cast<std::size_t>(x.cols());
  Points v = Points::Zero(2, x.cols());
  threads = std::max(1, threads);
  std::vector<std::exception_ptr> errors(threads);
  auto rows = [&](int w) {
    std::size_t i = 0, j = 0;
    try {
      for (i = w; i < n; i += threads) {
        Vec2 s = Vec2::Zero();
        for (j = 0; j < n; ++j)
          if (j != i) s += kernel_eval(k, x.col(i) - x.col(j));
        v.col(i) = s;
      }
    } catch (const SingularityError& e) {
      try {
        rethrow_with_pair(e, i, j);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };
  std::vector<std::thread> pool;
  for (int w = 1; w < threads; ++w) pool.emplace_back(rows, w);
  rows(0);
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return v / static_cast<double>(n);
}

// v_i = sum_k c_k e^{ik.X_i} S_k - K(0)/N with S_k = (1/N) sum_j e^{-ik.X_j}.
Points spectral_sum(const Points& x, const VectorField& kf) {
  const std::size_t n = static_cast<std::size_t>(x.cols());
  std::map<WaveVector, CVec2> modes;
  for (int c = 0; c < 2; ++c)
    for (const auto& [k, coef] : kf.c[c].terms()) {
      auto& slot = modes.try_emplace(k, CVec2::Zero()).first->second;
      slot[c] = coef;
    }
  Points v = Points::Zero(2, x.cols());
  Eigen::VectorXcd phase(x.cols());
  // Real kernel: the -k term is the conjugate of the k term, so each +-pair is summed once.
  for (const auto& [k, coef] : modes) {
    if (k < -k) continue;
    const double w = k.is_zero() ? 1.0 : 2.0;
    cd s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double th = k.dot(x.col(j));
      phase[j] = cd(std::cos(th), std::sin(th));
      s += std::conj(phase[j]);
    }
    s *= w / static_cast<double>(n);
    const cd a = coef.x() * s, b = coef.y() * s;
    for (std::size_t i = 0; i < n; ++i) {
      v(0, i) += (a * phase[i]).real();
      v(1, i) += (b * phase[i]).real();
    }
  }
  const Vec2 k0 = kf(Vec2::Zero());
  v.colwise() -= k0 / static_cast<double>(n);
  return v;
}

}  // namespace

void SimConfig::validate() const {
  if (!(dt > 0.0) || !std::isfinite(dt)) throw ValidationError("simulation: dt must be positive");
  if (!(horizon >= 0.0) || !std::isfinite(horizon))
    throw ValidationError("simulation: T must be nonnegative");
  if (!(sigma >= 0.0) || !std::isfinite(sigma))
    throw ValidationError("simulation: sigma must be nonnegative");
  if (n == 0) throw ValidationError("simulation: N must be positive");
  if (!kernel.is_zero() && n < 2)
    throw ValidationError("simulation: an interaction kernel needs N >= 2");
  if (!kernel.bounded())
    throw ValidationError("simulation: singular kernel must be mollified for particle dynamics");
  if (threads < 1) throw ValidationError("simulation: threads must be >= 1");
}

std::size_t SimConfig::steps() const {
  return static_cast<std::size_t>(std::ceil(horizon / dt - 1e-9));
}

DensitySampler::DensitySampler(const SpectralField& rho) {
  const GridArray g = transform_to_grid(rho);
  if (g.minCoeff() < -1e-8) throw ValidationError("sample_iid_initial: density has negative values");
  if (std::abs(integral(rho).real() - 1.0) > 1e-8)
    throw ValidationError("sample_iid_initial: density does not integrate to 1");
  bound_ = g.maxCoeff() * (1.0 + 1e-3);
  const double acceptance = 1.0 / (bound_ * kTorusArea);
  if (acceptance < 1e-3) throw ValidationError("sample_iid_initial: acceptance rate below 1e-3");
  density_ = from_field(rho, 1e-15 * std::abs(integral(rho)));
}

Points DensitySampler::draw(std::size_t n, Engine& eng) const {
  Points x(2, static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    for (;;) {
      const Vec2 p(kTwoPi * uniform01(eng), kTwoPi * uniform01(eng));
      const double u = uniform01(eng) * bound_;
      const double f = density_(p);
      if (f > bound_) throw NumericalError("sample_iid_initial: envelope bound exceeded", 0.0);
      if (u < f) {
        x.col(static_cast<Eigen::Index>(i)) = p;
        break;
      }
    }
  }
  return x;
}

ParticleState sample_iid_initial(const SpectralField& rho, std::size_t n, Engine& eng) {
  ParticleState s;
  s.positions = DensitySampler(rho).draw(n, eng);
  s.lifts = s.positions;
  return s;
}

ParticleState sample_iid_initial(const SpectralField& rho, std::size_t n, std::uint64_t seed,
                                 std::uint64_t replica_id) {
  Engine eng = make_stream(seed, replica_id, StreamTag::initial);
  return sample_iid_initial(rho, n, eng);
}

Points pairwise_drift(const Points& x, const KernelSpec& kernel, bool deterministic, int threads,
                      PairRoute route) {
  if (kernel.is_zero() || x.cols() < 2) return Points::Zero(2, x.cols());
  if (const auto* bf = std::get_if<BoundedFourierKernel>(&kernel.variant());
      bf && route != PairRoute::direct)
    return spectral_sum(x, bf->field);
  if (route == PairRoute::spectral)
    throw UnsupportedError("pairwise_drift: spectral route needs a bounded-Fourier kernel");
  if (deterministic || threads <= 1) return direct_deterministic(x, kernel);
  return direct_parallel(x, kernel, threads);
}

void em_step(ParticleState& state, const SimConfig& config, Normal& noise) {
  const double h = std::min(config.dt, config.horizon - state.t);
  if (h <= 1e-12) throw ValidationError("em_step: step would pass the horizon");
  Points drift = pairwise_drift(state.positions, config.kernel, config.deterministic,
                                config.threads, config.route);
  if (!config.drift.is_zero())
    for (Eigen::Index i = 0; i < drift.cols(); ++i) drift.col(i) += config.drift(state.positions.col(i));
  state.lifts += h * drift;
  if (config.sigma > 0.0) {
    const double amp = std::sqrt(2.0 * config.sigma * h);
    for (Eigen::Index i = 0; i < state.lifts.cols(); ++i) {
      const double a = noise();
      const double b = noise();
      state.lifts(0, i) += amp * a;
      state.lifts(1, i) += amp * b;
    }
  }
  if (!state.lifts.allFinite()) throw NumericalError("em_step: non-finite particle position", state.t);
  state.positions = state.lifts.unaryExpr([](double v) { return wrap_coord(v); });
  state.t += h;
}

std::vector<cd> empirical_modes(const Points& x, const std::vector<WaveVector>& modes) {
  std::vector<cd> out;
  out.reserve(modes.size());
  const double inv = 1.0 / static_cast<double>(x.cols());
  for (WaveVector k : modes) {
    if (k.is_zero()) {
      out.emplace_back(1.0, 0.0);
      continue;
    }
    double re = 0.0, im = 0.0;
    for (Eigen::Index i = 0; i < x.cols(); ++i) {
      const double th = k.dot(x.col(i));
      re += std::cos(th);
      im -= std::sin(th);
    }
    out.emplace_back(re * inv, im * inv);
  }
  return out;
}

Trajectory simulate_from(const SimConfig& config, ParticleState state,
                         const std::vector<Observer>& observers) {
  config.validate();
  if (static_cast<std::size_t>(state.size()) != config.n)
    throw ValidationError("simulate: initial state size differs from N");
  const std::size_t steps = config.steps();

  // Observer index lists keyed by step, preserving request order.
  std::map<std::size_t, std::vector<std::size_t>> at_step;
  for (std::size_t o = 0; o < observers.size(); ++o) {
    const double t = observers[o].t;
    if (!(t >= 0.0) || t > config.horizon + 1e-12)
      throw ValidationError("simulate: observer time outside [0, T]");
    const auto s = static_cast<std::size_t>(std::llround(t / config.dt));
    at_step[std::min(s, steps)].push_back(o);
  }

  Trajectory traj;
  traj.replica_id = config.replica_id;
  traj.n = config.n;
  auto record = [&](std::size_t step) {
    auto it = at_step.find(step);
    if (it == at_step.end()) return;
    for (std::size_t o : it->second) {
      Snapshot snap;
      snap.requested = observers[o].t;
      snap.t = state.t;
      snap.step = step;
      snap.empirical = empirical_modes(state.positions, observers[o].modes);
      if (observers[o].keep_state) snap.state = state;
      traj.snapshots.push_back(std::move(snap));
    }
  };

  Normal noise(make_stream(config.seed, config.replica_id, StreamTag::dynamics));
  state.t = 0.0;
  record(0);
  for (std::size_t s = 1; s <= steps; ++s) {
    em_step(state, config, noise);
    state.t = std::min(config.horizon, static_cast<double>(s) * config.dt);
    record(s);
  }
  return traj;
}

Trajectory simulate(const SimConfig& config, const SpectralField& rho0,
                    const std::vector<Observer>& observers) {
  config.validate();
  return simulate_from(config, sample_iid_initial(rho0, config.n, config.seed, config.replica_id),
                       observers);
}

std::vector<Trajectory> replica_run(const SimConfig& config, const SpectralField& rho0,
                                    const std::vector<Observer>& observers, std::size_t replicas,
                                    int workers) {
  if (replicas < 2) throw ValidationError("replica_run: need at least 2 replicas");
  config.validate();
  std::vector<Trajectory> out(replicas);
  for_each_replica(replicas, workers, [&](std::size_t r) {
    SimConfig c = config;
    c.replica_id = r;
    c.threads = 1;
    out[r] = simulate(c, rho0, observers);
  });
  return out;
}

}  // namespace tclt
