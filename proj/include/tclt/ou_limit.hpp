#pragma once

#include "tclt/kernels.hpp"
#include "tclt/mean_field.hpp"
#include "tclt/rng.hpp"
#include "tclt/spectral_field.hpp"
#include "tclt/test_function.hpp"

#include <Eigen/Core>
#include <json.hpp>

#include <cstdint>
#include <memory>
#include <vector>

namespace tclt {

/// Physics and numerics shared by the linear solvers (backward dual, forward linearized, SPDE).
struct LinearConfig {
  double sigma = 0.0;
  KernelSpec kernel;
  VectorField drift;
  double dt = 1e-3;
  double dealias = 2.0 / 3.0;

  void validate() const;
};

/// Grid data of the background rho-bar on a list of time nodes: rho, sqrt(max(rho, 0)) and the
/// transport velocity K*rho + F. Built once and shared read-only.
class Background {
 public:
  Background(const MeanFieldHistory& rho, const LinearConfig& config, std::vector<double> nodes);

  std::size_t size() const { return nodes_.size(); }
  double time(std::size_t n) const { return nodes_[n]; }
  const GridArray& rho(std::size_t n) const { return rho_[n]; }
  const GridArray& sqrt_rho(std::size_t n) const { return sqrt_rho_[n]; }
  const std::array<GridArray, 2>& velocity(std::size_t n) const { return vel_[n]; }
  /// Total count of negative grid values clipped in sqrt_rho.
  std::size_t clipped() const { return clipped_; }
  int grid_size() const { return m_; }

 private:
  int m_ = 0;
  std::vector<double> nodes_;
  std::vector<GridArray> rho_, sqrt_rho_;
  std::vector<std::array<GridArray, 2>> vel_;
  std::size_t clipped_ = 0;
};

/// f -> (K*rho + F).grad f + K(-.)*(rho grad f) with the background at node n.
SpectralField backward_operator(const SpectralField& f, const Background& bg, std::size_t n,
                                const LinearConfig& config);
/// u -> -div(rho K*u) - div(u (K*rho + F)) with the background at node n.
SpectralField forward_operator(const SpectralField& u, const Background& bg, std::size_t n,
                               const LinearConfig& config);

/// f(s) = Q_{s,t} phi on s_k = t - k dt (stored in increasing s).
struct BackwardSolution {
  double t = 0.0;
  std::vector<double> s;
  std::vector<SpectralField> f;

  const SpectralField& initial() const { return f.front(); }
  const SpectralField& terminal() const { return f.back(); }
  /// Field at a node time (1e-9 tolerance); throws ValidationError otherwise.
  const SpectralField& at(double time) const;
};

BackwardSolution backward_solve(const TestFunction& phi, double t, const MeanFieldHistory& rho,
                                const LinearConfig& config);
BackwardSolution backward_solve(const SpectralField& terminal, double t,
                                const MeanFieldHistory& rho, const LinearConfig& config);

struct OUCovariance {
  double t = 0.0;
  double var = 0.0;
  double initial = 0.0;  ///< <f0^2, rho0> - <f0, rho0>^2
  double noise = 0.0;    ///< 2 sigma int_0^t <|grad f_s|^2, rho_s> ds
  int grid_size = 0;
  double dt = 0.0;
};

OUCovariance ou_covariance(const TestFunction& phi, double t, const MeanFieldHistory& rho,
                           const LinearConfig& config);
/// Composite Simpson on uniform nodes (3/8 closing panel for an odd interval count); trapezoid
/// if the nodes are not uniform.
double integrate_nodes(const std::vector<double>& s, const std::vector<double>& g);

struct LinearSeries {
  std::vector<double> t;
  std::vector<SpectralField> u;
};

/// Deterministic linearized evolution from u0 on t_n = n dt, n = 0..ceil(T/dt).
LinearSeries forward_linearized(const SpectralField& u0, double horizon, const MeanFieldHistory& rho,
                                const LinearConfig& config);

/// One drift step node n -> n+1 (integrating-factor RK2), truncated to |k|_inf <= radius.
SpectralField linear_drift_step(const SpectralField& u, const Background& bg, std::size_t n,
                                const LinearConfig& config, int radius);

/// Gaussian initial fluctuation with Cov(eta(k), conj eta(l)) = rho_hat(k-l) - rho_hat(k) conj rho_hat(l),
/// eta(k) the Fourier coefficient of eta. The covariance of the real coordinates is factored once.
class Eta0Sampler {
 public:
  /// `modes` must be Hermitian-closed and hold at most 1000 modes.
  Eta0Sampler(const SpectralField& rho0, std::vector<WaveVector> modes);
  const std::vector<WaveVector>& modes() const { return modes_; }
  /// Values aligned with modes(); k = 0 is exactly 0 and eta(-k) = conj eta(k).
  std::vector<cd> draw(Engine& eng) const;
  /// Same as a field on an M grid.
  SpectralField draw_field(Engine& eng, int grid_size) const;
  /// Analytic complex covariance C(k, l) for the stored mode list.
  Eigen::MatrixXcd covariance() const;

 private:
  SpectralField rho_;
  std::vector<WaveVector> modes_;
  std::vector<WaveVector> half_;
  Eigen::MatrixXd factor_;
};

std::vector<cd> sample_eta0(const SpectralField& rho0, const std::vector<WaveVector>& modes,
                            std::uint64_t seed, std::uint64_t replica_id = 0);

/// Modes with |k|_inf <= radius.
std::vector<WaveVector> square_modes(int radius);

struct SPDEOptions {
  int cutoff = -1;      ///< Lambda; < 0 selects M/3
  bool noise = true;    ///< false reproduces forward_linearized exactly
  std::vector<double> record_times;
  std::vector<WaveVector> record_modes;
};

struct OUPath {
  std::uint64_t replica_id = 0;
  std::vector<double> t;
  std::vector<std::vector<cd>> values;  ///< per record time, eta(k) per record mode
  SpectralField final_state;
};

/// Spectral Galerkin Euler-Maruyama for the limit SPDE on a background prepared on the forward
/// grid t_n = n dt. sigma = 0 is unsupported.
OUPath spde_simulate(const SpectralField& eta0, double horizon, const Background& bg,
                     const LinearConfig& config, std::uint64_t seed, std::uint64_t replica_id,
                     const SPDEOptions& options);

/// Uniform forward nodes 0, dt, ..., T.
std::vector<double> forward_nodes(double horizon, double dt);

nlohmann::json to_json(const OUCovariance& c);

}  // namespace tclt
