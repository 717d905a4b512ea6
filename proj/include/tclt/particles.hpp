#pragma once

#include "tclt/kernels.hpp"
#include "tclt/rng.hpp"
#include "tclt/spectral_field.hpp"
#include "tclt/test_function.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <vector>

namespace tclt {

using Points = Eigen::Matrix2Xd;  // one column per particle

/// X^N at model time t. positions = wrap(lifts) column by column.
struct ParticleState {
  Points positions;
  Points lifts;
  double t = 0.0;

  std::size_t size() const { return static_cast<std::size_t>(positions.cols()); }
};

/// Interaction sum route. Auto picks the O(N * modes) spectral sum for bounded-Fourier kernels
/// and the direct O(N^2) sum otherwise.
enum class PairRoute { automatic, direct, spectral };

struct SimConfig {
  std::size_t n = 0;
  double dt = 1e-3;
  double horizon = 0.0;
  double sigma = 0.0;
  KernelSpec kernel;
  VectorField drift;
  std::uint64_t seed = 0;
  std::uint64_t replica_id = 0;
  /// Deterministic: j summed in index order per i. Otherwise rows are split across threads.
  bool deterministic = true;
  int threads = 1;
  PairRoute route = PairRoute::automatic;

  /// Throws ValidationError on any broken invariant (including an unmollified singular kernel).
  void validate() const;
  std::size_t steps() const;
};

/// Rejection sampler for a smooth density against the uniform envelope max-grid(rho) (1 + 1e-3).
/// Throws ValidationError for negative grid values below -1e-8, mass != 1 (1e-8) or an
/// acceptance rate below 1e-3.
class DensitySampler {
 public:
  explicit DensitySampler(const SpectralField& rho);
  Points draw(std::size_t n, Engine& eng) const;
  double bound() const { return bound_; }

 private:
  TestFunction density_;
  double bound_ = 0.0;
};

/// N i.i.d. draws from rho by rejection against the uniform envelope max-grid(rho) (1 + 1e-3).
ParticleState sample_iid_initial(const SpectralField& rho, std::size_t n, std::uint64_t seed,
                                 std::uint64_t replica_id = 0);
/// Same, drawing from a caller-owned engine.
ParticleState sample_iid_initial(const SpectralField& rho, std::size_t n, Engine& eng);

/// v_i = (1/N) sum_{j != i} K(X_i - X_j), minimal-image displacements.
Points pairwise_drift(const Points& x, const KernelSpec& kernel, bool deterministic = true,
                      int threads = 1, PairRoute route = PairRoute::automatic);

/// One Euler-Maruyama step on the lifts.
void em_step(ParticleState& state, const SimConfig& config, Normal& noise);

struct Observer {
  double t = 0.0;
  std::vector<WaveVector> modes;
  bool keep_state = false;
};

struct Snapshot {
  double requested = 0.0;
  double t = 0.0;          ///< time of the step actually recorded
  std::size_t step = 0;
  std::vector<cd> empirical;  ///< mu_N-hat(k) = (1/N) sum_i exp(-i k.X_i), per observer mode
  std::optional<ParticleState> state;
};

struct Trajectory {
  std::uint64_t replica_id = 0;
  std::size_t n = 0;
  std::vector<Snapshot> snapshots;  ///< ordered by step, then request order
};

/// (1/N) sum_i exp(-i k.X_i)
std::vector<cd> empirical_modes(const Points& x, const std::vector<WaveVector>& modes);

/// Samples X(0) from rho0 and runs ceil(T/dt) steps, recording observers at the nearest step.
Trajectory simulate(const SimConfig& config, const SpectralField& rho0,
                    const std::vector<Observer>& observers);
/// Same from a given initial state.
Trajectory simulate_from(const SimConfig& config, ParticleState state,
                         const std::vector<Observer>& observers);

/// `replicas` independent runs with replica ids 0..replicas-1 (config.replica_id is overwritten),
/// returned in id order. Throws ReplicaError naming the failing replica.
std::vector<Trajectory> replica_run(const SimConfig& config, const SpectralField& rho0,
                                    const std::vector<Observer>& observers, std::size_t replicas,
                                    int workers = 1);

}  // namespace tclt
