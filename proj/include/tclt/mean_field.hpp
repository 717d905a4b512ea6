#pragma once

#include "tclt/kernels.hpp"
#include "tclt/spectral_field.hpp"
#include "tclt/test_function.hpp"

#include <json.hpp>

#include <vector>

namespace tclt {

struct MFSolverConfig {
  int grid_size = 64;
  double dt = 1e-3;
  double dealias = 2.0 / 3.0;
  double sigma = 0.0;
  KernelSpec kernel;
  VectorField drift;

  void validate() const;
  /// Largest retained |k|_inf: floor(dealias M / 2).
  int dealias_radius() const;
};

struct MeanFieldState {
  SpectralField rho;
  double t = 0.0;
};

struct MFDiagnostics {
  double t = 0.0;
  double mass = 0.0;
  double min_value = 0.0;
  /// l2 mass share of the outer third of the retained modes (|k|_inf > 2r/3, r the dealias radius).
  double tail_fraction = 0.0;
  double max_velocity = 0.0;
};

/// Zero every |k|_inf above the radius (and the unpaired Nyquist line).
void dealias(SpectralField& f, int radius);

/// -div((F + K*rho) rho), dealiased (pseudo-spectral product on the grid).
SpectralField mf_transport(const SpectralField& rho, const MFSolverConfig& config);
/// Full right side sigma Lap rho - div((F + K*rho) rho).
SpectralField mf_rhs(const SpectralField& rho, const MFSolverConfig& config);

/// One integrating-factor RK2 step; diffusion exact per mode. Throws NumericalError on NaN/Inf.
MeanFieldState mf_step(const MeanFieldState& state, const MFSolverConfig& config);

MFDiagnostics mf_diagnostics(const SpectralField& rho, double t, const MFSolverConfig& config);

/// Dense solver output on the uniform grid t_n = n dt (last node clamped to T).
class MeanFieldHistory {
 public:
  MeanFieldHistory() = default;
  MeanFieldHistory(std::vector<double> times, std::vector<SpectralField> fields,
                   std::vector<MFDiagnostics> diagnostics);
  /// Time-independent density on [0, T].
  MeanFieldHistory(SpectralField rho, double horizon);

  /// rho(t): stored field at nodes, 4-point Lagrange (cubic) interpolation of coefficients between.
  SpectralField at(double t) const;
  double horizon() const { return horizon_; }
  const std::vector<double>& times() const { return times_; }
  const std::vector<SpectralField>& fields() const { return fields_; }
  const std::vector<MFDiagnostics>& diagnostics() const { return diag_; }
  int grid_size() const { return fields_.empty() ? 0 : fields_.front().grid_size(); }

 private:
  std::vector<double> times_;
  std::vector<SpectralField> fields_;
  std::vector<MFDiagnostics> diag_;
  double horizon_ = 0.0;
};

/// Solves on [0, T]. Negative density below -1e-8 or blow-up throws NumericalError.
MeanFieldHistory mf_solve(const SpectralField& rho0, double horizon, const MFSolverConfig& config);

nlohmann::json to_json(const MFDiagnostics& d);

}  // namespace tclt
