#pragma once

#include "tclt/harness/config.hpp"
#include "tclt/kernels.hpp"
#include "tclt/spectral_field.hpp"
#include "tclt/test_function.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace tclt::harness {

/// Experiment kinds, also the CLI subcommands.
const std::vector<std::string>& experiment_kinds();

struct RunOptions {
  std::filesystem::path out;  ///< overrides the config `output`
  int workers = 1;
  bool deterministic = true;
  bool force = false;
  bool dry_run = false;
  std::optional<std::uint64_t> seed;
  bool emit_plot_script = false;
  bool quiet = false;
};

struct NamedPhi {
  std::string name;
  TestFunction phi;
};

struct PhysicsSpec {
  double sigma = 0.0;
  KernelSpec kernel;  ///< never mollified
  VectorField drift;
  std::string rho0_type;
  TestFunction rho0_perturbation;  ///< rho0 = (2pi)^-2 (1 + p)
  double tg_amplitude = 0.0;       ///< Taylor-Green amplitude (0 unless rho0_type == taylor-green)

  SpectralField rho0(int grid_size) const;
};

struct Case {
  std::string label;
  PhysicsSpec physics;
};

/// One check of an ldp-check run.
struct LdpCheck {
  std::string type;  ///< hminus | exp-jw | exp-us | exp-us-constant | cross-term
  std::string label;
  std::vector<std::size_t> n;
  std::size_t samples = 0;
  double alpha = 2.0;
  int truncation = 32;
  double amplitude = 0.2;
  WaveVector k{1, 0};
  std::optional<NamedPhi> phi;
};

struct Assertion {
  std::string metric;
  std::string label;
  std::optional<double> min, max;
  std::optional<bool> equals;
};

/// Validated, fully resolved experiment.
struct Plan {
  std::string kind;
  std::uint64_t seed = 0;
  std::string output;
  nlohmann::json normalized;
  std::string hash;

  PhysicsSpec physics;
  std::vector<Case> cases;  ///< backward: physics variants (default: just `physics`)

  // numerics
  int grid = 64;
  double dt_pde = 1e-3;
  double dealias = 2.0 / 3.0;
  double horizon = 1.0;
  double dt = 1e-3;
  std::vector<std::size_t> n;
  std::vector<double> delta;  ///< singular kernels; empty: default radius per N
  int cutoff = -1;
  std::optional<std::size_t> dt_check_n;
  double dt_check_factor = 0.5;

  // statistics
  std::vector<NamedPhi> phi;
  std::vector<double> times;
  std::size_t replicas = 0;
  double level = 0.99;
  double alpha = 0.01;
  std::vector<WaveVector> record_modes;  ///< simulate
  int eta0_radius = 4;
  std::size_t directions = 8;
  std::size_t null_replicas = 200;
  bool keep_positions = false;

  std::vector<LdpCheck> checks;
  std::vector<Assertion> assertions;

  /// Coarse work estimate for --dry-run (particle steps, PDE steps).
  nlohmann::json describe() const;
};

/// Parses and validates; `kind` is the subcommand (the config `experiment`, when present, must match).
Plan load_plan(Document doc, const std::string& kind, const RunOptions& options);
Plan load_plan(const std::filesystem::path& config, const std::string& kind, const RunOptions& options);

/// Runs the plan into its output directory. Throws ValidationError, NumericalError, ReplicaError.
void run_plan(const Plan& plan, const RunOptions& options, std::ostream& log);

/// Flat metric map and table files written by a finished run.
nlohmann::json read_results(const std::filesystem::path& dir);

/// Exit code convention and the structured stderr record for an exception.
int exit_code_for(const std::exception& e);
nlohmann::json error_record(const std::exception& e);

}  // namespace tclt::harness
