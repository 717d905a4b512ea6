#pragma once

#include "tclt/kernels.hpp"
#include "tclt/mean_field.hpp"
#include "tclt/particles.hpp"
#include "tclt/spectral_field.hpp"
#include "tclt/test_function.hpp"

#include <json.hpp>

#include <cstdint>
#include <functional>
#include <vector>

namespace tclt {

using Samples = std::vector<double>;

/// eta-hat(k) = sqrt(N) ((1/N) sum_i exp(-i k.X_i) - rho-hat(k)); exactly 0 at k = 0.
std::vector<cd> fluct_modes(const Points& x, const SpectralField& rho, const std::vector<WaveVector>& modes);
/// Same from precomputed empirical coefficients.
std::vector<cd> fluct_from_empirical(const std::vector<cd>& empirical, std::size_t n,
                                     const SpectralField& rho, const std::vector<WaveVector>& modes);

/// <eta, phi> = sum_k c_k eta-hat(-k); every -k of the support must be in `modes`.
double pair_fluctuation(const TestFunction& phi, const std::vector<WaveVector>& modes,
                        const std::vector<cd>& eta);

struct FluctuationSeries {
  std::uint64_t replica_id = 0;
  std::size_t n = 0;
  std::vector<double> t;
  std::vector<WaveVector> modes;
  std::vector<std::vector<cd>> values;  ///< per time, per mode
};

/// Fluctuations of every snapshot of a trajectory; all snapshots must observe `modes`.
FluctuationSeries fluctuation_series(const Trajectory& traj, const MeanFieldHistory& rho,
                                     const std::vector<WaveVector>& modes);

struct VarianceCI {
  std::size_t m = 0;
  double level = 0.0;
  double mean = 0.0;
  double variance = 0.0;
  double ci_low = 0.0, ci_high = 0.0;      ///< chi-squared interval for the variance
  double half_width = 0.0;                 ///< (ci_high - ci_low) / 2
  double boot_low = 0.0, boot_high = 0.0;  ///< percentile bootstrap, 1e4 resamples
  double se = 0.0;                         ///< normal-theory standard error of the variance
};

/// Unbiased variance with chi-squared and bootstrap intervals at `level` (e.g. 0.99).
VarianceCI variance_ci(const Samples& x, double level = 0.95, std::uint64_t seed = 0,
                       bool bootstrap = true);

struct NormalityReport {
  std::size_t m = 0;
  double skewness = 0.0, excess_kurtosis = 0.0, ks = 0.0;
  double skew_lo = 0.0, skew_hi = 0.0;
  double kurt_lo = 0.0, kurt_hi = 0.0;
  double ks_max = 0.0;
  bool skew_pass = false, kurt_pass = false, ks_pass = false;
  bool pass = false;
  std::string reason;
};

/// Skewness, excess kurtosis and the KS distance to the fitted normal, each against a two-sided
/// (KS: one-sided) band of size `alpha`, all calibrated on 1e4 synthetic normal ensembles of the
/// same size.
NormalityReport normality_test(const Samples& x, double alpha = 0.01);

/// Two-sample W1 by order statistics. Unequal sizes: the larger set is subsampled without
/// replacement to the smaller size with `seed`.
double w1_1d(Samples a, Samples b, std::uint64_t seed = 0);
/// W1 to a law given by its quantile function, midpoint rule on a 1e4-point grid in u.
double w1_1d(Samples a, const std::function<double(double)>& quantile);
/// Exact W1 to N(mean, var) (piecewise integration of |F_n - G|). Upper bound of d_bL.
double dbl_gaussian(Samples x, double mean, double var);

/// CDF of the pushforward of rho under x -> k.x mod 2pi, at theta in [0, 2pi).
double pushforward_cdf(const SpectralField& rho, WaveVector k, double theta);
/// min_c int |F - G - c| on the circle of length 2pi (2^20-bin quadrature).
double circular_w1(Samples theta, const std::function<double(double)>& cdf);

/// Primitive lattice directions with |k|_inf <= 2, one per +-pair (8 of them).
std::vector<WaveVector> lattice_directions();
/// `count` distinct directions drawn from lattice_directions() with `seed` (all if count >= 8).
std::vector<WaveVector> lattice_directions(std::size_t count, std::uint64_t seed);

/// Mean over directions k of the circular W1 between the samples of k.X and the pushforward of rho.
double sliced_marginal_w1(const Points& x, const SpectralField& rho, const std::vector<WaveVector>& dirs);

/// Separable two-point function phi(x, y) = Re sum_t w_t u_t(x) v_t(y), u_t, v_t complex
/// trigonometric polynomials.
struct TwoPointFunction {
  using Poly = std::vector<std::pair<WaveVector, cd>>;
  struct Term {
    cd w;
    Poly u, v;
  };
  std::vector<Term> terms;

  double operator()(const Vec2& x, const Vec2& y) const;
  /// <phi, mu_N (x) mu_N> including the diagonal, in O(terms * N).
  double tensor_pairing(const Points& x) const;

  /// a Re[(e_k(x) - <e_k, rho>)(e_-k(y) - <e_-k, rho>)]: both marginal cancellations.
  static TwoPointFunction jabin_wang(double a, WaveVector k, const SpectralField& rho);
  /// (a/2)(psi(x) + psi(y)), psi = cos(x1) - <cos(x1), rho>: joint cancellation only.
  static TwoPointFunction joint_cancelling(double a, const SpectralField& rho);
  static TwoPointFunction constant(double a);
};

/// Brute-force (1/N^2) sum_{i,j} phi(x_i, x_j).
double tensor_pairing_direct(const TwoPointFunction& phi, const Points& x);

enum class ExpIntegralKind { linear, squared };

struct ExpIntegral {
  std::size_t n = 0, m = 0;
  std::uint64_t seed = 0;
  double estimate = 0.0, se = 0.0;
  double ci_low = 0.0, ci_high = 0.0;
  bool heavy_tail = false;  ///< top 1% of samples carries > 50% of the mean
};

/// Monte Carlo mean over M i.i.d. N-tuples from rho of exp(N U) (linear) or exp(N U^2)
/// (squared), U = <phi, mu_N (x) mu_N>. CI by the delta method on the log at `level`.
ExpIntegral exp_integral(const TwoPointFunction& phi, ExpIntegralKind kind, const SpectralField& rho,
                         std::size_t n, std::size_t m, std::uint64_t seed, double level = 0.99,
                         int workers = 1);
ExpIntegral exp_integral_jw(const TwoPointFunction& phi, const SpectralField& rho, std::size_t n,
                            std::size_t m, std::uint64_t seed, double level = 0.99, int workers = 1);
ExpIntegral exp_integral_us(const TwoPointFunction& phi, const SpectralField& rho, std::size_t n,
                            std::size_t m, std::uint64_t seed, double level = 0.99, int workers = 1);

/// Flatness: simultaneous (Bonferroni) `level` intervals of all estimates share a common point.
bool flat_in_n(const std::vector<ExpIntegral>& rows, double level = 0.99);

struct ScalingRow {
  std::size_t n = 0, m = 0;
  double estimate = 0.0;  ///< N times the Monte Carlo mean
  double se = 0.0;
  double analytic = 0.0;  ///< i.i.d. reference (NaN when not available)
};

/// sum over 0 < |k|_inf <= R of <k>^{-2 alpha} (1 - |rho-hat(k)|^2).
double hminus_iid_value(const SpectralField& rho, double alpha, int truncation);
/// ||mu_N - rho||^2_{H^-alpha} over 0 < |k|_inf <= R.
double hminus_norm_sq(const Points& x, const SpectralField& rho, double alpha, int truncation);
/// N E||mu_N - rho||^2 for i.i.d. samples. alpha <= 1 throws ValidationError.
std::vector<ScalingRow> hminus_scaling(const std::vector<std::size_t>& ns, const SpectralField& rho,
                                       double alpha, std::size_t m, int truncation,
                                       std::uint64_t seed, int workers = 1);

/// <grad phi . K*(mu_N - rho), mu_N - rho> for one configuration.
class CrossTerm {
 public:
  CrossTerm(const KernelSpec& kernel, const TestFunction& phi, const SpectralField& rho);
  double operator()(const Points& x) const;

 private:
  KernelSpec kernel_;
  std::array<TestFunction, 2> g_;
  VectorField a_field_;  // K * rho
  TestFunction b_;       // K(-.) * (g rho)
  double c_ = 0.0;
};

/// N E|<grad phi . K*(mu_N - rho), mu_N - rho>| over i.i.d. samples.
std::vector<ScalingRow> cross_term_scaling(const std::vector<std::size_t>& ns, const KernelSpec& kernel,
                                           const TestFunction& phi, const SpectralField& rho,
                                           std::size_t m, std::uint64_t seed, int workers = 1);

nlohmann::json to_json(const VarianceCI& v);
nlohmann::json to_json(const NormalityReport& r);
nlohmann::json to_json(const ExpIntegral& e);
nlohmann::json to_json(const ScalingRow& r);

}  // namespace tclt
