#pragma once

#include "tclt/spectral_field.hpp"
#include "tclt/test_function.hpp"

#include <Eigen/Core>

#include <array>
#include <memory>
#include <span>
#include <string>
#include <variant>

namespace tclt {

using CVec2 = Eigen::Vector2cd;

struct ZeroKernel {};

/// K(x) = sum_k c_k exp(i k.x) per component.
struct BoundedFourierKernel {
  VectorField field;
};

/// Periodic Biot-Savart law K = grad-perp G, G the mean-zero Green function of the Laplacian.
/// kmax > 0 truncates the spectral convolution to |k|_inf <= kmax (0: whole grid).
/// With near_field_split the pointwise kernel is (1/2pi) x_perp/|x|^2 + K0(x), K0 read from a
/// 128^2 bicubic table; without it the exact image-row sum is evaluated directly (slow).
struct BiotSavartKernel {
  int kmax = 0;
  bool near_field_split = true;
};

class KernelSpec;

/// Magnitude cap inside radius delta, see mollify().
struct MollifiedKernel {
  std::shared_ptr<const KernelSpec> base;
  double delta = 0.0;
};

class KernelSpec {
 public:
  using Variant = std::variant<ZeroKernel, BoundedFourierKernel, BiotSavartKernel, MollifiedKernel>;

  KernelSpec() : KernelSpec(ZeroKernel{}) {}
  KernelSpec(Variant v);

  static KernelSpec zero() { return KernelSpec(ZeroKernel{}); }
  static KernelSpec bounded_fourier(VectorField f) { return KernelSpec(BoundedFourierKernel{std::move(f)}); }
  static KernelSpec biot_savart(int kmax = 0, bool near_field_split = true) {
    return KernelSpec(BiotSavartKernel{kmax, near_field_split});
  }

  const Variant& variant() const { return v_; }
  bool antisymmetric() const { return antisymmetric_; }
  bool divergence_free() const { return divergence_free_; }
  bool bounded() const { return bounded_; }
  bool is_zero() const { return std::holds_alternative<ZeroKernel>(v_); }
  /// Base kernel for Mollified, *this otherwise.
  const KernelSpec& unmollified() const;
  std::string name() const;

 private:
  Variant v_;
  bool antisymmetric_ = true;
  bool divergence_free_ = true;
  bool bounded_ = true;
};

/// -i k_perp / |k|^2 with k_perp = (-k2, k1); zero at k = 0.
CVec2 biot_savart_coeff(WaveVector k);
/// Throws ValidationError unless exactly two components are given.
CVec2 biot_savart_coeff(std::span<const int> k);

/// Fourier coefficient K_hat(k) = int K(x) exp(-i k.x) dx. Mollified kernels throw UnsupportedError.
CVec2 kernel_coeff(const KernelSpec& spec, WaveVector k);

/// K(x) for a displacement x (reduced to its minimal image first). Throws SingularityError for an
/// unmollified Biot-Savart kernel at x = 0.
Vec2 kernel_eval(const KernelSpec& spec, const Vec2& x);

/// Smooth part K0 = K - (1/2pi) x_perp/|x|^2 from the interpolation table, for x in [-pi, pi]^2.
Vec2 biot_savart_correction(const Vec2& x);
/// Exact periodic Biot-Savart kernel by the image-row sum (x != 0). Reference evaluator.
Vec2 biot_savart_exact(const Vec2& x);

/// (K * rho) as two real fields; per-mode product K_hat(k) rho_hat(k).
std::array<SpectralField, 2> convolve_velocity(const KernelSpec& spec, const SpectralField& rho);
/// (K(-.) * g) summed over components: the scalar field with coefficients sum_c K_hat_c(-k) g_hat_c(k).
SpectralField convolve_reflected(const KernelSpec& spec, const std::array<SpectralField, 2>& g);

/// Throws ValidationError for delta <= 0 (or non-finite).
KernelSpec mollify(const KernelSpec& spec, double delta);
/// min(1e-3, 1/N)
double default_mollification_radius(std::size_t n);

nlohmann::json to_json(const KernelSpec& spec);

}  // namespace tclt
