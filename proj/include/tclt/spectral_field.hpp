#pragma once

#include "tclt/torus.hpp"

#include <Eigen/Core>
#include <json.hpp>

#include <array>
#include <span>
#include <utility>
#include <vector>

namespace tclt {

using GridArray = Eigen::ArrayXXd;         // values f(i1 h, i2 h), h = 2pi / M
using ComplexGrid = Eigen::ArrayXXcd;

/// Scalar field on the 2-torus held as Fourier coefficients
///   f_hat(k) = int f(x) exp(-i k.x) dx,   f(x) = (2pi)^-2 sum_k f_hat(k) exp(i k.x),
/// for k in [-M/2, M/2)^2. Coefficient (k1, k2) lives at array position (k1 mod M, k2 mod M).
class SpectralField {
 public:
  SpectralField() = default;
  explicit SpectralField(int grid_size, bool is_real = true);
  /// Takes ownership of a square M x M coefficient array; throws ValidationError if M is odd
  /// or if `is_real` is set and the coefficients are not Hermitian-symmetric.
  SpectralField(ComplexGrid coeffs, bool is_real);

  int grid_size() const { return static_cast<int>(c_.rows()); }
  bool is_real() const { return is_real_; }
  bool empty() const { return c_.size() == 0; }

  const ComplexGrid& coeffs() const { return c_; }
  ComplexGrid& coeffs() { return c_; }

  bool contains(WaveVector k) const {
    const int h = grid_size() / 2;
    return k.k1 >= -h && k.k1 < h && k.k2 >= -h && k.k2 < h;
  }
  /// Coefficient at k, zero outside the stored range.
  cd operator[](WaveVector k) const {
    return contains(k) ? c_(index(k.k1), index(k.k2)) : cd{};
  }
  /// Mutable coefficient; throws ValidationError outside the stored range.
  cd& at(WaveVector k);

  int index(int k) const { return k < 0 ? k + grid_size() : k; }
  int wavenumber(int i) const { return i < grid_size() / 2 ? i : i - grid_size(); }

  /// max_k |f_hat(-k) - conj f_hat(k)|
  double hermitian_defect() const;

  SpectralField& operator+=(const SpectralField& o);
  SpectralField& operator-=(const SpectralField& o);
  SpectralField& operator*=(double s);

 private:
  ComplexGrid c_;
  bool is_real_ = true;
};

SpectralField operator+(SpectralField a, const SpectralField& b);
SpectralField operator-(SpectralField a, const SpectralField& b);
SpectralField operator*(double s, SpectralField a);

/// Grid spacing 2pi / M.
inline double grid_spacing(int grid_size) { return kTwoPi / grid_size; }

/// Values on the M x M grid. Throws ValidationError for a non-Hermitian real field.
GridArray transform_to_grid(const SpectralField& f);
/// Inverse of transform_to_grid for real grid values.
SpectralField transform_to_coeffs(const GridArray& values);
ComplexGrid transform_to_grid_complex(const SpectralField& f);
SpectralField transform_to_coeffs_complex(const ComplexGrid& values);

/// Uniform probability density (2pi)^-2, i.e. f_hat(0) = 1.
SpectralField uniform_density(int grid_size);

/// Zero every mode with |k|_inf > radius.
void truncate_modes(SpectralField& f, int radius);

std::array<SpectralField, 2> gradient(const SpectralField& f);
SpectralField laplacian(const SpectralField& f);
SpectralField divergence(const std::array<SpectralField, 2>& v);

/// int f g dx by Parseval: (2pi)^-2 sum_k f_hat(k) g_hat(-k).
cd pairing(const SpectralField& f, const SpectralField& g);
/// int f dx
inline cd integral(const SpectralField& f) { return f[{0, 0}]; }

/// Trapezoid (spectrally exact) quadrature of grid values: h^2 sum.
double grid_integral(const GridArray& values);

struct SobolevNorm {
  double value = 0.0;
  int truncation = 0;  ///< largest |k|_inf included in the sum
};

/// sum_k <k>^{2 alpha} |c_k|^2 over the supplied pairings c_k = <f, e_k>.
SobolevNorm sobolev_norm_sq(std::span<const std::pair<WaveVector, cd>> pairings, double alpha);
/// Same sum over |k|_inf <= truncation for a field; truncation < 0 selects M/3.
SobolevNorm sobolev_norm_sq(const SpectralField& f, double alpha, int truncation = -1);

/// spectral-v1 record: {"schema", "d", "M", "is_real", "coeffs": [[k1, k2, re, im], ...]}
/// Zero coefficients are omitted.
nlohmann::json to_json(const SpectralField& f);
SpectralField spectral_field_from_json(const nlohmann::json& j);

}  // namespace tclt
