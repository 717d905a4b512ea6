#pragma once

#include <Eigen/Core>

#include <cmath>
#include <compare>
#include <complex>
#include <numbers>
#include <span>

namespace tclt {

using cd = std::complex<double>;
using Vec2 = Eigen::Vector2d;

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;
/// Lebesgue measure of the torus [0, 2pi)^2.
inline constexpr double kTorusArea = kTwoPi * kTwoPi;

/// Integer wave vector k in Z^2; basis function e_k(x) = exp(i k.x).
struct WaveVector {
  int k1 = 0;
  int k2 = 0;

  constexpr WaveVector operator-() const { return {-k1, -k2}; }
  constexpr WaveVector operator+(WaveVector o) const { return {k1 + o.k1, k2 + o.k2}; }
  constexpr WaveVector operator-(WaveVector o) const { return {k1 - o.k1, k2 - o.k2}; }
  constexpr auto operator<=>(const WaveVector&) const = default;

  constexpr int norm_sq() const { return k1 * k1 + k2 * k2; }
  constexpr int sup_norm() const { return std::max(k1 < 0 ? -k1 : k1, k2 < 0 ? -k2 : k2); }
  constexpr bool is_zero() const { return k1 == 0 && k2 == 0; }

  /// <k> = sqrt(1 + |k|^2)
  double bracket() const { return std::sqrt(1.0 + norm_sq()); }
  double dot(const Vec2& x) const { return k1 * x.x() + k2 * x.y(); }
};

/// Point of the torus with both coordinates in [0, 2pi).
class TorusPoint {
 public:
  TorusPoint() = default;
  /// Wraps `raw`; throws ValidationError on non-finite input.
  explicit TorusPoint(const Vec2& raw);

  const Vec2& coords() const { return x_; }
  double operator[](int i) const { return x_[i]; }

 private:
  Vec2 x_ = Vec2::Zero();
};

/// Reduces one coordinate into [0, 2pi). No finiteness check.
inline double wrap_coord(double x) {
  double r = std::fmod(x, kTwoPi);
  if (r < 0.0) r += kTwoPi;
  if (r >= kTwoPi) r = 0.0;
  return r;
}

/// Minimal-image representative of a displacement, in (-pi, pi].
inline double minimal_image_coord(double d) {
  if (d > kPi)
    d -= d < 3.0 * kPi ? kTwoPi : kTwoPi * std::nearbyint(d / kTwoPi);
  else if (d <= -kPi)
    d += d > -3.0 * kPi ? kTwoPi : -kTwoPi * std::nearbyint(d / kTwoPi);
  if (d <= -kPi) d += kTwoPi;
  return d;
}

inline Vec2 minimal_image(const Vec2& d) {
  return {minimal_image_coord(d.x()), minimal_image_coord(d.y())};
}

TorusPoint wrap(const Vec2& raw);
/// Span form of wrap: throws ValidationError unless exactly two finite values are given.
TorusPoint wrap(std::span<const double> raw);

}  // namespace tclt
