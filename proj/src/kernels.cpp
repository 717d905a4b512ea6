#include "tclt/kernels.hpp"

#include "tclt/errors.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>
#include <vector>

namespace tclt {
namespace {

constexpr double kInv2Pi = 1.0 / kTwoPi;
constexpr double kInv4Pi = 1.0 / (2.0 * kTwoPi);

Vec2 free_space(const Vec2& x) {
  const double r2 = x.squaredNorm();
  return kInv2Pi / r2 * Vec2(-x.y(), x.x());
}

// Periodic Biot-Savart kernel as a sum over image rows, each row summed in closed form:
// the 2pi-periodic-in-x1 row Green function is (1/4pi) log(cosh y - cos x1). Rows m != 0 are
// written relative to their far-field limit so the sum converges like exp(-2pi|m|). Valid
// for |x2| < 2pi and any x1; x must not be an image of the origin.
Vec2 exact_unwrapped(const Vec2& x) {
  const double c = std::cos(x.x());
  const double s = std::sin(x.x());
  // Row m = 0 with the cancellation-free form of cosh x2 - cos x1.
  const double sh = std::sinh(0.5 * x.y());
  const double sn = std::sin(0.5 * x.x());
  const double d0 = 2.0 * sh * sh + 2.0 * sn * sn;
  double k1 = kInv4Pi * std::sinh(x.y()) / d0 - x.y() / (kTwoPi * kTwoPi);
  double k2 = kInv4Pi * s / d0;
  for (int m = 1; m <= 6; ++m) {
    for (int sgn : {-1, 1}) {
      const double y = x.y() + sgn * kTwoPi * m;
      const double e = std::exp(-std::abs(y));
      const double d = 0.5 * (1.0 / e + e) - c;
      k1 += kInv4Pi * (y > 0 ? 1.0 : -1.0) * (c - e) / d;
      k2 += kInv4Pi * s / d;
    }
  }
  return {-k1, k2};
}

Vec2 correction_direct(const Vec2& x) {
  if (x.x() == 0.0 && x.y() == 0.0) return Vec2::Zero();
  return exact_unwrapped(x) - free_space(x);
}

// K0 on [-pi, pi] x [0, pi] as per-cell bicubic polynomials, built from Hermite node data
// (values, first and mixed derivatives); the lower half follows from K0(-x) = -K0(x).
class CorrectionTable {
 public:
  static constexpr int kCells = 128;
  static constexpr int kRows = kCells / 2;

  CorrectionTable() : h_(kTwoPi / kCells), cells_(std::size_t(kCells) * kRows) {
    const int nx = kCells + 1, ny = kRows + 1;
    std::vector<std::array<double, 8>> node(std::size_t(nx) * ny);
    const double e = 1e-4;
    const Vec2 ex(e, 0.0), ey(0.0, e);
    for (int i = 0; i < nx; ++i) {
      for (int j = 0; j < ny; ++j) {
        const Vec2 x(-kPi + i * h_, j * h_);
        const Vec2 f = correction_direct(x);
        const Vec2 fx = (correction_direct(x + ex) - correction_direct(x - ex)) / (2 * e);
        const Vec2 fy = (correction_direct(x + ey) - correction_direct(x - ey)) / (2 * e);
        const Vec2 fxy = (correction_direct(x + ex + ey) - correction_direct(x + ex - ey) -
                          correction_direct(x - ex + ey) + correction_direct(x - ex - ey)) /
                         (4 * e * e);
        node[std::size_t(i) * ny + j] = {f.x(), f.y(), h_ * fx.x(), h_ * fx.y(),
                                          h_ * fy.x(), h_ * fy.y(), h_ * h_ * fxy.x(), h_ * h_ * fxy.y()};
      }
    }
    // Monomial coefficients of the Hermite basis h00(t), h00(1-t), h10(t), -h10(1-t).
    static constexpr double B[4][4] = {{1, 0, -3, 2}, {0, 0, 3, -2}, {0, 1, -2, 1}, {0, 0, -1, 1}};
    for (int i = 0; i < kCells; ++i) {
      for (int j = 0; j < kRows; ++j) {
        Cell& cell = cells_[std::size_t(i) * kRows + j];
        for (int c = 0; c < 2; ++c) {
          double f[4][4];
          for (int a = 0; a < 2; ++a)
            for (int b = 0; b < 2; ++b) {
              const auto& n = node[std::size_t(i + a) * ny + (j + b)];
              f[a][b] = n[c];
              f[2 + a][b] = n[2 + c];
              f[a][2 + b] = n[4 + c];
              f[2 + a][2 + b] = n[6 + c];
            }
          for (int p = 0; p < 4; ++p)
            for (int q = 0; q < 4; ++q) {
              double s = 0.0;
              for (int a = 0; a < 4; ++a)
                for (int b = 0; b < 4; ++b) s += B[a][p] * B[b][q] * f[a][b];
              cell.c[p][q][c] = s;
            }
        }
      }
    }
  }

  Vec2 operator()(const Vec2& x) const {
    if (x.y() < 0.0) return -upper(-x);
    return upper(x);
  }

 private:
  struct alignas(64) Cell {
    double c[4][4][2];  // power of tx, power of ty, component
  };

  Vec2 upper(const Vec2& x) const {
    using A2 = Eigen::Array2d;
    const double u = (x.x() + kPi) / h_;
    const double w = x.y() / h_;
    const int i = std::min(std::max(static_cast<int>(u), 0), kCells - 1);
    const int j = std::min(std::max(static_cast<int>(w), 0), kRows - 1);
    const double tx = u - i, ty = w - j;
    const Cell& cell = cells_[std::size_t(i) * kRows + j];
    A2 acc = A2::Zero();
    for (int p = 3; p >= 0; --p) {
      const auto q = [&](int k) { return A2::Map(cell.c[p][k]); };
      acc = acc * tx + (((q(3) * ty + q(2)) * ty + q(1)) * ty + q(0));
    }
    return acc.matrix();
  }

  double h_;
  std::vector<Cell> cells_;
};

const CorrectionTable& correction_table() {
  static const CorrectionTable table;
  return table;
}

// -x for a minimal image x, kept in (-pi, pi].
Vec2 reflect(const Vec2& x) {
  return {x.x() == kPi ? kPi : -x.x(), x.y() == kPi ? kPi : -x.y()};
}

bool canonical_half(const Vec2& x) { return x.y() > 0.0 || (x.y() == 0.0 && x.x() >= 0.0); }

Vec2 eval_split(const Vec2& x, bool use_table) {
  if (x.x() == 0.0 && x.y() == 0.0)
    throw SingularityError("kernel_eval: Biot-Savart kernel at coincident points");
  if (!use_table) return exact_unwrapped(x);
  return free_space(x) + correction_table()(x);
}

Vec2 eval_unmollified(const KernelSpec& spec, const Vec2& x) {
  return std::visit(
      [&](const auto& k) -> Vec2 {
        using T = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<T, ZeroKernel>) {
          return Vec2::Zero();
        } else if constexpr (std::is_same_v<T, BoundedFourierKernel>) {
          return k.field(x);
        } else if constexpr (std::is_same_v<T, BiotSavartKernel>) {
          return eval_split(x, k.near_field_split);
        } else {
          throw UnsupportedError("nested mollification");
        }
      },
      spec.variant());
}

Vec2 eval_mollified(const MollifiedKernel& m, const Vec2& x) {
  const double r = x.norm();
  if (r == 0.0) return Vec2::Zero();
  const Vec2 k = eval_unmollified(*m.base, x);
  if (r >= m.delta) return k;
  const double cap = eval_unmollified(*m.base, (m.delta / r) * x).norm();
  const double mag = k.norm();
  if (mag <= cap || mag == 0.0) return k;
  return (cap / mag) * k;
}

Vec2 eval_reduced(const KernelSpec& spec, const Vec2& x) {
  if (const auto* m = std::get_if<MollifiedKernel>(&spec.variant())) return eval_mollified(*m, x);
  return eval_unmollified(spec, x);
}

double coefficient_scale(const VectorField& f) {
  double s = 1.0;
  for (const auto& comp : f.c)
    for (const auto& t : comp.terms()) s = std::max(s, std::abs(t.second));
  return s;
}

}  // namespace

KernelSpec::KernelSpec(Variant v) : v_(std::move(v)) {
  if (const auto* bf = std::get_if<BoundedFourierKernel>(&v_)) {
    const double tol = 1e-14 * coefficient_scale(bf->field);
    antisymmetric_ = true;
    divergence_free_ = true;
    for (const auto& comp : bf->field.c)
      for (const auto& [k, c] : comp.terms())
        if (std::abs(c.real()) > tol || k.is_zero()) antisymmetric_ = false;
    std::vector<WaveVector> modes;
    for (const auto& comp : bf->field.c)
      for (const auto& t : comp.terms()) modes.push_back(t.first);
    for (WaveVector k : modes) {
      const cd div = double(k.k1) * bf->field.c[0].coeff(k) + double(k.k2) * bf->field.c[1].coeff(k);
      if (std::abs(div) > tol) divergence_free_ = false;
    }
    bounded_ = true;
  } else if (const auto* bs = std::get_if<BiotSavartKernel>(&v_)) {
    if (bs->kmax < 0) throw ValidationError("biot-savart: kmax must be >= 0");
    antisymmetric_ = true;
    divergence_free_ = true;
    bounded_ = false;
  } else if (const auto* m = std::get_if<MollifiedKernel>(&v_)) {
    if (!m->base) throw ValidationError("mollified kernel without a base");
    if (std::holds_alternative<MollifiedKernel>(m->base->variant()))
      throw ValidationError("mollified kernel: base is already mollified");
    antisymmetric_ = m->base->antisymmetric();
    divergence_free_ = false;
    bounded_ = true;
  }
}

const KernelSpec& KernelSpec::unmollified() const {
  if (const auto* m = std::get_if<MollifiedKernel>(&v_)) return *m->base;
  return *this;
}

std::string KernelSpec::name() const {
  return std::visit(
      [](const auto& k) -> std::string {
        using T = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<T, ZeroKernel>) return "zero";
        else if constexpr (std::is_same_v<T, BoundedFourierKernel>) return "bounded-fourier";
        else if constexpr (std::is_same_v<T, BiotSavartKernel>) return "biot-savart";
        else {
          std::ostringstream os;
          os << "mollified(" << k.base->name() << ", delta=" << k.delta << ")";
          return os.str();
        }
      },
      v_);
}

CVec2 biot_savart_coeff(WaveVector k) {
  if (k.is_zero()) return CVec2::Zero();
  const double inv = 1.0 / k.norm_sq();
  const cd mi(0.0, -1.0);
  return {mi * (-k.k2 * inv), mi * (k.k1 * inv)};
}

CVec2 biot_savart_coeff(std::span<const int> k) {
  if (k.size() != 2) throw ValidationError("biot_savart_coeff: only d = 2 is supported");
  return biot_savart_coeff(WaveVector{k[0], k[1]});
}

CVec2 kernel_coeff(const KernelSpec& spec, WaveVector k) {
  return std::visit(
      [&](const auto& ker) -> CVec2 {
        using T = std::decay_t<decltype(ker)>;
        if constexpr (std::is_same_v<T, ZeroKernel>) {
          return CVec2::Zero();
        } else if constexpr (std::is_same_v<T, BoundedFourierKernel>) {
          return kTorusArea * CVec2(ker.field.c[0].coeff(k), ker.field.c[1].coeff(k));
        } else if constexpr (std::is_same_v<T, BiotSavartKernel>) {
          if (ker.kmax > 0 && k.sup_norm() > ker.kmax) return CVec2::Zero();
          return biot_savart_coeff(k);
        } else {
          throw UnsupportedError("mollified kernels have no spectral representation");
        }
      },
      spec.variant());
}

Vec2 biot_savart_correction(const Vec2& x) { return correction_table()(x); }

Vec2 biot_savart_exact(const Vec2& x) {
  const Vec2 r = minimal_image(x);
  if (r.x() == 0.0 && r.y() == 0.0)
    throw SingularityError("biot_savart_exact: kernel at coincident points");
  return exact_unwrapped(r);
}

Vec2 kernel_eval(const KernelSpec& spec, const Vec2& x) {
  if (!x.allFinite()) throw ValidationError("kernel_eval: non-finite displacement");
  const Vec2 r = minimal_image(x);
  // Antisymmetric kernels are evaluated on one half-plane and reflected, so oddness is exact.
  if (spec.antisymmetric() && !canonical_half(r)) return -eval_reduced(spec, reflect(r));
  return eval_reduced(spec, r);
}

std::array<SpectralField, 2> convolve_velocity(const KernelSpec& spec, const SpectralField& rho) {
  if (std::holds_alternative<MollifiedKernel>(spec.variant()))
    throw UnsupportedError("convolve_velocity: mollification is a real-space construct");
  const int m = rho.grid_size();
  std::array<SpectralField, 2> out{SpectralField(m, rho.is_real()), SpectralField(m, rho.is_real())};
  if (spec.is_zero()) return out;
  for (int j = 0; j < m; ++j) {
    const int k2 = rho.wavenumber(j);
    for (int i = 0; i < m; ++i) {
      const int k1 = rho.wavenumber(i);
      if (i == m / 2 || j == m / 2) continue;  // unpaired Nyquist modes
      const cd r = rho.coeffs()(i, j);
      if (r == cd{}) continue;
      const CVec2 kh = kernel_coeff(spec, {k1, k2});
      out[0].coeffs()(i, j) = kh.x() * r;
      out[1].coeffs()(i, j) = kh.y() * r;
    }
  }
  return out;
}

SpectralField convolve_reflected(const KernelSpec& spec, const std::array<SpectralField, 2>& g) {
  if (std::holds_alternative<MollifiedKernel>(spec.variant()))
    throw UnsupportedError("convolve_reflected: mollification is a real-space construct");
  const int m = g[0].grid_size();
  SpectralField out(m, g[0].is_real() && g[1].is_real());
  if (spec.is_zero()) return out;
  for (int j = 0; j < m; ++j) {
    const int k2 = g[0].wavenumber(j);
    for (int i = 0; i < m; ++i) {
      const int k1 = g[0].wavenumber(i);
      if (i == m / 2 || j == m / 2) continue;
      const CVec2 kh = kernel_coeff(spec, {-k1, -k2});
      out.coeffs()(i, j) = kh.x() * g[0].coeffs()(i, j) + kh.y() * g[1].coeffs()(i, j);
    }
  }
  return out;
}

KernelSpec mollify(const KernelSpec& spec, double delta) {
  if (!(delta > 0.0) || !std::isfinite(delta))
    throw ValidationError("mollify: delta must be positive and finite");
  return KernelSpec(MollifiedKernel{std::make_shared<const KernelSpec>(spec.unmollified()), delta});
}

double default_mollification_radius(std::size_t n) {
  return std::min(1e-3, 1.0 / static_cast<double>(std::max<std::size_t>(n, 1)));
}

nlohmann::json to_json(const KernelSpec& spec) {
  return std::visit(
      [](const auto& k) -> nlohmann::json {
        using T = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<T, ZeroKernel>) {
          return {{"kind", "zero"}};
        } else if constexpr (std::is_same_v<T, BoundedFourierKernel>) {
          return {{"kind", "bounded-fourier"},
                  {"modes", {to_json(k.field.c[0]), to_json(k.field.c[1])}}};
        } else if constexpr (std::is_same_v<T, BiotSavartKernel>) {
          return {{"kind", "biot-savart"}, {"kmax", k.kmax}, {"near_field_split", k.near_field_split}};
        } else {
          nlohmann::json j = to_json(*k.base);
          j["delta"] = k.delta;
          return j;
        }
      },
      spec.variant());
}

}  // namespace tclt
