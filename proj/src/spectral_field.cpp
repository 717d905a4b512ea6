#include "tclt/spectral_field.hpp"

#include "tclt/errors.hpp"

#include <fftw3.h>

#include <map>
#include <memory>
#include <mutex>

namespace tclt {
namespace {

// Plans are created once per size with FFTW_ESTIMATE (deterministic plan selection) and
// executed through the new-array interface; FFTW_UNALIGNED lets us pass Eigen storage.
class FftPlans {
 public:
  explicit FftPlans(int m) {
    ComplexGrid a(m, m), b(m, m);
    auto* in = reinterpret_cast<fftw_complex*>(a.data());
    auto* out = reinterpret_cast<fftw_complex*>(b.data());
    const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
    forward_ = fftw_plan_dft_2d(m, m, in, out, FFTW_FORWARD, flags);
    backward_ = fftw_plan_dft_2d(m, m, in, out, FFTW_BACKWARD, flags);
  }
  ~FftPlans() {
    fftw_destroy_plan(forward_);
    fftw_destroy_plan(backward_);
  }
  FftPlans(const FftPlans&) = delete;
  FftPlans& operator=(const FftPlans&) = delete;

  void forward(const ComplexGrid& in, ComplexGrid& out) const { run(forward_, in, out); }
  void backward(const ComplexGrid& in, ComplexGrid& out) const { run(backward_, in, out); }

 private:
  static void run(fftw_plan p, const ComplexGrid& in, ComplexGrid& out) {
    out.resize(in.rows(), in.cols());
    // fftw_execute_dft does not modify the input of an out-of-place plan.
    fftw_execute_dft(p, reinterpret_cast<fftw_complex*>(const_cast<cd*>(in.data())),
                     reinterpret_cast<fftw_complex*>(out.data()));
  }

  fftw_plan forward_ = nullptr;
  fftw_plan backward_ = nullptr;
};

const FftPlans& plans_for(int m) {
  static std::mutex mu;
  static std::map<int, std::unique_ptr<FftPlans>> cache;
  std::lock_guard lock(mu);
  auto& slot = cache[m];
  if (!slot) slot = std::make_unique<FftPlans>(m);
  return *slot;
}

void require_same_size(const SpectralField& a, const SpectralField& b) {
  if (a.grid_size() != b.grid_size()) throw ValidationError("SpectralField: grid size mismatch");
}

}  // namespace

SpectralField::SpectralField(int grid_size, bool is_real)
    : c_(ComplexGrid::Zero(grid_size, grid_size)), is_real_(is_real) {
  if (grid_size <= 0 || grid_size % 2 != 0)
    throw ValidationError("SpectralField: grid size must be even and positive");
}

SpectralField::SpectralField(ComplexGrid coeffs, bool is_real)
    : c_(std::move(coeffs)), is_real_(is_real) {
  if (c_.rows() != c_.cols() || c_.rows() <= 0 || c_.rows() % 2 != 0)
    throw ValidationError("SpectralField: coefficients must be a square array of even size");
  if (is_real_) {
    const double scale = std::max(1.0, c_.abs().maxCoeff());
    if (hermitian_defect() > 1e-10 * scale)
      throw ValidationError("SpectralField: real field with non-Hermitian coefficients");
  }
}

cd& SpectralField::at(WaveVector k) {
  if (!contains(k)) throw ValidationError("SpectralField: wave vector outside the stored range");
  return c_(index(k.k1), index(k.k2));
}

double SpectralField::hermitian_defect() const {
  const int m = grid_size();
  double worst = 0.0;
  for (int j = 0; j < m; ++j) {
    for (int i = 0; i < m; ++i) {
      const cd partner = c_((m - i) % m, (m - j) % m);
      worst = std::max(worst, std::abs(partner - std::conj(c_(i, j))));
    }
  }
  return worst;
}

SpectralField& SpectralField::operator+=(const SpectralField& o) {
  require_same_size(*this, o);
  c_ += o.c_;
  is_real_ = is_real_ && o.is_real_;
  return *this;
}

SpectralField& SpectralField::operator-=(const SpectralField& o) {
  require_same_size(*this, o);
  c_ -= o.c_;
  is_real_ = is_real_ && o.is_real_;
  return *this;
}

SpectralField& SpectralField::operator*=(double s) {
  c_ *= s;
  return *this;
}

SpectralField operator+(SpectralField a, const SpectralField& b) { return a += b; }
SpectralField operator-(SpectralField a, const SpectralField& b) { return a -= b; }
SpectralField operator*(double s, SpectralField a) { return a *= s; }

ComplexGrid transform_to_grid_complex(const SpectralField& f) {
  ComplexGrid out;
  plans_for(f.grid_size()).backward(f.coeffs(), out);
  out /= kTorusArea;
  return out;
}

GridArray transform_to_grid(const SpectralField& f) {
  if (f.is_real()) {
    const double scale = std::max(1.0, f.coeffs().abs().maxCoeff());
    if (f.hermitian_defect() > 1e-10 * scale)
      throw ValidationError("transform_to_grid: real field with non-Hermitian coefficients");
  }
  return transform_to_grid_complex(f).real();
}

SpectralField transform_to_coeffs_complex(const ComplexGrid& values) {
  if (values.rows() != values.cols() || values.rows() % 2 != 0)
    throw ValidationError("transform_to_coeffs: grid must be square with even size");
  ComplexGrid out;
  plans_for(static_cast<int>(values.rows())).forward(values, out);
  const double h = grid_spacing(static_cast<int>(values.rows()));
  out *= h * h;
  return SpectralField(std::move(out), false);
}

SpectralField transform_to_coeffs(const GridArray& values) {
  SpectralField f = transform_to_coeffs_complex(values.cast<cd>());
  // The forward DFT of real data is Hermitian up to rounding; make it exact.
  ComplexGrid& c = f.coeffs();
  const int m = f.grid_size();
  for (int j = 0; j < m; ++j) {
    for (int i = 0; i < m; ++i) {
      const int pi = (m - i) % m;
      const int pj = (m - j) % m;
      if (std::pair(j, i) > std::pair(pj, pi)) continue;
      const cd avg = 0.5 * (c(i, j) + std::conj(c(pi, pj)));
      c(i, j) = avg;
      c(pi, pj) = std::conj(avg);
    }
  }
  return SpectralField(std::move(c), true);
}

SpectralField uniform_density(int grid_size) {
  SpectralField f(grid_size, true);
  f.at({0, 0}) = 1.0;
  return f;
}

void truncate_modes(SpectralField& f, int radius) {
  const int m = f.grid_size();
  ComplexGrid& c = f.coeffs();
  for (int j = 0; j < m; ++j) {
    const int k2 = f.wavenumber(j);
    for (int i = 0; i < m; ++i) {
      const int k1 = f.wavenumber(i);
      if (std::max(std::abs(k1), std::abs(k2)) > radius) c(i, j) = 0.0;
    }
  }
}

std::array<SpectralField, 2> gradient(const SpectralField& f) {
  const int m = f.grid_size();
  SpectralField gx(m, f.is_real()), gy(m, f.is_real());
  const cd I(0.0, 1.0);
  for (int j = 0; j < m; ++j) {
    const int k2 = f.wavenumber(j);
    for (int i = 0; i < m; ++i) {
      const int k1 = f.wavenumber(i);
      // The Nyquist row/column has no symmetric partner for the derivative; drop it.
      const bool nyq = (i == m / 2) || (j == m / 2);
      gx.coeffs()(i, j) = nyq ? cd{} : I * double(k1) * f.coeffs()(i, j);
      gy.coeffs()(i, j) = nyq ? cd{} : I * double(k2) * f.coeffs()(i, j);
    }
  }
  return {std::move(gx), std::move(gy)};
}

SpectralField laplacian(const SpectralField& f) {
  const int m = f.grid_size();
  SpectralField out(m, f.is_real());
  for (int j = 0; j < m; ++j) {
    const int k2 = f.wavenumber(j);
    for (int i = 0; i < m; ++i) {
      const int k1 = f.wavenumber(i);
      out.coeffs()(i, j) = -double(k1 * k1 + k2 * k2) * f.coeffs()(i, j);
    }
  }
  return out;
}

SpectralField divergence(const std::array<SpectralField, 2>& v) {
  const auto g1 = gradient(v[0]);
  const auto g2 = gradient(v[1]);
  return g1[0] + g2[1];
}

cd pairing(const SpectralField& f, const SpectralField& g) {
  require_same_size(f, g);
  const int m = f.grid_size();
  cd sum = 0.0;
  for (int j = 0; j < m; ++j) {
    for (int i = 0; i < m; ++i) {
      sum += f.coeffs()(i, j) * g.coeffs()((m - i) % m, (m - j) % m);
    }
  }
  return sum / kTorusArea;
}

double grid_integral(const GridArray& values) {
  const double h = grid_spacing(static_cast<int>(values.rows()));
  return h * h * values.sum();
}

SobolevNorm sobolev_norm_sq(std::span<const std::pair<WaveVector, cd>> pairings, double alpha) {
  SobolevNorm out;
  for (const auto& [k, c] : pairings) {
    out.value += std::pow(1.0 + k.norm_sq(), alpha) * std::norm(c);
    out.truncation = std::max(out.truncation, k.sup_norm());
  }
  return out;
}

SobolevNorm sobolev_norm_sq(const SpectralField& f, double alpha, int truncation) {
  const int m = f.grid_size();
  if (truncation < 0) truncation = m / 3;
  truncation = std::min(truncation, m / 2 - 1);
  SobolevNorm out{0.0, truncation};
  for (int k2 = -truncation; k2 <= truncation; ++k2) {
    for (int k1 = -truncation; k1 <= truncation; ++k1) {
      out.value += std::pow(1.0 + k1 * k1 + k2 * k2, alpha) * std::norm(f[{k1, k2}]);
    }
  }
  return out;
}

nlohmann::json to_json(const SpectralField& f) {
  nlohmann::json coeffs = nlohmann::json::array();
  const int m = f.grid_size();
  for (int k2 = -m / 2; k2 < m / 2; ++k2) {
    for (int k1 = -m / 2; k1 < m / 2; ++k1) {
      const cd c = f[{k1, k2}];
      if (c == cd{}) continue;
      coeffs.push_back({k1, k2, c.real(), c.imag()});
    }
  }
  return {{"schema", "spectral-v1"}, {"d", 2}, {"M", m}, {"is_real", f.is_real()},
          {"coeffs", std::move(coeffs)}};
}

SpectralField spectral_field_from_json(const nlohmann::json& j) {
  if (!j.is_object() || j.value("schema", "") != "spectral-v1")
    throw ValidationError("spectral-v1: missing or wrong schema tag");
  if (j.value("d", 0) != 2) throw ValidationError("spectral-v1: only d = 2 is supported");
  const int m = j.at("M").get<int>();
  const bool is_real = j.at("is_real").get<bool>();
  SpectralField f(m, false);
  for (const auto& e : j.at("coeffs")) {
    if (!e.is_array() || e.size() != 4) throw ValidationError("spectral-v1: malformed coefficient");
    f.at({e[0].get<int>(), e[1].get<int>()}) = cd(e[2].get<double>(), e[3].get<double>());
  }
  return SpectralField(std::move(f.coeffs()), is_real);
}

}  // namespace tclt
