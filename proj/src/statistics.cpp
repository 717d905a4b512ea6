#include "tclt/statistics.hpp"

#include "tclt/errors.hpp"
#include "tclt/parallel.hpp"
#include "tclt/rng.hpp"

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_int_distribution.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numeric>

namespace tclt {
namespace {

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }
double normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * kPi); }
double normal_quantile(double p) {
  return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

void require_finite(const Samples& x, std::size_t min_size, const char* what) {
  if (x.size() < min_size)
    throw ValidationError(std::string(what) + ": need at least " + std::to_string(min_size) + " samples");
  for (double v : x)
    if (!std::isfinite(v)) throw ValidationError(std::string(what) + ": non-finite sample");
}

double mean_of(const Samples& x) {
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double unbiased_variance(const Samples& x, double mean) {
  double s = 0.0;
  for (double v : x) s += (v - mean) * (v - mean);
  return s / static_cast<double>(x.size() - 1);
}

// Empirical quantile of sorted data, linear interpolation between order statistics.
double sorted_quantile(const Samples& s, double p) {
  const double pos = p * static_cast<double>(s.size() - 1);
  const auto i = static_cast<std::size_t>(std::floor(pos));
  if (i + 1 >= s.size()) return s.back();
  return s[i] + (pos - static_cast<double>(i)) * (s[i + 1] - s[i]);
}

// Fisher-Yates with Boost's portable integer distribution.
template <class T>
void shuffle(std::vector<T>& v, Engine& eng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    boost::random::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(v[i - 1], v[pick(eng)]);
  }
}

struct Moments {
  double skew = 0.0, kurt = 0.0, ks = 0.0;
};

// Biased sample skewness and excess kurtosis, and the KS distance to N(mean, s^2) with the
// unbiased s. Sorts x in place.
Moments shape_statistics(Samples& x) {
  const double n = static_cast<double>(x.size());
  const double m = mean_of(x);
  double m2 = 0.0, m3 = 0.0, m4 = 0.0;
  for (double v : x) {
    const double d = v - m, d2 = d * d;
    m2 += d2;
    m3 += d2 * d;
    m4 += d2 * d2;
  }
  m2 /= n;
  m3 /= n;
  m4 /= n;
  Moments out;
  out.skew = m3 / std::pow(m2, 1.5);
  out.kurt = m4 / (m2 * m2) - 3.0;
  const double s = std::sqrt(m2 * n / (n - 1.0));
  std::sort(x.begin(), x.end());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double f = normal_cdf((x[i] - m) / s);
    out.ks = std::max({out.ks, (i + 1) / n - f, f - i / n});
  }
  return out;
}

struct Calibration {
  double skew_lo, skew_hi, kurt_lo, kurt_hi, ks_max;
};

const Calibration& calibration(std::size_t m, double alpha) {
  static std::mutex mu;
  static std::map<std::pair<std::size_t, double>, Calibration> cache;
  std::lock_guard lock(mu);
  const auto key = std::pair(m, alpha);
  if (auto it = cache.find(key); it != cache.end()) return it->second;
  constexpr std::size_t kEnsembles = 10000;
  Engine eng = make_stream(0x6e6f726d616c6974ULL, m, StreamTag::statistics);
  boost::random::normal_distribution<double> nd;
  Samples sk(kEnsembles), ku(kEnsembles), ks(kEnsembles), x(m);
  for (std::size_t e = 0; e < kEnsembles; ++e) {
    for (double& v : x) v = nd(eng);
    const Moments mo = shape_statistics(x);
    sk[e] = mo.skew;
    ku[e] = mo.kurt;
    ks[e] = mo.ks;
  }
  std::sort(sk.begin(), sk.end());
  std::sort(ku.begin(), ku.end());
  std::sort(ks.begin(), ks.end());
  Calibration c{sorted_quantile(sk, alpha / 2), sorted_quantile(sk, 1 - alpha / 2),
                sorted_quantile(ku, alpha / 2), sorted_quantile(ku, 1 - alpha / 2),
                sorted_quantile(ks, 1 - alpha)};
  return cache.emplace(key, c).first->second;
}

cd eval_poly(const TwoPointFunction::Poly& p, const Vec2& x) {
  cd s = 0.0;
  for (const auto& [k, c] : p) {
    const double th = k.dot(x);
    s += c * cd(std::cos(th), std::sin(th));
  }
  return s;
}

cd mean_poly(const TwoPointFunction::Poly& p, const Points& x) {
  if (p.size() == 1 && p.front().first.is_zero()) return p.front().second;
  cd s = 0.0;
  for (Eigen::Index i = 0; i < x.cols(); ++i) s += eval_poly(p, x.col(i));
  return s / static_cast<double>(x.cols());
}

std::uint64_t row_stream(std::size_t n, std::size_t r) {
  return (static_cast<std::uint64_t>(n) << 32) | static_cast<std::uint64_t>(r);
}

TestFunction derivative(const TestFunction& phi, int c) {
  std::vector<TestFunction::Term> t;
  for (const auto& [k, v] : phi.terms()) {
    const int kc = c == 0 ? k.k1 : k.k2;
    if (kc != 0) t.emplace_back(k, cd(0.0, kc) * v);
  }
  return TestFunction(std::move(t));
}

}  // namespace

std::vector<cd> fluct_from_empirical(const std::vector<cd>& empirical, std::size_t n,
                                     const SpectralField& rho, const std::vector<WaveVector>& modes) {
  if (empirical.size() != modes.size()) throw ValidationError("fluct_modes: mode list size mismatch");
  std::vector<cd> out(modes.size());
  const double sn = std::sqrt(static_cast<double>(n));
  for (std::size_t q = 0; q < modes.size(); ++q)
    out[q] = modes[q].is_zero() ? cd{} : sn * (empirical[q] - rho[modes[q]]);
  return out;
}

std::vector<cd> fluct_modes(const Points& x, const SpectralField& rho, const std::vector<WaveVector>& modes) {
  return fluct_from_empirical(empirical_modes(x, modes), static_cast<std::size_t>(x.cols()), rho, modes);
}

double pair_fluctuation(const TestFunction& phi, const std::vector<WaveVector>& modes,
                        const std::vector<cd>& eta) {
  cd s = 0.0;
  for (const auto& [k, c] : phi.terms()) {
    if (k.is_zero()) continue;
    auto it = std::find(modes.begin(), modes.end(), -k);
    if (it == modes.end()) throw ValidationError("pair_fluctuation: mode -k not observed");
    s += c * eta[static_cast<std::size_t>(it - modes.begin())];
  }
  return s.real();
}

FluctuationSeries fluctuation_series(const Trajectory& traj, const MeanFieldHistory& rho,
                                     const std::vector<WaveVector>& modes) {
  FluctuationSeries fs;
  fs.replica_id = traj.replica_id;
  fs.n = traj.n;
  fs.modes = modes;
  for (const auto& snap : traj.snapshots) {
    fs.t.push_back(snap.t);
    fs.values.push_back(fluct_from_empirical(snap.empirical, traj.n, rho.at(snap.t), modes));
  }
  return fs;
}

VarianceCI variance_ci(const Samples& x, double level, std::uint64_t seed, bool bootstrap) {
  require_finite(x, 2, "variance_ci");
  if (!(level > 0.0 && level < 1.0)) throw ValidationError("variance_ci: level must lie in (0, 1)");
  VarianceCI out;
  out.m = x.size();
  out.level = level;
  out.mean = mean_of(x);
  out.variance = unbiased_variance(x, out.mean);
  if (out.variance == 0.0) return out;
  const double dof = static_cast<double>(x.size() - 1);
  const boost::math::chi_squared_distribution<double> chi(dof);
  out.ci_low = dof * out.variance / boost::math::quantile(chi, 0.5 + level / 2);
  out.ci_high = dof * out.variance / boost::math::quantile(chi, 0.5 - level / 2);
  out.half_width = 0.5 * (out.ci_high - out.ci_low);
  out.se = out.variance * std::sqrt(2.0 / dof);
  if (bootstrap) {
    constexpr std::size_t kResamples = 10000;
    Engine eng = make_stream(seed, 0, StreamTag::statistics);
    boost::random::uniform_int_distribution<std::size_t> pick(0, x.size() - 1);
    Samples boot(kResamples), y(x.size());
    for (auto& b : boot) {
      for (auto& v : y) v = x[pick(eng)];
      b = unbiased_variance(y, mean_of(y));
    }
    std::sort(boot.begin(), boot.end());
    out.boot_low = sorted_quantile(boot, 0.5 - level / 2);
    out.boot_high = sorted_quantile(boot, 0.5 + level / 2);
  }
  return out;
}

NormalityReport normality_test(const Samples& x, double alpha) {
  require_finite(x, 200, "normality_test");
  NormalityReport r;
  r.m = x.size();
  const double m = mean_of(x);
  if (unbiased_variance(x, m) <= 0.0) {
    r.reason = "degenerate";
    return r;
  }
  Samples y = x;
  const Moments mo = shape_statistics(y);
  const Calibration& c = calibration(x.size(), alpha);
  r.skewness = mo.skew;
  r.excess_kurtosis = mo.kurt;
  r.ks = mo.ks;
  r.skew_lo = c.skew_lo;
  r.skew_hi = c.skew_hi;
  r.kurt_lo = c.kurt_lo;
  r.kurt_hi = c.kurt_hi;
  r.ks_max = c.ks_max;
  r.skew_pass = mo.skew >= c.skew_lo && mo.skew <= c.skew_hi;
  r.kurt_pass = mo.kurt >= c.kurt_lo && mo.kurt <= c.kurt_hi;
  r.ks_pass = mo.ks <= c.ks_max;
  r.pass = r.skew_pass && r.kurt_pass && r.ks_pass;
  if (!r.skew_pass) r.reason += "skewness ";
  if (!r.kurt_pass) r.reason += "kurtosis ";
  if (!r.ks_pass) r.reason += "ks ";
  if (!r.reason.empty()) r.reason.pop_back();
  return r;
}

double w1_1d(Samples a, Samples b, std::uint64_t seed) {
  if (a.empty() || b.empty()) throw ValidationError("w1_1d: empty sample set");
  require_finite(a, 1, "w1_1d");
  require_finite(b, 1, "w1_1d");
  if (a.size() != b.size()) {
    Samples& big = a.size() > b.size() ? a : b;
    const std::size_t n = std::min(a.size(), b.size());
    Engine eng = make_stream(seed, 0, StreamTag::statistics);
    shuffle(big, eng);
    big.resize(n);
  }
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

double w1_1d(Samples a, const std::function<double(double)>& quantile) {
  if (a.empty()) throw ValidationError("w1_1d: empty sample set");
  require_finite(a, 1, "w1_1d");
  std::sort(a.begin(), a.end());
  constexpr int kGrid = 10000;
  const double n = static_cast<double>(a.size());
  double s = 0.0;
  for (int j = 0; j < kGrid; ++j) {
    const double u = (j + 0.5) / kGrid;
    const auto i = std::min(a.size() - 1, static_cast<std::size_t>(std::floor(u * n)));
    s += std::abs(a[i] - quantile(u));
  }
  return s / kGrid;
}

double dbl_gaussian(Samples x, double mean, double var) {
  if (!(var > 0.0)) throw ValidationError("dbl_gaussian: target variance must be positive");
  if (x.empty()) throw ValidationError("dbl_gaussian: empty sample set");
  require_finite(x, 1, "dbl_gaussian");
  std::sort(x.begin(), x.end());
  const double s = std::sqrt(var);
  // Antiderivative of the target CDF G: A(x) = (x - m) G(x) + s^2 g(x).
  auto G = [&](double v) { return normal_cdf((v - mean) / s); };
  auto A = [&](double v) { const double z = (v - mean) / s; return (v - mean) * normal_cdf(z) + s * normal_pdf(z); };
  const double n = static_cast<double>(x.size());
  double w = A(x.front());
  {
    const double z = (x.back() - mean) / s;
    w += s * normal_pdf(z) - (x.back() - mean) * (1.0 - normal_cdf(z));
  }
  for (std::size_t i = 0; i + 1 < x.size(); ++i) {
    const double a = x[i], b = x[i + 1];
    if (b <= a) continue;
    const double c = (i + 1) / n;
    if (G(a) >= c) {
      w += A(b) - A(a) - c * (b - a);
    } else if (G(b) <= c) {
      w += c * (b - a) - (A(b) - A(a));
    } else {
      const double q = mean + s * normal_quantile(c);
      w += c * (q - a) - (A(q) - A(a)) + (A(b) - A(q)) - c * (b - q);
    }
  }
  return w;
}

double pushforward_cdf(const SpectralField& rho, WaveVector k, double theta) {
  double g = theta / kTwoPi * rho[{0, 0}].real();
  for (int j = 1;; ++j) {
    const WaveVector jk{j * k.k1, j * k.k2};
    if (!rho.contains(jk) && !rho.contains(-jk)) break;
    for (int sgn : {1, -1}) {
      const cd c = rho[{sgn * jk.k1, sgn * jk.k2}];
      if (c == cd{}) continue;
      const double jj = sgn * j;
      g += (c * (std::exp(cd(0.0, jj * theta)) - 1.0) / cd(0.0, jj)).real() / kTwoPi;
    }
  }
  return g;
}

double circular_w1(Samples theta, const std::function<double(double)>& cdf) {
  if (theta.empty()) throw ValidationError("circular_w1: empty sample set");
  for (double& t : theta) {
    if (!std::isfinite(t)) throw ValidationError("circular_w1: non-finite sample");
    t = wrap_coord(t);
  }
  std::sort(theta.begin(), theta.end());
  constexpr std::size_t kBins = std::size_t(1) << 20;
  const double h = kTwoPi / kBins;
  const double n = static_cast<double>(theta.size());
  std::vector<double> d(kBins);
  std::size_t below = 0;
  for (std::size_t b = 0; b < kBins; ++b) {
    const double t = (b + 0.5) * h;
    while (below < theta.size() && theta[below] <= t) ++below;
    d[b] = below / n - cdf(t);
  }
  std::vector<double> sorted = d;
  std::nth_element(sorted.begin(), sorted.begin() + kBins / 2, sorted.end());
  const double c = sorted[kBins / 2];
  double w = 0.0;
  for (double v : d) w += std::abs(v - c);
  return w * h;
}

std::vector<WaveVector> lattice_directions() {
  return {{1, 0}, {0, 1}, {1, 1}, {-1, 1}, {2, 1}, {1, 2}, {-1, 2}, {-2, 1}};
}

std::vector<WaveVector> lattice_directions(std::size_t count, std::uint64_t seed) {
  std::vector<WaveVector> all = lattice_directions();
  if (count >= all.size()) return all;
  Engine eng = make_stream(seed, 0, StreamTag::statistics);
  shuffle(all, eng);
  all.resize(count);
  return all;
}

double sliced_marginal_w1(const Points& x, const SpectralField& rho, const std::vector<WaveVector>& dirs) {
  if (dirs.empty()) throw ValidationError("sliced_marginal_w1: no directions");
  double total = 0.0;
  for (WaveVector k : dirs) {
    Samples th(static_cast<std::size_t>(x.cols()));
    for (Eigen::Index i = 0; i < x.cols(); ++i) th[i] = wrap_coord(k.dot(x.col(i)));
    // Nonzero pushforward coefficients, collected once per direction.
    std::vector<std::pair<double, cd>> coef;
    for (int j = 1;; ++j) {
      const WaveVector jk{j * k.k1, j * k.k2};
      if (!rho.contains(jk) && !rho.contains(-jk)) break;
      for (int sgn : {1, -1}) {
        const cd c = rho[{sgn * jk.k1, sgn * jk.k2}];
        if (c != cd{}) coef.emplace_back(sgn * j, c);
      }
    }
    const double mass = rho[{0, 0}].real();
    total += circular_w1(std::move(th), [&](double t) {
      double g = t / kTwoPi * mass;
      for (const auto& [j, c] : coef) g += (c * (std::exp(cd(0.0, j * t)) - 1.0) / cd(0.0, j)).real() / kTwoPi;
      return g;
    });
  }
  return total / static_cast<double>(dirs.size());
}

double TwoPointFunction::operator()(const Vec2& x, const Vec2& y) const {
  cd s = 0.0;
  for (const auto& t : terms) s += t.w * eval_poly(t.u, x) * eval_poly(t.v, y);
  return s.real();
}

double TwoPointFunction::tensor_pairing(const Points& x) const {
  cd s = 0.0;
  for (const auto& t : terms) s += t.w * mean_poly(t.u, x) * mean_poly(t.v, x);
  return s.real();
}

TwoPointFunction TwoPointFunction::jabin_wang(double a, WaveVector k, const SpectralField& rho) {
  // <e_k, rho> = rho_hat(-k)
  Term t{a, {{k, 1.0}, {{0, 0}, -rho[-k]}}, {{-k, 1.0}, {{0, 0}, -rho[k]}}};
  return {{t}};
}

TwoPointFunction TwoPointFunction::joint_cancelling(double a, const SpectralField& rho) {
  const double m = rho[{-1, 0}].real();
  const Poly psi{{{1, 0}, 0.5}, {{-1, 0}, 0.5}, {{0, 0}, -m}};
  const Poly one{{{0, 0}, 1.0}};
  return {{Term{0.5 * a, psi, one}, Term{0.5 * a, one, psi}}};
}

TwoPointFunction TwoPointFunction::constant(double a) {
  return {{Term{a, {{{0, 0}, 1.0}}, {{{0, 0}, 1.0}}}}};
}

double tensor_pairing_direct(const TwoPointFunction& phi, const Points& x) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < x.cols(); ++i)
    for (Eigen::Index j = 0; j < x.cols(); ++j) s += phi(x.col(i), x.col(j));
  return s / static_cast<double>(x.cols() * x.cols());
}

ExpIntegral exp_integral(const TwoPointFunction& phi, ExpIntegralKind kind, const SpectralField& rho,
                         std::size_t n, std::size_t m, std::uint64_t seed, double level, int workers) {
  if (n < 2) throw ValidationError("exp_integral: N must be at least 2");
  if (m < 2) throw ValidationError("exp_integral: need at least 2 samples");
  const DensitySampler sampler(rho);
  Samples v(m);
  for_each_replica(m, workers, [&](std::size_t r) {
    Engine eng = make_stream(seed, row_stream(n, r), StreamTag::initial);
    const Points x = sampler.draw(n, eng);
    const double u = phi.tensor_pairing(x);
    v[r] = std::exp(static_cast<double>(n) * (kind == ExpIntegralKind::linear ? u : u * u));
  });
  ExpIntegral out;
  out.n = n;
  out.m = m;
  out.seed = seed;
  out.estimate = mean_of(v);
  out.se = std::sqrt(unbiased_variance(v, out.estimate) / static_cast<double>(m));
  const double z = normal_quantile(0.5 + level / 2);
  const double rel = out.se / out.estimate;
  out.ci_low = out.estimate * std::exp(-z * rel);
  out.ci_high = out.estimate * std::exp(z * rel);
  Samples sorted = v;
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  const auto top = static_cast<std::size_t>(std::ceil(0.01 * static_cast<double>(m)));
  const double head = std::accumulate(sorted.begin(), sorted.begin() + top, 0.0);
  out.heavy_tail = head > 0.5 * out.estimate * static_cast<double>(m);
  return out;
}

ExpIntegral exp_integral_jw(const TwoPointFunction& phi, const SpectralField& rho, std::size_t n,
                            std::size_t m, std::uint64_t seed, double level, int workers) {
  return exp_integral(phi, ExpIntegralKind::linear, rho, n, m, seed, level, workers);
}

ExpIntegral exp_integral_us(const TwoPointFunction& phi, const SpectralField& rho, std::size_t n,
                            std::size_t m, std::uint64_t seed, double level, int workers) {
  return exp_integral(phi, ExpIntegralKind::squared, rho, n, m, seed, level, workers);
}

bool flat_in_n(const std::vector<ExpIntegral>& rows, double level) {
  if (rows.empty()) return true;
  const double z = normal_quantile(1.0 - (1.0 - level) / (2.0 * static_cast<double>(rows.size())));
  double lo = -INFINITY, hi = INFINITY;
  for (const auto& r : rows) {
    const double c = std::log(r.estimate), w = z * r.se / r.estimate;
    lo = std::max(lo, c - w);
    hi = std::min(hi, c + w);
  }
  return lo <= hi;
}

double hminus_iid_value(const SpectralField& rho, double alpha, int truncation) {
  double s = 0.0;
  for (int k2 = -truncation; k2 <= truncation; ++k2)
    for (int k1 = -truncation; k1 <= truncation; ++k1) {
      if (k1 == 0 && k2 == 0) continue;
      s += std::pow(1.0 + k1 * k1 + k2 * k2, -alpha) * (1.0 - std::norm(rho[{k1, k2}]));
    }
  return s;
}

double hminus_norm_sq(const Points& x, const SpectralField& rho, double alpha, int truncation) {
  const int r = truncation;
  const Eigen::Index n = x.cols();
  // mu-hat(k1, k2) = (1/N) sum_i p1(k1, i) p2(k2, i) with coordinate powers exp(-i k x).
  Eigen::MatrixXcd p1(2 * r + 1, n), p2(r + 1, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const cd e1(std::cos(x(0, i)), -std::sin(x(0, i)));
    const cd e2(std::cos(x(1, i)), -std::sin(x(1, i)));
    p1(r, i) = 1.0;
    p2(0, i) = 1.0;
    for (int k = 1; k <= r; ++k) {
      p1(r + k, i) = p1(r + k - 1, i) * e1;
      p1(r - k, i) = std::conj(p1(r + k, i));
      p2(k, i) = p2(k - 1, i) * e2;
    }
  }
  const Eigen::MatrixXcd mu = (p1 * p2.transpose()) / static_cast<double>(n);
  double s = 0.0;
  for (int k2 = 0; k2 <= r; ++k2)
    for (int k1 = -r; k1 <= r; ++k1) {
      if (k2 == 0 && k1 <= 0) continue;  // k and -k counted once, twice below
      const double w = std::pow(1.0 + k1 * k1 + k2 * k2, -alpha);
      s += 2.0 * w * std::norm(mu(r + k1, k2) - rho[{k1, k2}]);
    }
  return s;
}

std::vector<ScalingRow> hminus_scaling(const std::vector<std::size_t>& ns, const SpectralField& rho,
                                       double alpha, std::size_t m, int truncation,
                                       std::uint64_t seed, int workers) {
  if (!(alpha > 1.0)) throw ValidationError("hminus_scaling: alpha must exceed d/2 = 1");
  if (m < 2) throw ValidationError("hminus_scaling: need at least 2 replicas");
  const DensitySampler sampler(rho);
  const double analytic = hminus_iid_value(rho, alpha, truncation);
  std::vector<ScalingRow> rows;
  for (std::size_t n : ns) {
    Samples v(m);
    for_each_replica(m, workers, [&](std::size_t r) {
      Engine eng = make_stream(seed, row_stream(n, r), StreamTag::initial);
      v[r] = static_cast<double>(n) * hminus_norm_sq(sampler.draw(n, eng), rho, alpha, truncation);
    });
    const double mean = mean_of(v);
    rows.push_back({n, m, mean, std::sqrt(unbiased_variance(v, mean) / static_cast<double>(m)), analytic});
  }
  return rows;
}

CrossTerm::CrossTerm(const KernelSpec& kernel, const TestFunction& phi, const SpectralField& rho)
    : kernel_(kernel), g_{derivative(phi, 0), derivative(phi, 1)} {
  const int m = rho.grid_size();
  const KernelSpec& base = kernel.unmollified();
  const auto vel = convolve_velocity(base, rho);
  a_field_.c = {from_field(vel[0], 1e-300), from_field(vel[1], 1e-300)};
  const TestFunction rho_t = from_field(rho, 1e-300);
  std::array<SpectralField, 2> grho{to_field(product(g_[0], rho_t), m), to_field(product(g_[1], rho_t), m)};
  b_ = from_field(convolve_reflected(base, grho), 1e-300);
  c_ = pair_with_density(product(g_[0], a_field_.c[0]) + product(g_[1], a_field_.c[1]), rho);
}

double CrossTerm::operator()(const Points& x) const {
  const Eigen::Index n = x.cols();
  if (kernel_.is_zero()) return 0.0;
  const double inv = 1.0 / static_cast<double>(n);
  double t1 = 0.0;
  if (const auto* bf = std::get_if<BoundedFourierKernel>(&kernel_.variant())) {
    // (1/N^2) sum_{i,j} g(x_i).K(x_i - x_j) with K = sum_k c_k e_k.
    cd s = 0.0;
    for (int c = 0; c < 2; ++c)
      for (const auto& [k, coef] : bf->field.c[c].terms()) {
        cd left = 0.0, right = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
          const double th = k.dot(x.col(i));
          const cd e(std::cos(th), std::sin(th));
          left += g_[c](x.col(i)) * e;
          right += std::conj(e);
        }
        s += coef * left * right;
      }
    t1 = s.real() * inv * inv;
  } else if (kernel_.antisymmetric()) {
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = i + 1; j < n; ++j) {
        const Vec2 k = kernel_eval(kernel_, x.col(i) - x.col(j));
        t1 += k.x() * (g_[0](x.col(i)) - g_[0](x.col(j))) + k.y() * (g_[1](x.col(i)) - g_[1](x.col(j)));
      }
    t1 *= inv * inv;
  } else {
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j) {
        const Vec2 k = kernel_eval(kernel_, x.col(i) - x.col(j));
        t1 += k.x() * g_[0](x.col(i)) + k.y() * g_[1](x.col(i));
      }
    t1 *= inv * inv;
  }
  double ma = 0.0, mb = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vec2 p = x.col(i);
    const Vec2 v = a_field_(p);
    ma += g_[0](p) * v.x() + g_[1](p) * v.y();
    mb += b_(p);
  }
  return t1 - ma * inv - mb * inv + c_;
}

std::vector<ScalingRow> cross_term_scaling(const std::vector<std::size_t>& ns, const KernelSpec& kernel,
                                           const TestFunction& phi, const SpectralField& rho,
                                           std::size_t m, std::uint64_t seed, int workers) {
  if (m < 2) throw ValidationError("cross_term_scaling: need at least 2 replicas");
  const DensitySampler sampler(rho);
  const CrossTerm term(kernel, phi, rho);
  std::vector<ScalingRow> rows;
  for (std::size_t n : ns) {
    Samples v(m);
    for_each_replica(m, workers, [&](std::size_t r) {
      Engine eng = make_stream(seed, row_stream(n, r), StreamTag::initial);
      v[r] = static_cast<double>(n) * std::abs(term(sampler.draw(n, eng)));
    });
    const double mean = mean_of(v);
    rows.push_back({n, m, mean, std::sqrt(unbiased_variance(v, mean) / static_cast<double>(m)), NAN});
  }
  return rows;
}

nlohmann::json to_json(const VarianceCI& v) {
  return {{"M", v.m},          {"level", v.level},       {"mean", v.mean},
          {"variance", v.variance}, {"ci_low", v.ci_low}, {"ci_high", v.ci_high},
          {"half_width", v.half_width}, {"boot_low", v.boot_low}, {"boot_high", v.boot_high},
          {"se", v.se}};
}

nlohmann::json to_json(const NormalityReport& r) {
  return {{"M", r.m},
          {"skewness", r.skewness},
          {"excess_kurtosis", r.excess_kurtosis},
          {"ks", r.ks},
          {"bands", {{"skewness", {r.skew_lo, r.skew_hi}}, {"kurtosis", {r.kurt_lo, r.kurt_hi}}, {"ks_max", r.ks_max}}},
          {"pass", r.pass},
          {"reason", r.reason}};
}

nlohmann::json to_json(const ExpIntegral& e) {
  return {{"N", e.n},         {"M", e.m},           {"seed", e.seed},
          {"estimate", e.estimate}, {"se", e.se},   {"ci_low", e.ci_low},
          {"ci_high", e.ci_high},   {"flags", {{"heavy_tail", e.heavy_tail}}}};
}

nlohmann::json to_json(const ScalingRow& r) {
  nlohmann::json j = {{"N", r.n}, {"M", r.m}, {"estimate", r.estimate}, {"se", r.se}};
  j["analytic"] = std::isfinite(r.analytic) ? nlohmann::json(r.analytic) : nlohmann::json(nullptr);
  return j;
}

}  // namespace tclt
