#include "tclt/errors.hpp"
#include "tclt/statistics.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <boost/math/distributions/normal.hpp>
#include <boost/random/exponential_distribution.hpp>
#include <boost/random/normal_distribution.hpp>

using namespace tclt;
using Catch::Approx;

namespace {

SpectralField taylor_green(int m = 16, double eps = 0.5) {
  SpectralField rho = uniform_density(m);
  for (WaveVector k : {WaveVector{1, 1}, {1, -1}, {-1, 1}, {-1, -1}}) rho.at(k) = eps / 4;
  return rho;
}

Samples normals(std::size_t n, std::uint64_t seed, double mean = 0.0, double sd = 1.0) {
  Engine eng = make_stream(seed, 0, StreamTag::statistics);
  boost::random::normal_distribution<double> nd(mean, sd);
  Samples x(n);
  for (double& v : x) v = nd(eng);
  return x;
}

double normal_quantile(double u) {
  return boost::math::quantile(boost::math::normal_distribution<double>(), u);
}

KernelSpec asymmetric_kernel() {
  return KernelSpec::bounded_fourier({{TestFunction::sine({0, 1}) + TestFunction::cosine({1, 1}, 0.4),
                                        TestFunction::sine({1, 0}) + TestFunction::constant(0.2)}});
}

}  // namespace

TEST_CASE("fluctuation modes") {
  Points x = Points::Zero(2, 4);
  const auto eta = fluct_modes(x, uniform_density(16), {{0, 0}, {1, 0}});
  CHECK(eta[0] == cd{});
  CHECK(eta[1] == cd(2.0, 0.0));

  const SpectralField rho = taylor_green();
  const ParticleState s = sample_iid_initial(rho, 300, 2);
  const TestFunction phi = TestFunction::cosine({1, 1}, 0.7) + TestFunction::sine({0, 1});
  std::vector<WaveVector> modes{{1, 1}, {-1, -1}, {0, 1}, {0, -1}};
  const double paired = pair_fluctuation(phi, modes, fluct_modes(s.positions, rho, modes));
  double direct = 0.0;
  for (Eigen::Index i = 0; i < s.positions.cols(); ++i) direct += phi(s.positions.col(i));
  direct = std::sqrt(300.0) * (direct / 300.0 - pair_with_density(phi, rho));
  CHECK(paired == Approx(direct).margin(1e-12));
  CHECK_THROWS_AS(pair_fluctuation(phi, {{1, 1}}, {cd{}}), ValidationError);
}

TEST_CASE("variance intervals") {
  const VarianceCI z = variance_ci(Samples(50, 0.0));
  CHECK(z.mean == 0.0);
  CHECK(z.variance == 0.0);
  CHECK(z.ci_low == 0.0);
  CHECK(z.ci_high == 0.0);
  CHECK(z.half_width == 0.0);

  const VarianceCI v = variance_ci(normals(10000, 1), 0.99, 4);
  CHECK(v.variance >= 0.94);
  CHECK(v.variance <= 1.06);
  CHECK(v.ci_low < v.variance);
  CHECK(v.ci_high > v.variance);
  CHECK(v.ci_high - v.ci_low < 0.08);
  CHECK(v.boot_low == Approx(v.ci_low).margin(0.01));
  CHECK(v.boot_high == Approx(v.ci_high).margin(0.01));
  CHECK(variance_ci(normals(10000, 1), 0.99, 4).boot_low == v.boot_low);
  CHECK_THROWS_AS(variance_ci({1.0}), ValidationError);
  CHECK_THROWS_AS(variance_ci({1.0, NAN}), ValidationError);
}

TEST_CASE("normality test") {
  int passes = 0;
  for (std::uint64_t seed = 0; seed < 30; ++seed) passes += normality_test(normals(2000, 100 + seed)).pass;
  CHECK(passes >= 27);

  Engine eng = make_stream(5, 0, StreamTag::statistics);
  boost::random::exponential_distribution<double> ed;
  Samples e(2000);
  for (double& v : e) v = ed(eng);
  const auto r = normality_test(e);
  CHECK_FALSE(r.pass);
  CHECK_FALSE(r.skew_pass);
  CHECK(r.skewness == Approx(2.0).margin(0.4));

  const auto c = normality_test(Samples(500, 3.0));
  CHECK_FALSE(c.pass);
  CHECK(c.reason == "degenerate");
}

TEST_CASE("one-dimensional W1") {
  const Samples a = normals(1000, 7);
  CHECK(w1_1d(a, a) == 0.0);
  Samples b = a;
  for (double& v : b) v += 0.37;
  CHECK(w1_1d(a, b) == Approx(0.37).epsilon(1e-12));
  const Samples big = normals(1500, 8);
  CHECK(w1_1d(a, big, 3) == w1_1d(a, big, 3));
  CHECK(w1_1d(big, a, 3) > 0.0);
  CHECK(w1_1d(normals(10000, 9), normal_quantile) <= 0.02);
  CHECK_THROWS_AS(w1_1d(Samples{}, a), ValidationError);
}

TEST_CASE("W1 to a Gaussian target") {
  const Samples x = normals(10000, 11, 0.5, 2.0);
  const double d = dbl_gaussian(x, 0.5, 4.0);
  CHECK(d <= 0.03 * 2.0);
  CHECK(dbl_gaussian(normals(10000, 12), 0.0, 1.0) <= 0.03);
  // the quantile-grid route approximates the same integral
  const Samples y = normals(3000, 13, 0.2, 1.0);
  CHECK(dbl_gaussian(y, 0.0, 1.0) == Approx(w1_1d(y, normal_quantile)).margin(2e-3));
  CHECK(dbl_gaussian(Samples(10, 1.5), 1.5, 3.0) == Approx(std::sqrt(2 * 3.0 / kPi)).epsilon(1e-12));
  const Samples base = normals(2000, 14);
  for (double c : {0.1, -0.7, 2.0}) {
    Samples s = base;
    for (double& v : s) v += c;
    CHECK(dbl_gaussian(s, 0.0, 1.0) <= dbl_gaussian(base, 0.0, 1.0) + std::abs(c) + 1e-12);
  }
  CHECK_THROWS_AS(dbl_gaussian(base, 0.0, 0.0), ValidationError);
}

TEST_CASE("pushforward marginals") {
  const SpectralField unif = uniform_density(16);
  CHECK(pushforward_cdf(unif, {1, 1}, 2.0) == Approx(2.0 / kTwoPi).epsilon(1e-14));
  const SpectralField rho = taylor_green(16, 0.8);
  CHECK(pushforward_cdf(rho, {1, 0}, 1.3) == Approx(1.3 / kTwoPi).epsilon(1e-13));
  // grid quadrature oracle: G(theta) = int rho 1{(x1 + x2) mod 2pi < theta}
  const int n = 2000;
  const double h = kTwoPi / n;
  for (double theta : {0.7, 2.5, 5.0}) {
    double g = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const Vec2 p((i + 0.5) * h, (j + 0.5) * h);
        if (wrap_coord(p.x() + p.y()) < theta)
          g += (1 + 0.8 * std::cos(p.x()) * std::cos(p.y())) / kTorusArea * h * h;
      }
    CHECK(pushforward_cdf(rho, {1, 1}, theta) == Approx(g).margin(2e-3));
  }
}

TEST_CASE("circular W1") {
  const auto uniform_cdf = [](double t) { return t / kTwoPi; };
  CHECK(circular_w1(Samples(100, 0.0), uniform_cdf) == Approx(kPi / 2).epsilon(1e-5));
  CHECK(circular_w1(Samples(100, 2.0), uniform_cdf) == Approx(kPi / 2).epsilon(1e-5));
  Points x = Points::Zero(2, 50);
  CHECK(sliced_marginal_w1(x, uniform_density(16), lattice_directions()) >= kPi / 4);

  const SpectralField rho = taylor_green();
  double small = 0.0, large = 0.0;
  for (std::uint64_t r = 0; r < 5; ++r) {
    small += sliced_marginal_w1(sample_iid_initial(rho, 400, 1, r).positions, rho, lattice_directions()) / 5;
    large += sliced_marginal_w1(sample_iid_initial(rho, 6400, 1, r).positions, rho, lattice_directions()) / 5;
  }
  // sampling floor ~ M^{-1/2}
  CHECK(large < 0.5 * small);
  CHECK(small < 0.2);
}

TEST_CASE("lattice directions") {
  const auto all = lattice_directions();
  REQUIRE(all.size() == 8);
  for (std::size_t i = 0; i < all.size(); ++i) {
    CHECK(all[i].sup_norm() <= 2);
    CHECK(std::gcd(std::abs(all[i].k1), std::abs(all[i].k2)) == 1);
    for (std::size_t j = 0; j < i; ++j) {
      CHECK(all[i] != all[j]);
      CHECK(all[i] != -all[j]);
    }
  }
  const auto three = lattice_directions(3, 5);
  CHECK(three.size() == 3);
  CHECK(three == lattice_directions(3, 5));
}

TEST_CASE("two-point functions") {
  const SpectralField rho = taylor_green(16, 0.6);
  const ParticleState s = sample_iid_initial(rho, 60, 3);
  const auto jw = TwoPointFunction::jabin_wang(0.2, {1, 1}, rho);
  const auto us = TwoPointFunction::joint_cancelling(0.2, rho);
  for (const TwoPointFunction& c : {jw, us, TwoPointFunction::constant(0.3)}) {
    CHECK(c.tensor_pairing(s.positions) == Approx(tensor_pairing_direct(c, s.positions)).margin(1e-13));
  }
  // cancellations by grid quadrature
  const int n = 64;
  const double h = kTwoPi / n;
  auto density = [&](const Vec2& p) { return (1 + 0.6 * std::cos(p.x()) * std::cos(p.y())) / kTorusArea; };
  double joint = 0.0, max_marginal = 0.0;
  for (int i = 0; i < n; i += 7)
    for (int j = 0; j < n; j += 5) {
      const Vec2 x(i * h, j * h);
      double marg_x = 0.0, marg_y = 0.0;
      for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b) {
          const Vec2 y(a * h, b * h);
          marg_x += jw(x, y) * density(y) * h * h;
          marg_y += jw(y, x) * density(y) * h * h;
        }
      max_marginal = std::max({max_marginal, std::abs(marg_x), std::abs(marg_y)});
    }
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      for (int a = 0; a < n; a += 4)
        for (int b = 0; b < n; b += 4) {
          const Vec2 x(i * h, j * h), y(a * h, b * h);
          joint += us(x, y) * density(x) * density(y) * h * h * (4 * h) * (4 * h);
        }
  CHECK(max_marginal < 1e-14);
  CHECK(std::abs(joint) < 1e-14);
}

TEST_CASE("exponential integrals") {
  const SpectralField unif = uniform_density(16);
  const auto zero = exp_integral_jw(TwoPointFunction::jabin_wang(0.0, {1, 0}, unif), unif, 10, 100, 1);
  CHECK(zero.estimate == 1.0);
  CHECK(zero.se == 0.0);
  CHECK(exp_integral_us(TwoPointFunction::joint_cancelling(0.0, unif), unif, 10, 100, 1).estimate == 1.0);
  const auto c = exp_integral_us(TwoPointFunction::constant(0.2), unif, 50, 20, 1);
  CHECK(c.estimate == Approx(std::exp(50 * 0.04)).epsilon(1e-12));
  CHECK_THROWS_AS(exp_integral_jw(TwoPointFunction::constant(0.2), unif, 1, 100, 1), ValidationError);

  const auto a = exp_integral_jw(TwoPointFunction::jabin_wang(0.2, {1, 0}, unif), unif, 16, 4000, 2, 0.99, 2);
  const auto b = exp_integral_jw(TwoPointFunction::jabin_wang(0.2, {1, 0}, unif), unif, 16, 4000, 2, 0.99, 1);
  CHECK(a.estimate == b.estimate);
  CHECK(a.ci_low < a.estimate);
  CHECK(a.estimate < a.ci_high);
  CHECK_FALSE(a.heavy_tail);
  CHECK(a.estimate == Approx(1.25).margin(0.05));

  const std::vector<ExpIntegral> grow{exp_integral_us(TwoPointFunction::constant(0.2), unif, 8, 20, 1),
                                      exp_integral_us(TwoPointFunction::constant(0.2), unif, 64, 20, 1)};
  CHECK_FALSE(flat_in_n(grow));
}

TEST_CASE("negative Sobolev norm of the empirical measure") {
  const SpectralField rho = taylor_green();
  const ParticleState s = sample_iid_initial(rho, 50, 4);
  const int r = 5;
  std::vector<WaveVector> modes;
  for (int a = -r; a <= r; ++a)
    for (int b = -r; b <= r; ++b) modes.push_back({a, b});
  const auto e = empirical_modes(s.positions, modes);
  double direct = 0.0;
  for (std::size_t q = 0; q < modes.size(); ++q) {
    if (modes[q].is_zero()) continue;
    direct += std::pow(1.0 + modes[q].norm_sq(), -2.0) * std::norm(e[q] - rho[modes[q]]);
  }
  CHECK(hminus_norm_sq(s.positions, rho, 2.0, r) == Approx(direct).epsilon(1e-12));

  const auto rows = hminus_scaling({20, 200}, rho, 2.0, 400, 8, 6);
  for (const auto& row : rows) CHECK(std::abs(row.estimate - row.analytic) <= 3 * row.se);
  CHECK_THROWS_AS(hminus_scaling({20}, rho, 1.0, 10, 8, 6), ValidationError);
}

TEST_CASE("cross term") {
  const SpectralField rho = taylor_green(16, 0.6);
  const TestFunction phi = TestFunction::cosine({1, 0}, std::sqrt(2.0)) + TestFunction::sine({1, 1}, 0.5);
  const ParticleState s = sample_iid_initial(rho, 40, 8);
  CHECK(CrossTerm(KernelSpec::zero(), phi, rho)(s.positions) == 0.0);
  const auto rows = cross_term_scaling({10, 20}, KernelSpec::zero(), phi, rho, 5, 1);
  for (const auto& row : rows) CHECK(row.estimate == 0.0);

  // brute force: int int grad phi(x).K(x - y) dnu(y) dnu(x), nu = mu_N - rho, by grid quadrature
  const KernelSpec k = asymmetric_kernel();
  const int n = 48;
  const double h = kTwoPi / n;
  const GridArray rg = transform_to_grid(taylor_green(n, 0.6));
  auto g = [&](const Vec2& x) { return phi.gradient(x); };
  double t1 = 0.0, t2 = 0.0, t3 = 0.0, t4 = 0.0;
  const auto np = s.positions.cols();
  for (Eigen::Index i = 0; i < np; ++i)
    for (Eigen::Index j = 0; j < np; ++j) t1 += g(s.positions.col(i)).dot(kernel_eval(k, s.positions.col(i) - s.positions.col(j)));
  t1 /= double(np * np);
  std::vector<Vec2> nodes;
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b) nodes.emplace_back(a * h, b * h);
  for (Eigen::Index i = 0; i < np; ++i) {
    const Vec2 xi = s.positions.col(i);
    for (std::size_t q = 0; q < nodes.size(); ++q) {
      const double w = rg(q / n, q % n) * h * h;
      t2 += g(xi).dot(kernel_eval(k, xi - nodes[q])) * w / np;
      t3 += g(nodes[q]).dot(kernel_eval(k, nodes[q] - xi)) * w / np;
    }
  }
  for (std::size_t p = 0; p < nodes.size(); p += 1)
    for (std::size_t q = 0; q < nodes.size(); q += 1)
      t4 += g(nodes[p]).dot(kernel_eval(k, nodes[p] - nodes[q])) * rg(p / n, p % n) * rg(q / n, q % n) * h * h * h * h;
  const double brute = t1 - t2 - t3 + t4;
  CHECK(CrossTerm(k, phi, rho)(s.positions) == Approx(brute).margin(1e-10));

  // antisymmetric route: with one particle the pair sum is empty, so
  // term(x) = pairs / N^2 + mean_i term({x_i}) exactly.
  const KernelSpec bs = mollify(KernelSpec::biot_savart(), 1e-3);
  const CrossTerm ct(bs, phi, rho);
  double pairs = 0.0, singles = 0.0;
  for (Eigen::Index i = 0; i < np; ++i) {
    singles += ct(Points(s.positions.col(i))) / double(np);
    for (Eigen::Index j = 0; j < np; ++j)
      if (i != j) pairs += g(s.positions.col(i)).dot(kernel_eval(bs, s.positions.col(i) - s.positions.col(j)));
  }
  CHECK(ct(s.positions) == Approx(pairs / double(np * np) + singles).margin(1e-12));
}
