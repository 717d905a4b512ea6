#include "tclt/errors.hpp"
#include "tclt/particles.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace tclt;
using Catch::Approx;

namespace {

SpectralField taylor_green(int m = 16, double eps = 0.5) {
  SpectralField rho = uniform_density(m);
  for (WaveVector k : {WaveVector{1, 1}, {1, -1}, {-1, 1}, {-1, -1}}) rho.at(k) = eps / 4;
  return rho;
}

KernelSpec swirl() {
  return KernelSpec::bounded_fourier({{TestFunction::sine({0, 1}), TestFunction::sine({1, 0})}});
}

SimConfig base_config(std::size_t n) {
  SimConfig c;
  c.n = n;
  c.dt = 0.01;
  c.horizon = 0.1;
  c.sigma = 0.2;
  c.seed = 42;
  return c;
}

}  // namespace

TEST_CASE("sampling is reproducible and rejects bad densities") {
  const SpectralField rho = taylor_green();
  const ParticleState a = sample_iid_initial(rho, 500, 7, 3);
  const ParticleState b = sample_iid_initial(rho, 500, 7, 3);
  CHECK((a.positions.array() == b.positions.array()).all());
  const ParticleState c = sample_iid_initial(rho, 500, 7, 4);
  CHECK_FALSE((a.positions.array() == c.positions.array()).all());
  CHECK(a.positions.minCoeff() >= 0.0);
  CHECK(a.positions.maxCoeff() < kTwoPi);

  SpectralField neg = uniform_density(16);
  neg.at({1, 0}) = 0.8;
  neg.at({-1, 0}) = 0.8;
  CHECK_THROWS_AS(sample_iid_initial(neg, 10, 1), ValidationError);
  SpectralField heavy = 2.0 * uniform_density(16);
  CHECK_THROWS_AS(sample_iid_initial(heavy, 10, 1), ValidationError);
}

TEST_CASE("sampled law matches the density moments") {
  const SpectralField rho = taylor_green(16, 0.8);
  const ParticleState s = sample_iid_initial(rho, 200000, 1);
  const auto e = empirical_modes(s.positions, {{1, 1}, {1, 0}});
  // E exp(-i k.X) = rho_hat(k); SE ~ 1/sqrt(2N)
  CHECK(std::abs(e[0] - rho[{1, 1}]) < 5 * std::sqrt(0.5 / 200000));
  CHECK(std::abs(e[1]) < 5 * std::sqrt(0.5 / 200000));
}

TEST_CASE("pairwise drift routes agree") {
  const ParticleState s = sample_iid_initial(taylor_green(), 300, 5);
  CHECK(pairwise_drift(s.positions, KernelSpec::zero()).isZero(0));
  const Points spectral = pairwise_drift(s.positions, swirl(), true, 1, PairRoute::spectral);
  const Points direct = pairwise_drift(s.positions, swirl(), true, 1, PairRoute::direct);
  CHECK((spectral - direct).cwiseAbs().maxCoeff() < 1e-12);

  VectorField skew{{TestFunction::cosine({1, 2}, 0.4) + TestFunction::constant(0.3), TestFunction::sine({2, 1})}};
  const KernelSpec k2 = KernelSpec::bounded_fourier(skew);
  CHECK((pairwise_drift(s.positions, k2, true, 1, PairRoute::spectral) -
         pairwise_drift(s.positions, k2, true, 1, PairRoute::direct)).cwiseAbs().maxCoeff() < 1e-12);

  const KernelSpec bs = mollify(KernelSpec::biot_savart(), 1e-3);
  const Points det = pairwise_drift(s.positions, bs, true);
  const Points par = pairwise_drift(s.positions, bs, false, 3);
  CHECK((det - par).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((det - pairwise_drift(s.positions, bs, true)).cwiseAbs().maxCoeff() == 0.0);
  CHECK_THROWS_AS(pairwise_drift(s.positions, bs, true, 1, PairRoute::spectral), UnsupportedError);
}

TEST_CASE("singular particle dynamics are rejected without mollification") {
  SimConfig c = base_config(10);
  c.kernel = KernelSpec::biot_savart();
  CHECK_THROWS_AS(c.validate(), ValidationError);
  Points x(2, 2);
  x << 1, 1, 2, 2;
  CHECK_THROWS_AS(pairwise_drift(x, KernelSpec::biot_savart()), SingularityError);
}

TEST_CASE("em_step without dynamics only advances time") {
  SimConfig c = base_config(50);
  c.sigma = 0.0;
  ParticleState s = sample_iid_initial(uniform_density(16), 50, 1);
  const Points before = s.positions;
  Normal noise(make_stream(1, 0, StreamTag::dynamics));
  em_step(s, c, noise);
  CHECK(s.t == Approx(0.01));
  CHECK((s.positions.array() == before.array()).all());
}

TEST_CASE("constant drift translates lifts") {
  SimConfig c = base_config(20);
  c.sigma = 0.0;
  c.drift = VectorField::constant(Vec2(0.5, -1.0));
  ParticleState s = sample_iid_initial(uniform_density(16), 20, 1);
  const Points start = s.lifts;
  Normal noise(make_stream(1, 0, StreamTag::dynamics));
  for (int i = 0; i < 10; ++i) em_step(s, c, noise);
  CHECK(((s.lifts - start).row(0).array() - 0.05).abs().maxCoeff() < 1e-14);
  CHECK(((s.lifts - start).row(1).array() + 0.1).abs().maxCoeff() < 1e-14);
}

TEST_CASE("momentum is conserved for antisymmetric kernels") {
  for (const KernelSpec& k : {swirl(), mollify(KernelSpec::biot_savart(), 1e-2)}) {
    SimConfig c = base_config(200);
    c.sigma = 0.0;
    c.kernel = k;
    c.horizon = 0.5;
    c.dt = 0.05;
    ParticleState s = sample_iid_initial(taylor_green(), 200, 3);
    const Vec2 m0 = s.lifts.rowwise().mean();
    Normal noise(make_stream(1, 0, StreamTag::dynamics));
    for (int i = 0; i < 10; ++i) em_step(s, c, noise);
    CHECK((s.lifts.rowwise().mean() - m0).norm() < 1e-9);
  }
}

TEST_CASE("observers and horizons") {
  SimConfig c = base_config(30);
  c.kernel = swirl();
  const SpectralField rho = taylor_green();
  const std::vector<WaveVector> modes{{0, 0}, {1, 0}};
  c.horizon = 0.0;
  auto t0 = simulate(c, rho, {{0.0, modes, false}});
  REQUIRE(t0.snapshots.size() == 1);
  CHECK(t0.snapshots[0].t == 0.0);

  c.horizon = 0.105;  // last step is clamped
  CHECK(c.steps() == 11);
  auto t1 = simulate(c, rho, {{0.0, modes, false}, {0.0525, modes, false}, {0.105, modes, true}});
  REQUIRE(t1.snapshots.size() == 3);
  CHECK(t1.snapshots[1].step == 5);
  CHECK(t1.snapshots[2].t == Approx(0.105));
  for (const auto& s : t1.snapshots) CHECK(s.empirical[0] == cd(1.0, 0.0));
  CHECK_THROWS_AS(simulate(c, rho, {{0.2, modes, false}}), ValidationError);

  auto t2 = simulate(c, rho, {{0.0, modes, false}, {0.0525, modes, false}, {0.105, modes, true}});
  CHECK((t2.snapshots[2].state->lifts.array() == t1.snapshots[2].state->lifts.array()).all());
}

TEST_CASE("replicas are independent and ordered") {
  SimConfig c = base_config(40);
  c.kernel = swirl();
  const auto runs = replica_run(c, taylor_green(), {{0.1, {{1, 0}}, false}}, 4, 2);
  REQUIRE(runs.size() == 4);
  for (std::size_t r = 0; r < 4; ++r) CHECK(runs[r].replica_id == r);
  CHECK(runs[0].snapshots[0].empirical[0] != runs[1].snapshots[0].empirical[0]);
  const auto again = replica_run(c, taylor_green(), {{0.1, {{1, 0}}, false}}, 4, 1);
  for (std::size_t r = 0; r < 4; ++r) CHECK(again[r].snapshots[0].empirical == runs[r].snapshots[0].empirical);
}

TEST_CASE("free Brownian particles keep the uniform law") {
  SimConfig c = base_config(100);
  c.horizon = 0.5;
  c.dt = 0.05;
  c.sigma = 0.5;
  const std::size_t m = 2000;
  const auto runs = replica_run(c, uniform_density(16), {{0.5, {{1, 0}, {2, 1}}, false}}, m);
  for (int q = 0; q < 2; ++q) {
    std::vector<double> p(m);
    cd mean = 0.0;
    for (std::size_t r = 0; r < m; ++r) {
      const cd e = runs[r].snapshots[0].empirical[q];
      mean += e;
      p[r] = std::norm(e);
    }
    mean /= double(m);
    double pm = 0.0, pv = 0.0;
    for (double v : p) pm += v / m;
    for (double v : p) pv += (v - pm) * (v - pm) / (m - 1);
    CHECK(std::abs(pm - 0.01) < 4 * std::sqrt(pv / m));
    CHECK(std::abs(mean) < 4 * std::sqrt(0.01 / m));
  }
}
