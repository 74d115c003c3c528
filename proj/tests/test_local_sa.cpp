#include <cmath>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "localsa/apps.hpp"
#include "localsa/error.hpp"
#include "localsa/local_sa.hpp"

using namespace localsa;

namespace {

MarkovChain single_state() { return MarkovChain(Matrix::Ones(1, 1)); }

Federation identity_federation(std::vector<Vector> shifts) {
  std::vector<OperatorSpec> ops;
  std::vector<MarkovChain> chains;
  for (auto& b : shifts) {
    const auto d = b.size();
    ops.push_back(OperatorSpec::linear({-Matrix::Identity(d, d)}, {b}));
    chains.push_back(single_state());
  }
  return build_federation(std::move(ops), std::move(chains));
}

OperatorConstants unit_constants() {
  OperatorConstants c;
  c.B = c.L = c.mu = 1.0;
  return c;
}

Federation random_federation(std::uint64_t seed, std::size_t N, std::size_t d) {
  QuadraticOptions o;
  o.N = N;
  o.d = d;
  o.n_states = 3;
  o.seed = seed;
  return make_quadratic_federation(o);
}

}  // namespace

TEST_SUITE("local-sa") {

TEST_CASE("deterministic examples") {
  auto fed = identity_federation({Vector::Zero(1)});
  AlgorithmConfig cfg;
  cfg.H = 1;
  cfg.rounds = 10;
  cfg.schedule = StepSchedule::constant(0.5);
  cfg.theta0 = Vector::Ones(1);
  auto traj = run_local_sa(fed, cfg, 1);
  for (std::size_t k = 0; k <= 10; ++k) CHECK(traj.bar_theta[k](0) == std::pow(0.5, static_cast<double>(k)));

  Vector b1(2), b2(2);
  b1 << 1, 3;
  b2 << -2, 5;
  fed = identity_federation({b1, b2});
  cfg.rounds = 1;
  cfg.schedule = StepSchedule::constant(1.0);
  cfg.theta0 = Vector();
  traj = run_local_sa(fed, cfg, 1);
  CHECK(traj.bar_theta[1].isApprox((b1 + b2) / 2));

  fed = identity_federation({Vector::Zero(1)});
  cfg.H = 2;
  cfg.schedule = StepSchedule::constant(0.1);
  cfg.theta0 = Vector::Ones(1);
  traj = run_local_sa(fed, cfg, 1);
  CHECK(traj.bar_theta[1](0) == doctest::Approx(0.81).epsilon(1e-15));
}

TEST_CASE("averaging and telescoping identities") {
  RandomStream meta(404);
  for (int trial = 0; trial < 10; ++trial) {
    const auto N = 1 + static_cast<std::size_t>(meta.uniform() * 6);
    const auto d = 1 + static_cast<std::size_t>(meta.uniform() * 5);
    const auto fed = random_federation(trial + 1, N, d);
    AlgorithmConfig cfg;
    cfg.H = 1 + static_cast<std::size_t>(meta.uniform() * 6);
    cfg.rounds = 30;
    cfg.schedule = StepSchedule::constant(0.05);
    cfg.record_locals = true;
    const auto traj = run_local_sa(fed, cfg, static_cast<std::uint64_t>(trial));
    for (std::size_t k = 0; k < cfg.rounds; ++k) {
      Vector sum_f = Vector::Zero(static_cast<Eigen::Index>(d));
      for (std::size_t i = 0; i < N; ++i) {
        REQUIRE(traj.local(k, i, 0) == traj.bar_theta[k]);
        for (std::size_t t = 0; t < cfg.H; ++t) sum_f += fed.ops[i].eval(traj.local(k, i, t), traj.sample(k, i, t));
      }
      Vector avg = Vector::Zero(static_cast<Eigen::Index>(d));
      for (Eigen::Index j = 0; j < avg.size(); ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < N; ++i) acc += traj.local(k, i, cfg.H)(j);
        avg(j) = acc / static_cast<double>(N);
      }
      REQUIRE(avg == traj.bar_theta[k + 1]);
      const Vector resid = traj.bar_theta[k + 1] - traj.bar_theta[k] + (0.05 / static_cast<double>(N)) * sum_f;
      const double scale = std::max({traj.bar_theta[k + 1].norm(), traj.bar_theta[k].norm(), 1.0});
      CHECK(resid.norm() <= 1e-10 * scale);
    }
  }
}

TEST_CASE("determinism and single-agent collapse") {
  const auto fed = random_federation(7, 1, 3);
  AlgorithmConfig cfg;
  cfg.H = 4;
  cfg.rounds = 50;
  cfg.schedule = StepSchedule::harmonic(0.5);
  cfg.record_locals = true;
  const auto a = run_local_sa(fed, cfg, 42);
  const auto b = run_local_sa(fed, cfg, 42);
  CHECK(a.bar_theta == b.bar_theta);
  CHECK(a.samples == b.samples);

  AlgorithmConfig flat = cfg;
  flat.H = 1;
  flat.rounds = cfg.rounds * cfg.H;
  const auto c = run_local_sa(fed, flat, 42);
  for (std::size_t k = 0; k <= cfg.rounds; ++k) REQUIRE(a.bar_theta[k] == c.bar_theta[k * cfg.H]);
}

TEST_CASE("paper-literal indexing reuses samples across rounds") {
  const auto fed = random_federation(3, 2, 2);
  AlgorithmConfig cfg;
  cfg.H = 3;
  cfg.rounds = 20;
  cfg.schedule = StepSchedule::harmonic(0.3);
  cfg.indexing = SampleIndexing::PaperLiteral;
  cfg.record_locals = true;
  const auto traj = run_local_sa(fed, cfg, 5);
  for (std::size_t k = 1; k < cfg.rounds; ++k) {
    for (std::size_t i = 0; i < 2; ++i) {
      for (std::size_t t = 0; t + 1 < cfg.H; ++t) CHECK(traj.sample(k, i, t) == traj.sample(k - 1, i, t + 1));
    }
    for (std::size_t t = 0; t < cfg.H; ++t) CHECK(traj.alpha(k, t) == cfg.schedule.at(k + t));
  }
  CHECK(parse_sample_indexing("paper-literal") == SampleIndexing::PaperLiteral);
  CHECK_THROWS_AS(parse_sample_indexing("other"), Error);
}

TEST_CASE("divergence is reported") {
  auto fed = identity_federation({Vector::Ones(1)});
  AlgorithmConfig cfg;
  cfg.rounds = 5000;
  cfg.schedule = StepSchedule::constant(3.0);
  try {
    run_local_sa(fed, cfg, 1);
    FAIL("expected divergence");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Diverged);
  }
}

TEST_CASE("max constant step examples") {
  const auto c = unit_constants();
  CHECK(constant_step_rhs(c, 1, 1) == doctest::Approx(1.0 / 680.0));
  CHECK(max_constant_step(c, 1, 1, [](double) { return 1; }) == doctest::Approx(1.0 / 680.0).epsilon(1e-12));
  CHECK(max_constant_step(c, 1, 1, [](double) { return 2; }) == doctest::Approx(1.0 / 1360.0).epsilon(1e-12));
  // tau = 0 leaves only the growth cap 2BH alpha <= log 2.
  CHECK(max_constant_step(c, 1, 1, [](double) { return 0; }) == doctest::Approx(std::log(2.0) / 2.0).epsilon(1e-12));
  CHECK_THROWS_AS(max_constant_step(c, 1, 1, [](double) { return std::size_t{1} << 40; }), Error);
}

TEST_CASE("max constant step is certified and respects the growth cap") {
  RandomStream rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    OperatorConstants c;
    c.mu = 0.1 + rng.uniform();
    c.L = c.mu + 2.0 * rng.uniform();
    c.B = std::max(c.L, 3.0 * rng.uniform());
    const auto N = 1 + static_cast<std::size_t>(rng.uniform() * 8);
    const auto H = 1 + static_cast<std::size_t>(rng.uniform() * 8);
    // A non-monotone alpha * tau(alpha).
    const TauFn tau = [](double a) { return static_cast<std::size_t>(2.0 + std::log(1.0 / a) + (a > 1e-4 ? 3 : 0)); };
    const double a = max_constant_step(c, N, H, tau);
    CHECK(a * static_cast<double>(tau(a)) <= constant_step_rhs(c, N, H));
    CHECK(2.0 * c.B * static_cast<double>(H) * a <= std::log(2.0));
  }
}

TEST_CASE("K* examples") {
  const auto h = StepSchedule::harmonic(1e-3);
  CHECK(find_K_star(h, 0.01, [](double) { return 0; }) == 0);
  const auto one = StepSchedule::harmonic(1.0);
  const auto k = find_K_star(one, 0.1, [](double) { return 1; });
  CHECK(k == 20);
  // Scan oracle and postcondition replay.
  std::size_t oracle = 1;
  while (1.0 / oracle + 1.0 / (oracle + 1.0) > 0.1) ++oracle;
  CHECK(k == oracle);
  for (std::size_t kk : {k, k + 10 * k}) CHECK(alpha_window_sum(one, kk, 1) <= 0.1);
  CHECK_THROWS_AS(find_K_star(one, 1e-9, [](double) { return 1; }, 10.0, 1000), Error);
}

TEST_CASE("K* for a generated federation holds on the horizon") {
  const auto fed = random_federation(11, 3, 2);
  const MixingTable table(fed.chains);
  const TauFn tau = [&](double a) { return table.tau(a); };
  const auto s = StepSchedule::harmonic(0.5);
  const auto H = 2;
  const auto k = find_K_star(s, fed.constants, fed.N(), H, tau, SampleIndexing::Fresh);
  const double rhs = timevarying_step_rhs(fed.constants, fed.N(), H, 0.5);
  auto round_alpha = [&](std::size_t r) { return round_step(s, r, H, SampleIndexing::Fresh); };
  for (std::size_t kk = k; kk <= 11 * k; kk += std::max<std::size_t>(1, k / 50)) {
    const auto t = tau(round_alpha(kk));
    REQUIRE(kk >= t);
    CHECK(alpha_window_sum(round_alpha, kk, t) <= rhs);
  }
}

TEST_CASE("alpha window sum") {
  CHECK(alpha_window_sum(StepSchedule::harmonic(2.0), 5, 0) == doctest::Approx(2.0 / 6.0));
  CHECK(alpha_window_sum(StepSchedule::harmonic(1.0), 3, 2) == doctest::Approx(13.0 / 12.0));
  CHECK(alpha_window_sum(StepSchedule::constant(0.25), 9, 3) == doctest::Approx(1.0));
  CHECK_THROWS_AS(alpha_window_sum(StepSchedule::constant(0.25), 1, 3), Error);
}

TEST_CASE("round log round trip") {
  const auto fed = random_federation(5, 2, 3);
  AlgorithmConfig cfg;
  cfg.H = 3;
  cfg.rounds = 15;
  cfg.schedule = StepSchedule::constant(0.01);
  cfg.record_locals = true;
  const auto traj = run_local_sa(fed, cfg, 9);
  std::stringstream ss;
  write_trajectory(ss, traj);
  const auto back = read_trajectory(ss);
  CHECK(back.bar_theta == traj.bar_theta);
  CHECK(back.locals == traj.locals);
  CHECK(back.samples == traj.samples);
  CHECK(back.alphas == traj.alphas);
  std::stringstream bad("not a log");
  CHECK_THROWS_AS(read_trajectory(bad), Error);
}

}  // TEST_SUITE
