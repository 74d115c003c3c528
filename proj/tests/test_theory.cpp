#include <cmath>
#include <vector>

#include "doctest.h"
#include "localsa/apps.hpp"
#include "localsa/error.hpp"
#include "localsa/theory.hpp"

using namespace localsa;

namespace {

BoundParams unit_params(std::size_t tau) {
  BoundParams p;
  p.B = p.L = p.mu = p.C = 1.0;
  p.N = p.H = 1;
  p.theta_star_norm = 0.0;
  p.tau_fn = [tau](double) { return tau; };
  return p;
}

Matrix mat2(double a, double b, double c, double d) {
  Matrix m(2, 2);
  m << a, b, c, d;
  return m;
}

struct Setup {
  Federation fed;
  MixingTable table;
  TauFn tau;
  BoundParams params;
};

Setup quadratic_setup(std::uint64_t seed, std::size_t H) {
  QuadraticOptions o;
  o.N = 3;
  o.d = 3;
  o.seed = seed;
  Setup s{make_quadratic_federation(o), {}, {}, {}};
  s.table = MixingTable(s.fed.chains);
  const auto table = s.table;
  s.tau = [table](double a) { return table.tau(a); };
  s.params = make_bound_params(s.fed, H, 1.0, s.tau);
  return s;
}

}  // namespace

TEST_SUITE("theory") {

TEST_CASE("constant-step bound examples") {
  const auto p = unit_params(0);
  CHECK(theorem_factor(p) == doctest::Approx(85.0));
  const double b = bound_constant_step(0, 0.01, p, 1.0);
  CHECK(b == doctest::Approx(0.99 + 8.0 * 85.0 * std::log(100.0) * 0.01).epsilon(1e-12));
  CHECK(b == doctest::Approx(32.30).epsilon(5e-4));
  // Zero initial error at k = tau leaves the floor term.
  const auto p3 = unit_params(3);
  CHECK(bound_constant_step(3, 0.01, p3, 0.0) == doctest::Approx(8.0 * 85.0 * std::log(100.0) * 0.01));
  CHECK_THROWS_AS(bound_constant_step(2, 0.01, p3, 0.0), Error);
  CHECK_THROWS_AS(bound_constant_step(5, 1.5, p, 0.0), Error);
  // The floor vanishes and the decay factor tends to 1 as alpha shrinks.
  double prev = bound_constant_step(0, 1e-2, p, 0.0);
  for (double a : {1e-3, 1e-4, 1e-6, 1e-9}) {
    const double f = bound_constant_step(0, a, p, 0.0);
    CHECK(f < prev);
    prev = f;
  }
  CHECK(bound_constant_step(0, 1e-12, p, 1.0) == doctest::Approx(1.0).epsilon(1e-7));
  // Monotone decreasing in k.
  for (std::size_t k = 1; k < 200; ++k) CHECK(bound_constant_step(k, 0.01, p, 5.0) < bound_constant_step(k - 1, 0.01, p, 5.0));
}

TEST_CASE("time-varying bound examples") {
  const auto p = unit_params(0);
  const double b = bound_timevarying(9, 2.0, 4, p, 1.0);
  CHECK(b == doctest::Approx(0.16 + 544.0 * std::log(5.0)).epsilon(1e-12));
  CHECK(b == doctest::Approx(875.7).epsilon(1e-4));
  const double x = 16.0 * 4.0 * 85.0;
  CHECK(bound_timevarying(20, 2.0, 4, p, 0.0) == doctest::Approx(x * std::log(21.0 / 2.0) / 21.0));
  CHECK_THROWS_AS(bound_timevarying(3, 2.0, 4, p, 1.0), Error);
  CHECK(bound_timevarying(100000000, 2.0, 4, p, 1.0) < 1e-2);
  double prev = bound_timevarying(1000, 2.0, 4, p, 1.0);
  for (std::size_t k = 2000; k < 100000; k *= 2) {
    const double v = bound_timevarying(k, 2.0, 4, p, 1.0);
    CHECK(v < prev);
    prev = v;
  }
}

TEST_CASE("iterate and drift monitors on admissible runs") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const std::size_t H = 3;
    auto s = quadratic_setup(seed, H);
    AlgorithmConfig cfg;
    cfg.H = H;
    cfg.rounds = 300;
    cfg.record_locals = true;
    cfg.schedule = StepSchedule::constant(max_constant_step(s.fed.constants, s.fed.N(), H, s.tau));
    cfg.theta0 = Vector::Constant(3, 2.0);
    const auto traj = run_local_sa(s.fed, cfg, seed);
    const auto it = check_iterate_bounds(traj, s.params, cfg.schedule);
    const auto dr = check_consensus_drift(traj, s.params, cfg.schedule);
    CHECK(it.passed());
    CHECK(dr.passed());
    CHECK(it.total_checks == 300 * 3 * (H + 1) * 2);
    CHECK(dr.total_checks > 0);
  }
}

TEST_CASE("monitor degenerate cases") {
  // F = 0 everywhere: the average never moves.
  const auto zero = OperatorSpec::nonlinear(2, 1, [](const double*, std::size_t, double* out) { out[0] = out[1] = 0.0; });
  auto fed = build_federation({zero}, {MarkovChain(Matrix::Ones(1, 1))}, {.require_monotone = false});
  AlgorithmConfig cfg;
  cfg.H = 1;
  cfg.rounds = 20;
  cfg.record_locals = true;
  cfg.schedule = StepSchedule::constant(0.1);
  cfg.theta0 = Vector::Ones(2);
  const auto traj = run_local_sa(fed, cfg, 1);
  BoundParams p = unit_params(0);
  CHECK(check_iterate_bounds(traj, p, cfg.schedule).passed());
  p.tau_fn = [](double) { return 2; };
  const auto dr = check_consensus_drift(traj, p, cfg.schedule);
  CHECK(dr.passed());
  CHECK(dr.worst_margin > 0.0);
  // Inadmissible steps are allowed to run; the monitors then flag them.
  auto s = quadratic_setup(2, 4);
  cfg.H = 4;
  cfg.rounds = 3;
  cfg.schedule = StepSchedule::constant(1.5);
  cfg.theta0 = Vector::Constant(3, 5.0);
  const auto bad = run_local_sa(s.fed, cfg, 3);
  CHECK_FALSE(check_iterate_bounds(bad, s.params, cfg.schedule).passed());
}

TEST_CASE("mixing bias examples") {
  // Rank-one chain mixes in one step: deviation is zero from k = 1.
  const auto op = OperatorSpec::linear({mat2(1, 0, 0, 2), mat2(-1, 0.5, 0, 1)}, {Vector::Ones(2), Vector::Zero(2)});
  const MarkovChain rank_one(Matrix::Constant(2, 2, 0.5));
  Vector theta(2);
  theta << 0.3, -0.4;
  const auto r1 = check_mixing_bias(op, rank_one, theta, 0.1);
  CHECK(r1.passed());
  CHECK(r1.worst_margin == doctest::Approx(0.1 * (theta.norm() + 1.0)));

  // The tau = 12 chain with a normalised operator, against a direct matrix-power oracle.
  const MarkovChain two(mat2(0.9, 0.1, 0.2, 0.8));
  const auto small = OperatorSpec::linear({mat2(0.25, 0, 0, 0.5), mat2(0.5, 0.1, 0, 0.2)},
                                          {Vector::Constant(2, 0.3), Vector::Constant(2, -0.2)});
  const auto r2 = check_mixing_bias(small, two, theta, 0.01);
  CHECK(r2.passed());
  CHECK(r2.info.at("tau") == 12.0);
  Matrix pk = Matrix::Identity(2, 2);
  for (int k = 0; k < 12; ++k) pk = pk * two.transition();
  const Vector pi = stationary_distribution(two).pi;
  const Vector mean = mean_operator(small, pi, theta);
  double worst = 0.0;
  for (int x0 = 0; x0 < 2; ++x0) {
    const Vector cond = pk(x0, 0) * small.eval(theta, 0) + pk(x0, 1) * small.eval(theta, 1);
    worst = std::max(worst, (cond - mean).cwiseAbs().maxCoeff());
  }
  CHECK(r2.worst_margin <= 0.01 * (theta.norm() + 1.0) - worst + 1e-15);

  // theta = 0: threshold alpha.
  const auto r3 = check_mixing_bias(small, two, Vector::Zero(2), 0.05);
  CHECK(r3.passed());
  CHECK(r3.info.at("threshold") == doctest::Approx(0.05));
}

TEST_CASE("Monte-Carlo bias check degenerate cases") {
  Vector b(2);
  b << 1, -1;
  const auto op = OperatorSpec::linear({-Matrix::Identity(2, 2)}, {b});
  const auto fed = build_federation({op, op}, {MarkovChain(Matrix::Ones(1, 1)), MarkovChain(Matrix::Ones(1, 1))});
  BoundParams p = make_bound_params(fed, 1, 1.0, [](double) { return 0; });
  AlgorithmConfig cfg;
  cfg.H = 1;
  cfg.schedule = StepSchedule::constant(0.01);
  const auto r = check_bias_bound_mc(fed, cfg, p, 3, 1000, 7);
  CHECK(r.statistical);
  CHECK(r.passed());
  CHECK(r.info.at("estimate") == 0.0);
  CHECK(r.info.at("rhs") > 0.0);

  // H > 1 with no Markov noise: only the local drift remains and the bound holds.
  p = make_bound_params(fed, 4, 1.0, [](double) { return 0; });
  cfg.H = 4;
  const auto r4 = check_bias_bound_mc(fed, cfg, p, 3, 1000, 7);
  CHECK(r4.passed());
  CHECK_THROWS_AS(check_bias_bound_mc(fed, cfg, p, 3, 1, 7), Error);
}

TEST_CASE("Monte-Carlo bias check on a quadratic federation") {
  auto s = quadratic_setup(4, 2);
  AlgorithmConfig cfg;
  cfg.H = 2;
  cfg.schedule = StepSchedule::constant(max_constant_step(s.fed.constants, s.fed.N(), 2, s.tau));
  const auto k = s.tau(cfg.schedule.alpha) + 1;
  const auto r = check_bias_bound_mc(s.fed, cfg, s.params, k, 1000, 3);
  CHECK(r.passed());
  CHECK(r.name == "bias_bound_constant");
}

TEST_CASE("check report bookkeeping") {
  CheckReport r;
  r.record(1.0, 2.0, 0, 0, 0, "a");
  r.record(3.0, 2.0, 1, 0, 0, "b");
  CHECK(r.total_checks == 2);
  CHECK(r.violations == 1);
  CHECK(r.worst_margin == -1.0);
  CHECK(r.details.size() == 1);
  CHECK(r.details[0].what == "b");
  for (int i = 0; i < 100; ++i) r.record(5.0, 0.0, 2, 0, 0, "c");
  CHECK(r.details.size() == CheckReport::kMaxDetails);
  CHECK(r.violations <= r.total_checks);
}

}  // TEST_SUITE
