#include <cmath>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "localsa/error.hpp"
#include "localsa/markov_chain.hpp"

using namespace localsa;

namespace {

Matrix mat(std::initializer_list<std::initializer_list<double>> rows) {
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index r = 0;
  for (const auto& row : rows) {
    Eigen::Index c = 0;
    for (double v : row) m(r, c++) = v;
    ++r;
  }
  return m;
}

// Independent oracle: d(k) by repeated vector-matrix products per start state.
double brute_d(const Matrix& p, const Vector& pi, std::size_t k) {
  double worst = 0.0;
  for (Eigen::Index x = 0; x < p.rows(); ++x) {
    Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(p.rows());
    row(x) = 1.0;
    for (std::size_t s = 0; s < k; ++s) row = row * p;
    worst = std::max(worst, 0.5 * (row.transpose() - pi).cwiseAbs().sum());
  }
  return worst;
}

}  // namespace

TEST_SUITE("markov-core") {

TEST_CASE("stationary distribution examples") {
  CHECK(stationary_distribution(MarkovChain(mat({{0.5, 0.5}, {0.5, 0.5}}))).pi.isApprox(Vector::Constant(2, 0.5)));
  CHECK(stationary_distribution(MarkovChain(mat({{1.0}}))).pi(0) == doctest::Approx(1.0));
  const auto pi = stationary_distribution(MarkovChain(mat({{0.9, 0.1}, {0.2, 0.8}}))).pi;
  CHECK(pi(0) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(pi(1) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("stationary distribution is a fixed point on random chains") {
  RandomStream rng(11);
  for (int trial = 0; trial < 30; ++trial) {
    const auto n = 1 + static_cast<std::size_t>(rng.uniform() * 20);
    const auto chain = random_ergodic_chain(n, 0.01, rng);
    const Vector pi = stationary_distribution(chain).pi;
    CHECK(pi.minCoeff() >= 0.0);
    CHECK(std::abs(pi.sum() - 1.0) <= 1e-12);
    const Vector moved = (pi.transpose() * chain.transition()).transpose();
    CHECK(tv_distance(moved, pi) <= 1e-10);
  }
}

TEST_CASE("tv distance") {
  const std::vector<double> p{0.7, 0.3};
  const std::vector<double> q{0.5, 0.5};
  CHECK(tv_distance(p, p) == 0.0);
  CHECK(tv_distance(std::vector<double>{1, 0}, std::vector<double>{0, 1}) == 1.0);
  CHECK(tv_distance(p, q) == doctest::Approx(0.2));
  CHECK(tv_distance(p, q) == tv_distance(q, p));
  CHECK_THROWS_AS(tv_distance(p, std::vector<double>{1.0}), Error);
}

TEST_CASE("mixing time examples") {
  CHECK(mixing_time(MarkovChain(mat({{0.5, 0.5}, {0.5, 0.5}})), 0.1).tau == 1);
  const MarkovChain two(mat({{0.9, 0.1}, {0.2, 0.8}}));
  const auto profile = mixing_time(two, 0.01);
  CHECK(profile.tau == 12);
  // d(k) = (2/3) 0.7^k for this chain.
  for (std::size_t k = 0; k < profile.d_curve.size(); ++k) {
    CHECK(profile.d_curve[k] == doctest::Approx(2.0 / 3.0 * std::pow(0.7, k)).epsilon(1e-10));
  }
  CHECK(mixing_time(two, 0.9).tau == 0);
  CHECK(mixing_time(MarkovChain(mat({{1.0}})), 0.5).tau == 0);
}

TEST_CASE("mixing time timeout") {
  const MarkovChain slow(mat({{0.999, 0.001}, {0.001, 0.999}}));
  CHECK_THROWS_AS(mixing_time(slow, 1e-3, 10), Error);
  try {
    mixing_time(slow, 1e-3, 10);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Timeout);
  }
}

TEST_CASE("mixing curves are non-increasing and tau is monotone in alpha") {
  RandomStream rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const auto n = 2 + static_cast<std::size_t>(rng.uniform() * 10);
    const auto chain = random_ergodic_chain(n, 0.01, rng);
    const auto pi = stationary_distribution(chain).pi;
    const auto profile = mixing_time(chain, 1e-4);
    for (std::size_t k = 1; k < profile.d_curve.size(); ++k) {
      CHECK(profile.d_curve[k] <= profile.d_curve[k - 1] + 1e-15);
    }
    for (std::size_t k = 0; k < std::min<std::size_t>(profile.d_curve.size(), 8); ++k) {
      CHECK(profile.d_curve[k] == doctest::Approx(brute_d(chain.transition(), pi, k)).epsilon(1e-9));
    }
    std::size_t prev = mixing_time(chain, 0.5).tau;
    for (double a : {0.3, 0.1, 0.03, 0.01, 1e-3, 1e-4}) {
      const auto tau = mixing_time(chain, a).tau;
      CHECK(tau >= prev);
      prev = tau;
    }
  }
}

TEST_CASE("geometric constant") {
  const MarkovChain rank_one(mat({{0.5, 0.5}, {0.5, 0.5}}));
  const std::vector<double> grid{0.1, 0.01};
  CHECK(estimate_geometric_constant(rank_one, grid) == doctest::Approx(1.0 / std::log(10.0)));
  const std::vector<double> g2{0.01};
  CHECK(estimate_geometric_constant(MarkovChain(mat({{0.9, 0.1}, {0.2, 0.8}})), g2) ==
        doctest::Approx(12.0 / std::log(100.0)));
  CHECK(estimate_geometric_constant(MarkovChain(mat({{1.0}})), grid) == 0.0);

  RandomStream rng(3);
  std::vector<double> dense;
  for (int j = 0; j < 10; ++j) dense.push_back(std::pow(10.0, -4.0 + 3.0 * j / 9.0));
  for (int trial = 0; trial < 10; ++trial) {
    const auto chain = random_ergodic_chain(6, 0.05, rng);
    const double c = estimate_geometric_constant(chain, dense);
    for (double a : dense) CHECK(static_cast<double>(mixing_time(chain, a).tau) <= c * std::log(1.0 / a) + 1e-12);
  }
}

TEST_CASE("sampling") {
  RandomStream rng(1);
  const MarkovChain flip(mat({{0, 1}, {1, 0}}), {}, true);
  CHECK(flip.sample_step(0, rng) == 1);
  CHECK(MarkovChain(mat({{1.0}})).sample_step(0, rng) == 0);
  const MarkovChain fair(mat({{0.5, 0.5}, {0.5, 0.5}}));
  std::size_t zeros = 0;
  for (int i = 0; i < 100000; ++i) zeros += fair.sample_step(0, rng) == 0;
  CHECK(std::abs(zeros / 1e5 - 0.5) <= 0.01);

  RandomStream a(99), b(99);
  std::size_t xa = 0, xb = 0;
  const MarkovChain two(mat({{0.9, 0.1}, {0.2, 0.8}}));
  for (int i = 0; i < 1000; ++i) {
    xa = sample_step(two, xa, a);
    xb = sample_step(two, xb, b);
    REQUIRE(xa == xb);
  }
}

TEST_CASE("ergodicity certificate") {
  const auto periodic = is_ergodic(mat({{0, 1}, {1, 0}}));
  CHECK_FALSE(periodic.ergodic);
  CHECK(periodic.irreducible);
  CHECK(periodic.period == 2);
  CHECK(is_ergodic(mat({{0.9, 0.1}, {0.2, 0.8}})).ergodic);
  const auto reducible = is_ergodic(mat({{0.5, 0.5, 0, 0}, {0.5, 0.5, 0, 0}, {0, 0, 0.5, 0.5}, {0, 0, 0.5, 0.5}}));
  CHECK_FALSE(reducible.ergodic);
  CHECK_FALSE(reducible.irreducible);
  CHECK_FALSE(reducible.violating_states.empty());
  // Period 3 cycle with one self-loop becomes aperiodic.
  CHECK_FALSE(is_ergodic(mat({{0, 1, 0}, {0, 0, 1}, {1, 0, 0}})).ergodic);
  CHECK(is_ergodic(mat({{0.5, 0.5, 0}, {0, 0, 1}, {1, 0, 0}})).ergodic);
  CHECK_THROWS_AS(MarkovChain(mat({{0, 1}, {1, 0}})), Error);
  CHECK_THROWS_AS(MarkovChain(mat({{0.5, 0.6}, {0.5, 0.5}})), Error);
  CHECK_THROWS_AS(MarkovChain(mat({{1.5, -0.5}, {0.5, 0.5}})), Error);
}

TEST_CASE("mixing table agrees with mixing_time") {
  RandomStream rng(8);
  std::vector<MarkovChain> chains;
  for (int i = 0; i < 4; ++i) chains.push_back(random_ergodic_chain(5, 0.02, rng));
  const MixingTable table(chains);
  for (double a : {0.3, 0.1, 1e-2, 1e-3, 1e-5, 1e-8}) {
    std::size_t worst = 0;
    for (const auto& c : chains) worst = std::max(worst, mixing_time(c, a).tau);
    CHECK(table.tau(a) == worst);
  }
}

TEST_CASE("two-step chain mixes exactly after two steps") {
  RandomStream rng(21);
  for (int trial = 0; trial < 10; ++trial) {
    const auto chain = two_step_mixing_chain(4, rng);
    const auto pi = stationary_distribution(chain).pi;
    const Matrix p2 = chain.transition() * chain.transition();
    for (Eigen::Index x = 0; x < p2.rows(); ++x) CHECK((p2.row(x).transpose() - pi).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(mixing_time(chain, 1e-6).tau == 2);
  }
}

TEST_CASE("chain text round trip") {
  RandomStream rng(4);
  const auto chain = random_ergodic_chain(5, 0.1, rng);
  std::stringstream ss;
  write_chain(ss, chain);
  const auto back = read_chain(ss);
  CHECK(back.transition() == chain.transition());
  std::istringstream bad("2\n0.5 0.5\n0.5");
  CHECK_THROWS_AS(read_chain(bad), Error);
  std::istringstream periodic("2\n0 1\n1 0\n");
  CHECK_THROWS_AS(read_chain(periodic), Error);
}

}  // TEST_SUITE
