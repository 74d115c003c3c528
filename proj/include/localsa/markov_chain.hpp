#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "localsa/random.hpp"

namespace localsa {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Outcome of the irreducibility/aperiodicity test on the transition graph.
struct ErgodicityCertificate {
  bool ergodic = false;
  bool irreducible = false;
  std::size_t period = 0;  // 0 when the chain is reducible
  // States not mutually reachable with state 0 (empty when irreducible).
  std::vector<std::size_t> violating_states;
  std::string reason;
};

/// Finite row-stochastic chain. Immutable after construction.
class MarkovChain {
 public:
  static constexpr double kRowTolerance = 1e-12;

  /// Rejects non-stochastic matrices always, and non-ergodic ones unless
  /// `allow_non_ergodic` is set (negative tests, validation reports).
  explicit MarkovChain(Matrix transition, std::vector<std::string> labels = {},
                       bool allow_non_ergodic = false);

  std::size_t num_states() const noexcept { return static_cast<std::size_t>(transition_.rows()); }
  const Matrix& transition() const noexcept { return transition_; }
  const std::vector<std::string>& labels() const noexcept { return labels_; }
  const ErgodicityCertificate& certificate() const noexcept { return certificate_; }
  bool ergodic() const noexcept { return certificate_.ergodic; }

  /// Draws the successor of `state` from row `state`.
  std::size_t sample_step(std::size_t state, RandomStream& rng) const {
    const double u = rng.uniform();
    const double* row = cumulative_.data() + state * num_states();
    std::size_t j = 0;
    while (u >= row[j]) ++j;
    return j;
  }

 private:
  Matrix transition_;
  std::vector<std::string> labels_;
  ErgodicityCertificate certificate_;
  std::vector<double> cumulative_;  // row-major, last positive entry pinned to 1
};

struct StationaryDistribution {
  Vector pi;
};

/// d(k) = max_x TV(P^k(x, .), pi) for k = 0..tau, and the threshold crossing.
struct MixingProfile {
  double alpha = 0.0;
  std::size_t tau = 0;
  std::vector<double> d_curve;
};

ErgodicityCertificate is_ergodic(const Matrix& transition);
inline ErgodicityCertificate is_ergodic(const MarkovChain& chain) { return is_ergodic(chain.transition()); }

StationaryDistribution stationary_distribution(const MarkovChain& chain);

double tv_distance(std::span<const double> p, std::span<const double> q);
double tv_distance(const Vector& p, const Vector& q);

inline constexpr std::size_t kDefaultMixingCap = 1'000'000;

MixingProfile mixing_time(const MarkovChain& chain, double alpha,
                          std::size_t cap = kDefaultMixingCap);

/// Smallest C with tau(alpha) <= C log(1/alpha) across the grid.
double estimate_geometric_constant(const MarkovChain& chain, std::span<const double> alpha_grid);

std::size_t sample_step(const MarkovChain& chain, std::size_t state, RandomStream& rng);

/// Draws an index from a probability vector (used for stationary starts).
std::size_t sample_from(const Vector& distribution, RandomStream& rng);

/// tau(alpha) = max_i tau_i(alpha) over a set of chains, answered from
/// precomputed d-curves. d is stored as a suffix maximum so the answer is
/// the first k after which every recorded d(j) stays below alpha.
class MixingTable {
 public:
  MixingTable() = default;
  explicit MixingTable(std::span<const MarkovChain> chains, std::size_t cap = kDefaultMixingCap);

  std::size_t tau(double alpha) const;
  std::size_t operator()(double alpha) const { return tau(alpha); }

  /// Per-chain suffix-max curves, for reports.
  const std::vector<std::vector<double>>& curves() const noexcept { return curves_; }

 private:
  std::vector<std::vector<double>> curves_;
};

// Generators -------------------------------------------------------------

/// Dirichlet(1) rows mixed with the uniform distribution by `smoothing`.
/// Any smoothing > 0 makes every entry positive, hence ergodic.
MarkovChain random_ergodic_chain(std::size_t n, double smoothing, RandomStream& rng);

/// Chain of the form P = 1 pi^T + u w^T with pi^T u = 0, w^T 1 = 0, w^T u = 0,
/// so P^2 = 1 pi^T exactly: strongly correlated one-step transitions but
/// exact mixing after two steps. Requires n >= 3.
MarkovChain two_step_mixing_chain(std::size_t n, RandomStream& rng);

// Plain-text format: first line n, then n rows of n probabilities.
MarkovChain read_chain(std::istream& in, bool allow_non_ergodic = false);
MarkovChain read_chain_file(const std::string& path, bool allow_non_ergodic = false);
void write_chain(std::ostream& out, const MarkovChain& chain);

}  // namespace localsa
