#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "localsa/operators.hpp"

namespace localsa {

// Heterogeneous quadratic federation -----------------------------------

enum class ChainFamily { RandomErgodic, TwoStep };

std::string to_string(ChainFamily family);
ChainFamily parse_chain_family(const std::string& text);

struct QuadraticOptions {
  std::size_t N = 5;
  std::size_t d = 4;
  std::size_t n_states = 4;
  double mu_target = 1.0;
  double L_target = 2.0;
  double heterogeneity = 0.5;
  std::uint64_t seed = 1;
  ChainFamily chain_family = ChainFamily::RandomErgodic;
  double smoothing = 0.01;
  double q_perturbation = 0.5;  // per-state spread as a fraction of mu_target
  double c_scale = 1.0;         // length of the shared part of c
  double c_noise = 0.1;         // per-state spread of c
};

/// F_i(theta; x) = Q_i(x) theta - c_i(x). Mean matrices have spectra in
/// [mu_target, L_target]; per-state matrices stay positive semidefinite.
Federation make_quadratic_federation(const QuadraticOptions& options);

// Markov decision processes --------------------------------------------

struct MDP {
  std::size_t S = 0;
  std::size_t A = 0;
  std::vector<double> P;  // P(s' | s, a) at (s * A + a) * S + s'
  Matrix R;               // S x A
  double gamma = 0.0;
  double R_max = 0.0;

  double p(std::size_t s, std::size_t a, std::size_t s_next) const { return P[(s * A + a) * S + s_next]; }
  void validate() const;
};

struct Policy {
  Matrix probs;  // S x A, rows sum to 1

  static Policy uniform(std::size_t S, std::size_t A);
  void validate(const MDP& mdp, bool require_positive) const;
};

/// Rows are phi(s) for state features or phi(s, a) at row s * n_actions + a.
struct FeatureMap {
  Matrix phi;
  std::size_t n_actions = 0;  // 0 for state features

  std::size_t dim() const noexcept { return static_cast<std::size_t>(phi.cols()); }
};

struct FeatureCheck {
  bool full_rank = false;
  bool norms_ok = false;
  std::size_t rank = 0;
  double max_row_norm = 0.0;
  bool pass() const noexcept { return full_rank && norms_ok; }
};

FeatureCheck validate_features(const FeatureMap& features);

/// Gaussian rows on `active` rows (all when empty), orthonormal columns,
/// then scaled so the largest row norm is 1. Inactive rows stay zero.
FeatureMap make_features(std::size_t rows, std::size_t L, RandomStream& rng,
                         const std::vector<bool>& active = {}, std::size_t n_actions = 0);

/// Indicator features over (s, a) pairs.
FeatureMap tabular_features(std::size_t S, std::size_t A);

MDP make_random_mdp(std::size_t S, std::size_t A, double gamma, double R_max, double smoothing,
                    std::uint64_t seed);

using Triple = std::array<std::size_t, 3>;  // (s, a, s')

struct TripleChain {
  MarkovChain chain;
  std::vector<Triple> triples;
};

/// Chain on the triples (s, a, s') with positive probability.
TripleChain induced_chain(const MDP& mdp, const Policy& policy);

struct AppAgent {
  OperatorSpec op;
  MarkovChain chain;
  std::vector<Triple> triples;
};

/// Linear TD(0): A(X) = phi(s)(gamma phi(s') - phi(s))^T, b(X) = R(s, a) phi(s),
/// exposed as F = -A theta - b so the engine's minus update is the TD update.
AppAgent td0_operator(const MDP& mdp, const Policy& policy, const FeatureMap& features);

/// Q-learning with linear features, exposed as the negated mapping
/// G = -phi(s, a)[R + gamma max_a' phi(s', a')^T theta - phi(s, a)^T theta].
/// Ties in the max resolve to the lowest action index.
AppAgent q_learning_operator(const MDP& mdp, const Policy& behavior, const FeatureMap& features);

Federation make_app_federation(std::vector<AppAgent> agents, const FederationOptions& options = {});

/// Direct solve of sum_i (a_mean_i theta + b_mean_i) = 0.
Vector td_fixed_point(const Federation& federation);

/// Damped mean-field iteration; AssumptionFailed unless the federation passed
/// the monotonicity gate.
Vector q_fixed_point_oracle(const Federation& federation);

}  // namespace localsa
