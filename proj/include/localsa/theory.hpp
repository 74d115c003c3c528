#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "localsa/local_sa.hpp"

namespace localsa {

struct BoundParams {
  double B = 0.0;
  double L = 0.0;
  double mu = 0.0;
  std::size_t N = 1;
  std::size_t H = 1;
  double C = 0.0;  // geometric mixing constant
  double theta_star_norm = 0.0;
  TauFn tau_fn;
};

BoundParams make_bound_params(const Federation& federation, std::size_t H, double C, TauFn tau_fn);

struct Violation {
  std::size_t k = 0;
  std::size_t agent = 0;
  std::size_t t = 0;
  std::string what;
  double lhs = 0.0;
  double rhs = 0.0;
};

/// Outcome of one inequality monitor. `worst_margin` is min(rhs - lhs) over
/// all checks, so a negative value means at least one violation.
struct CheckReport {
  std::string name;
  std::size_t total_checks = 0;
  std::size_t violations = 0;
  double worst_margin = 0.0;
  bool statistical = false;
  std::vector<Violation> details;  // first kMaxDetails violations
  std::map<std::string, double> info;

  static constexpr std::size_t kMaxDetails = 50;

  bool passed() const noexcept { return violations == 0; }
  /// Counts a check; `lhs <= rhs` up to a 1e-12 relative rounding allowance.
  void record(double lhs, double rhs, std::size_t k, std::size_t agent, std::size_t t,
              const char* what);
};

/// Shared factor B^2 H + 9 + 3(19L + 6B) B H of both theorems.
double theorem_factor(const BoundParams& p);

/// Constant-step bound on E||theta_bar^{k+1} - theta*||^2, valid for k >= tau(alpha).
double bound_constant_step(std::size_t k, double alpha, const BoundParams& params, double E_tau);

/// Harmonic-step bound on E||theta_bar^{k+1} - theta*||^2, valid for k >= K*.
double bound_timevarying(std::size_t k, double alpha0, std::size_t K_star, const BoundParams& params,
                         double E_Kstar);

struct MonitorOptions {
  SampleIndexing indexing = SampleIndexing::Fresh;
  std::size_t first_round = 0;  // e.g. K* for harmonic steps
};

/// Per (i, k, t): ||theta_i|| <= 2||bar|| + 2BH a_k and ||theta_i - bar|| <= 2BH a_k (||bar|| + 1),
/// with a_k the round-level step.
CheckReport check_iterate_bounds(const Trajectory& trajectory, const BoundParams& params,
                                 const StepSchedule& schedule, const MonitorOptions& options = {});

/// Per k >= tau: ||bar^k - bar^{k-tau}|| <= 12BH w (||bar^k|| + 1) and the squared form, where
/// w = alpha tau(alpha) for constant steps and the trailing window sum for harmonic steps.
CheckReport check_consensus_drift(const Trajectory& trajectory, const BoundParams& params,
                                  const StepSchedule& schedule, const MonitorOptions& options = {});

inline constexpr std::size_t kMixingBiasExtraSteps = 20;

/// For every start state and k in [tau(alpha), tau(alpha) + 20]: each coordinate of
/// E[F(theta, X^k) | X^0] - F(theta) is at most alpha(||theta|| + 1) in absolute value.
/// The Euclidean form is counted in info["euclidean_violations"].
CheckReport check_mixing_bias(const OperatorSpec& op, const MarkovChain& chain, const Vector& theta,
                              double alpha);

/// Monte-Carlo estimate of the Markov-noise bias at round k against its printed bound.
/// Constant schedules use the constant-step form; harmonic ones the weighted form.
CheckReport check_bias_bound_mc(const Federation& federation, const AlgorithmConfig& config,
                                const BoundParams& params, std::size_t k, std::size_t trials,
                                std::uint64_t seed);

}  // namespace localsa
