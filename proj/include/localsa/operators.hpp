#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "localsa/markov_chain.hpp"

namespace localsa {

enum class OperatorKind { Linear, Nonlinear };

/// Nonlinear sample operator: writes F(theta; x) into `out` (length dim).
using OperatorFn = std::function<void(const double* theta, std::size_t x, double* out)>;

/// Sampled operator F(theta; x) over a finite state space.
///
/// Linear operators store A(x), b(x) with F(theta; x) = -A(x) theta - b(x).
/// Nonlinear operators wrap a callable and may carry an analytic Lipschitz
/// bound (0 when none is known).
class OperatorSpec {
 public:
  static OperatorSpec linear(std::vector<Matrix> a, std::vector<Vector> b);
  static OperatorSpec nonlinear(std::size_t dim, std::size_t n_states, OperatorFn fn,
                                double lipschitz_bound = 0.0);

  std::size_t dim() const noexcept { return dim_; }
  std::size_t n_states() const noexcept { return n_states_; }
  OperatorKind kind() const noexcept { return kind_; }
  bool is_linear() const noexcept { return kind_ == OperatorKind::Linear; }
  double lipschitz_bound() const noexcept { return lipschitz_bound_; }

  /// Linear only.
  const Matrix& a(std::size_t x) const;
  const Vector& b(std::size_t x) const;

  Vector eval(const Vector& theta, std::size_t x) const;

  /// Allocation-free evaluation used by the engine's inner loop.
  /// Row-major A(x) and b(x) blocks; linear operators only.
  const double* flat_a(std::size_t x) const noexcept { return flat_a_.data() + x * dim_ * dim_; }
  const double* flat_b(std::size_t x) const noexcept { return flat_b_.data() + x * dim_; }

  void eval_into(const double* theta, std::size_t x, double* out) const {
    if (kind_ == OperatorKind::Linear) {
      const double* a = flat_a_.data() + x * dim_ * dim_;
      const double* b = flat_b_.data() + x * dim_;
      for (std::size_t r = 0; r < dim_; ++r) {
        double acc = b[r];
        const double* row = a + r * dim_;
        for (std::size_t c = 0; c < dim_; ++c) acc += row[c] * theta[c];
        out[r] = -acc;
      }
    } else {
      fn_(theta, x, out);
    }
  }

 private:
  OperatorSpec() = default;

  OperatorKind kind_ = OperatorKind::Linear;
  std::size_t dim_ = 0;
  std::size_t n_states_ = 0;
  double lipschitz_bound_ = 0.0;
  std::vector<Matrix> a_;
  std::vector<Vector> b_;
  std::vector<double> flat_a_;  // row-major A(x), concatenated over x
  std::vector<double> flat_b_;
  OperatorFn fn_;
};

/// F_i(theta) = sum_x pi(x) F_i(theta; x).
Vector mean_operator(const OperatorSpec& op, const Vector& pi, const Vector& theta);

/// Mean matrices for a linear op: F(theta) = -a_mean theta - b_mean.
struct LinearMean {
  Matrix a_mean;
  Vector b_mean;
};
LinearMean linear_mean(const OperatorSpec& op, const Vector& pi);

struct LipschitzReport {
  double L_hat = 0.0;   // per-sample constant (max over states)
  double L_mean = 0.0;  // constant of the mean field
  bool empirical = false;
  bool pass = false;
};

struct MonotonicityReport {
  double mu_hat = 0.0;
  bool empirical = false;
  bool pass = false;
};

/// Probes draw theta, omega with i.i.d. N(0, probe_scale^2) coordinates.
inline constexpr double kProbeScale = 3.0;

LipschitzReport verify_lipschitz(const OperatorSpec& op, const Vector& pi, std::size_t probes,
                                 RandomStream& rng);
MonotonicityReport verify_strong_monotonicity(const OperatorSpec& op, const Vector& pi,
                                              std::size_t probes, RandomStream& rng);

struct OperatorConstants {
  double L = 0.0;      // worst per-sample Lipschitz constant over agents
  double mu = 0.0;     // smallest per-agent monotonicity constant
  double B = 0.0;      // growth constant used by every bound: max(B0, L)
  double B0 = 0.0;     // max_i max_x ||F_i(0, x)||
  double theta_star_norm = 0.0;
  double sum_mu = 0.0;  // monotonicity constant of the sum F = sum_i F_i
  bool empirical = false;
};

struct Federation {
  std::vector<OperatorSpec> ops;
  std::vector<MarkovChain> chains;
  std::vector<Vector> pis;  // stationary distribution per agent
  OperatorConstants constants;
  Vector theta_star;

  std::size_t N() const noexcept { return ops.size(); }
  std::size_t dim() const noexcept { return ops.empty() ? 0 : ops.front().dim(); }

  /// Sum of mean operators at theta.
  Vector total_mean(const Vector& theta) const;
};

struct FederationOptions {
  std::size_t probes = 2000;
  std::uint64_t probe_seed = 0x5eed;
  bool require_monotone = true;
};

/// Validates shapes, computes stationary distributions, constants and the root.
/// Throws AssumptionFailed when an agent fails the monotonicity check and
/// `require_monotone` is set.
Federation build_federation(std::vector<OperatorSpec> ops, std::vector<MarkovChain> chains,
                            const FederationOptions& options = {});

/// max over agents and states of ||F_i(0, x)||.
double estimate_B(const Federation& federation);

/// Linear: direct solve of sum_i (a_mean_i theta + b_mean_i) = 0.
/// Nonlinear: damped iteration theta <- theta - (eta/N) sum_i F_i(theta), eta = mu/L^2.
Vector solve_root(const Federation& federation);

inline constexpr std::size_t kRootIterationCap = 1'000'000;
inline constexpr double kRootTolerance = 1e-10;

}  // namespace localsa
